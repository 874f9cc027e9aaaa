import json

import numpy as np
import pytest

from pertflow.cli import MANIFEST, OUTPUT_ROOT_ENV, main, verify_manifest
from pertflow.data import PerturbDataset, check_dataset_invariants
from pertflow.metrics import MetricsReport
from pertflow.models import FlowModel

SYNTH = {"n_genes": 6, "covariates": ["a", "b"], "perturbations": ["p0", "p1", "p2"], "cells_per_condition": 12,
         "split": {"task": "covariate_transfer", "holdout_fraction": 0.34, "seed": 0}}
TRAIN = {"model_type": "primeflow_mlp", "hidden_dim": 8, "batch_size": 8, "epochs": 1, "learning_rate": 1e-3}


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


def checksums(run_dir):
    return json.loads((run_dir / MANIFEST).read_text())["checksums"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("synth", "--config", write(root / "synth.json", SYNTH), "--out", root / "synth", "--seed", 3) == 0
    dataset = root / "synth" / "dataset"
    cfg = write(root / "train.json", TRAIN)
    assert run("train", "--dataset", dataset, "--config", cfg, "--out", root / "train") == 0
    ckpt = root / "train" / "checkpoint"
    assert run("sample", "--checkpoint", ckpt, "--dataset", dataset, "--steps", 5, "--n", 20,
               "--out", root / "sample") == 0
    return root, dataset, ckpt


def test_synth_deterministic_and_valid(pipeline, tmp_path):
    root, dataset, _ = pipeline
    assert run("synth", "--config", root / "synth.json", "--out", tmp_path / "again", "--seed", 3) == 0
    assert checksums(tmp_path / "again") == checksums(root / "synth")
    assert verify_manifest(root / "synth") == []
    assert check_dataset_invariants(PerturbDataset.load(dataset)) == []
    manifest = json.loads((root / "synth" / MANIFEST).read_text())
    assert manifest["seed"] == 3 and manifest["command"] == "synth" and len(manifest["config_hash"]) == 64


def test_synth_missing_key_names_it(tmp_path, capsys):
    cfg = {k: v for k, v in SYNTH.items() if k != "cells_per_condition"}
    assert run("synth", "--config", write(tmp_path / "c.json", cfg), "--out", tmp_path / "o") == 2
    assert "cells_per_condition" in capsys.readouterr().err


def test_bad_json_and_unknown_split(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    assert run("synth", "--config", tmp_path / "bad.json", "--out", tmp_path / "o1") == 2
    cfg = dict(SYNTH, split={"task": "nonsense"})
    assert run("synth", "--config", write(tmp_path / "c.json", cfg), "--out", tmp_path / "o2") == 2
    assert run("synth", "--config", tmp_path / "missing.json", "--out", tmp_path / "o3") == 2


def test_run_directory_needs_force(pipeline, tmp_path):
    root, _, _ = pipeline
    cfg = root / "synth.json"
    assert run("synth", "--config", cfg, "--out", tmp_path / "r") == 0
    assert run("synth", "--config", cfg, "--out", tmp_path / "r") == 2
    assert run("synth", "--config", cfg, "--out", tmp_path / "r", "--force") == 0


def test_output_root_env(pipeline, tmp_path, monkeypatch):
    root, _, _ = pipeline
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    assert run("synth", "--config", root / "synth.json", "--out", "relative/run") == 0
    assert (tmp_path / "relative" / "run" / MANIFEST).is_file()


def test_train_zero_epochs_equals_init(pipeline, tmp_path):
    root, dataset, _ = pipeline
    cfg = write(tmp_path / "t.json", dict(TRAIN, epochs=0))
    assert run("train", "--dataset", dataset, "--config", cfg, "--out", tmp_path / "t", "--seed", 4) == 0
    from pertflow.models import build_model
    fresh = build_model("primeflow_mlp", PerturbDataset.load(dataset), dict(TRAIN, epochs=0), 4)
    loaded = FlowModel.load(tmp_path / "t" / "checkpoint")
    for name, value in fresh.params.state().items():
        assert np.array_equal(loaded.params[name].data, value)


def test_train_resume_without_steps_is_bitwise(pipeline, tmp_path):
    root, dataset, ckpt = pipeline
    cfg = write(tmp_path / "t.json", dict(TRAIN, epochs=0))
    assert run("train", "--dataset", dataset, "--config", cfg, "--init", ckpt, "--out", tmp_path / "r") == 0
    a, b = FlowModel.load(ckpt), FlowModel.load(tmp_path / "r" / "checkpoint")
    assert a.params.state().keys() == b.params.state().keys()
    for name, value in a.params.state().items():
        assert np.array_equal(b.params[name].data, value)


def test_train_rerun_bitwise(pipeline, tmp_path):
    root, dataset, _ = pipeline
    assert run("train", "--dataset", dataset, "--config", root / "train.json", "--out", tmp_path / "t") == 0
    a, b = checksums(root / "train"), checksums(tmp_path / "t")
    assert a == b and "loss.csv" in a


def test_train_unknown_kind_exit_2(pipeline, tmp_path):
    _, dataset, _ = pipeline
    cfg = write(tmp_path / "t.json", dict(TRAIN, model_type="transformer"))
    assert run("train", "--dataset", dataset, "--config", cfg, "--out", tmp_path / "t") == 2


def test_train_nan_exit_3_with_step(pipeline, tmp_path, capsys):
    root, dataset, ckpt = pipeline
    model = FlowModel.load(ckpt)
    for p in model.params.values():
        p.data = np.full(p.data.shape, np.nan)
    model.save(tmp_path / "nan_ckpt")
    code = run("train", "--dataset", dataset, "--config", root / "train.json", "--init", tmp_path / "nan_ckpt",
               "--out", tmp_path / "t")
    assert code == 3
    assert "step 0" in capsys.readouterr().err


def test_sample_cfg_one_equals_conditional_only(pipeline, tmp_path):
    root, dataset, ckpt = pipeline
    common = ["--checkpoint", ckpt, "--dataset", dataset, "--steps", 5, "--n", 20]
    assert run("sample", *common, "--cfg", 1, "--out", tmp_path / "a") == 0
    assert run("sample", *common, "--conditional-only", "--out", tmp_path / "b") == 0
    assert checksums(tmp_path / "a") == checksums(tmp_path / "b") == checksums(root / "sample")


def test_sample_count_and_conditions_file(pipeline, tmp_path):
    _, dataset, ckpt = pipeline
    (tmp_path / "conds.txt").write_text("# two conditions\na/p0\nb/control\n")
    assert run("sample", "--checkpoint", ckpt, "--conditions", tmp_path / "conds.txt", "--steps", 3, "--n", 1000,
               "--out", tmp_path / "s") == 0
    gen = PerturbDataset.load(tmp_path / "s" / "generated")
    keys = [c.key for c in gen.conditions]
    assert gen.n_cells == 2000 and keys.count(keys[0]) == 1000 and len(set(keys)) == 2


def test_sample_unknown_condition_exit_2(pipeline, tmp_path, capsys):
    _, dataset, ckpt = pipeline
    (tmp_path / "conds.txt").write_text("a/p9\n")
    assert run("sample", "--checkpoint", ckpt, "--conditions", tmp_path / "conds.txt", "--out", tmp_path / "s") == 2
    assert "p9" in capsys.readouterr().err


def test_eval_truth_against_itself_is_oracle(pipeline, tmp_path):
    _, dataset, _ = pipeline
    assert run("eval", "--generated", dataset, "--truth", dataset, "--k", 3, "--pcs", 4,
               "--out", tmp_path / "e") == 0
    report = MetricsReport.read_csv(tmp_path / "e" / "metrics.csv")
    for metric in ("mmd_gex", "mmd_pca", "rmse_mean"):
        assert all(abs(v) < 1e-12 for v in report.values(metric))
    assert all(v == 1.0 for v in report.values("deg_recall"))
    for metric in report.metric_names():
        if metric.endswith("_rank"):
            assert all(v in (0.0, None) for v in report.values(metric))
    summary = json.loads((tmp_path / "e" / "summary.json").read_text())
    assert "model" in summary and (tmp_path / "e" / "pca_scatter.csv").is_file()


def test_eval_with_baseline_and_rerun_bitwise(pipeline, tmp_path):
    root, dataset, _ = pipeline
    args = ["eval", "--generated", root / "sample" / "generated", "--truth", dataset, "--k", 3, "--pcs", 4,
            "--baseline", "linear_additive"]
    assert run(*args, "--out", tmp_path / "e1") == 0
    assert run(*args, "--out", tmp_path / "e2") == 0
    assert checksums(tmp_path / "e1") == checksums(tmp_path / "e2")
    summary = json.loads((tmp_path / "e1" / "summary.json").read_text())
    assert set(summary) == {"model", "linear_additive"}
    sources = {line.split(",")[1] for line in (tmp_path / "e1" / "pca_scatter.csv").read_text().splitlines()[1:]}
    assert sources == {"truth", "control", "model", "linear_additive"}


def test_eval_gene_mismatch_exit_2(pipeline, tmp_path):
    _, dataset, _ = pipeline
    ds = PerturbDataset.load(dataset)
    ds.genes = [g + "_x" for g in ds.genes]
    ds.save(tmp_path / "other")
    assert run("eval", "--generated", tmp_path / "other", "--truth", dataset, "--out", tmp_path / "e") == 2


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as info:
        main(["train"])
    assert info.value.code == 2
