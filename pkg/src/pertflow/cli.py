"""Command-line entry point: ``pertflow {synth,train,sample,eval}``.

Every command writes into its own run directory and finishes by writing
``run.json``, a manifest with the config hash, seed, inputs, outputs and
the SHA-256 of every artifact.  Relative ``--out`` paths are resolved
against ``$PERTFLOW_OUTPUT_ROOT`` when it is set.

Exit codes: 0 success, 2 user or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from .data import (Condition, PerturbDataset, SynthSpec, check_dataset_invariants, split_combo,
                   split_covariate_transfer, synth_generate)
from .errors import ConfigurationError, NumericalError, PertFlowError
from .flow import FlowConfig, train
from .metrics import evaluate, linear_additive_dataset, pca_scatter_rows
from .models import MODEL_KINDS, FlowModel, build_model
from .sampler import SamplerConfig, sample_conditions

log = logging.getLogger("pertflow")

OUTPUT_ROOT_ENV = "PERTFLOW_OUTPUT_ROOT"
MANIFEST = "run.json"


class UsageError(PertFlowError):
    pass


# ---------------------------------------------------------------- helpers

def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def resolve_out(out: str) -> Path:
    p = Path(out)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return p if p.is_absolute() or not root else Path(root) / p


def prepare_run_dir(out: str, force: bool) -> Path:
    path = resolve_out(out)
    if path.exists() and any(path.iterdir()):
        if not force:
            raise UsageError(f"run directory {path} already exists; pass --force to overwrite")
        shutil.rmtree(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create run directory {path}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise UsageError(f"run directory {path} is not writable")
    return path


def write_manifest(run_dir: Path, command: str, seed: int | None, config: dict, inputs: dict, started: float):
    """Checksum every file under ``run_dir`` and write the manifest atomically."""
    files = sorted(p for p in run_dir.rglob("*") if p.is_file() and p.name != MANIFEST)
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "seed": seed,
        "config_hash": config_hash(config),
        "config": config,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "output": str(run_dir),
        "wall_clock_seconds": time.time() - started,
        "checksums": {str(p.relative_to(run_dir)): sha256_file(p) for p in files},
    }
    tmp = run_dir / (MANIFEST + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    os.replace(tmp, run_dir / MANIFEST)
    return manifest


def verify_manifest(run_dir) -> list[str]:
    """Artifacts whose checksum no longer matches (empty when intact)."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / MANIFEST).read_text())
    bad = []
    for rel, digest in manifest["checksums"].items():
        p = run_dir / rel
        if not p.is_file() or sha256_file(p) != digest:
            bad.append(rel)
    return bad


def _load_dataset(path) -> PerturbDataset:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"dataset directory not found: {p}")
    return PerturbDataset.load(p)


def _parse_condition(text: str, ds_vocab: tuple[list, list]) -> Condition:
    perts, covs = ds_vocab
    if "/" not in text:
        raise UsageError(f"condition {text!r} must look like 'covariate/p1+p2' or 'covariate/control'")
    cov, rest = text.split("/", 1)
    names = () if rest in ("", "control") else tuple(rest.split("+"))
    unknown = [n for n in names if n not in perts] + ([cov] if cov not in covs else [])
    if unknown:
        raise UsageError(f"unknown condition {text!r}: {unknown} not in vocabulary")
    return Condition(cov, names)


# --------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    started = time.time()
    config = _read_json(args.config)
    gen = dict(config)
    split_cfg = gen.pop("split", None)
    spec = SynthSpec.from_dict(gen)
    run_dir = prepare_run_dir(args.out, args.force)
    ds = synth_generate(spec, args.seed)
    if split_cfg:
        task = split_cfg.get("task", "covariate_transfer")
        kw = {"holdout_fraction": split_cfg.get("holdout_fraction", 0.5),
              "seed": split_cfg.get("seed", args.seed), "val_fraction": split_cfg.get("val_fraction", 0.0)}
        if task == "covariate_transfer":
            ds = split_covariate_transfer(ds, **kw)
        elif task == "combo":
            ds = split_combo(ds, **kw)
        else:
            raise ConfigurationError(f"unknown split task {task!r}")
    problems = check_dataset_invariants(ds)
    if problems:
        raise ConfigurationError("generated dataset violates invariants: " + "; ".join(problems))
    ds.save(run_dir / "dataset")
    write_manifest(run_dir, "synth", args.seed, config, {"config": args.config}, started)
    print(f"wrote {ds.n_cells} cells x {ds.n_genes} genes to {run_dir / 'dataset'}")
    return 0


def cmd_train(args) -> int:
    started = time.time()
    config = _read_json(args.config)
    kind = config.get("model_type", config.get("kind"))
    if kind not in MODEL_KINDS:
        raise ConfigurationError(f"config must name model_type in {MODEL_KINDS}, got {kind!r}")
    ds = _load_dataset(args.dataset)
    flow_cfg = FlowConfig.from_dict(config)
    epochs = int(config.get("epochs", 1))
    max_samples = config.get("max_samples")
    run_dir = prepare_run_dir(args.out, args.force)
    if args.init:
        model = FlowModel.load(args.init)
    else:
        model = build_model(kind, ds, config, args.seed)
    rng = np.random.default_rng(args.seed)
    try:
        result = train(model, ds, flow_cfg, epochs, rng, max_samples=max_samples)
    except NumericalError as exc:
        write_manifest(run_dir, "train", args.seed, config, {"dataset": args.dataset}, started)
        raise NumericalError(f"training diverged at step {exc.step}: {exc}", step=exc.step) from None
    model.save(run_dir / "checkpoint", {"seed": args.seed, "config_hash": config_hash(config),
                                        "steps": result.steps, "samples_seen": result.samples_seen})
    result.write_csv(run_dir / "loss.csv")
    write_manifest(run_dir, "train", args.seed, config, {"dataset": args.dataset, "init": args.init or ""}, started)
    last = f"{result.losses[-1]:.4g}" if result.losses else "n/a"
    print(f"trained {kind}: {result.steps} steps, {result.samples_seen} samples, final loss {last}")
    return 0


def cmd_sample(args) -> int:
    started = time.time()
    model = FlowModel.load(args.checkpoint)
    ds = _load_dataset(args.dataset) if args.dataset else None
    vocab = (model.cond_encoder.perturbations, model.cond_encoder.covariates)
    if args.conditions == "all-test":
        if ds is None:
            raise UsageError("--conditions all-test needs --dataset")
        conditions = ds.unique_conditions("test")
        if not conditions:
            raise UsageError("dataset has no test conditions")
    else:
        p = Path(args.conditions)
        if not p.is_file():
            raise UsageError(f"conditions file not found: {p}")
        lines = [ln.strip() for ln in p.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
        conditions = [_parse_condition(ln, vocab) for ln in lines]
    if model.source == "control_cells" and ds is None:
        raise UsageError(f"{model.kind} samples from control cells; pass --dataset")
    w = 1.0 if args.conditional_only else args.cfg
    cfg = SamplerConfig(steps=args.steps, cfg_weight=w, num_samples=args.n, clamp=args.clamp)
    run_dir = prepare_run_dir(args.out, args.force)
    gen = sample_conditions(model, conditions, cfg, np.random.default_rng(args.seed), ds)
    gen.save(run_dir / "generated")
    settings = {"steps": cfg.steps, "cfg_weight": cfg.cfg_weight, "n": cfg.num_samples, "clamp": cfg.clamp,
                "conditions": [c.key for c in conditions]}
    write_manifest(run_dir, "sample", args.seed, settings,
                   {"checkpoint": args.checkpoint, "dataset": args.dataset or ""}, started)
    print(f"sampled {gen.n_cells} cells for {len(conditions)} conditions into {run_dir / 'generated'}")
    return 0


def cmd_eval(args) -> int:
    started = time.time()
    gen = _load_dataset(args.generated)
    truth = _load_dataset(args.truth)
    if list(gen.genes) != list(truth.genes):
        raise UsageError("generated and truth datasets have different gene lists")
    bandwidth = "median" if args.bandwidth is None else args.bandwidth
    run_dir = prepare_run_dir(args.out, args.force)
    report = evaluate(gen, truth, k=args.k, q=args.pcs, bandwidth=bandwidth)
    report.write_csv(run_dir / "metrics.csv")
    summary = {"model": report.summary()}
    generated = {"model": gen}
    if args.baseline == "linear_additive":
        conds = gen.unique_conditions()
        n = max(1, int(np.bincount([conds.index(c) for c in gen.conditions]).min()))
        base = linear_additive_dataset(truth, conds, n, args.seed)
        base_report = evaluate(base, truth, k=args.k, q=args.pcs, bandwidth=bandwidth)
        base_report.write_csv(run_dir / "metrics_linear_additive.csv")
        summary["linear_additive"] = base_report.summary()
        generated["linear_additive"] = base
    tmp = run_dir / "summary.json.tmp"
    tmp.write_text(json.dumps(summary, indent=2, sort_keys=True))
    os.replace(tmp, run_dir / "summary.json")
    with open(run_dir / "pca_scatter.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["condition", "source", "pc1", "pc2"])
        for key, source, *z in pca_scatter_rows(truth, generated):
            w.writerow([key, source, *(repr(v) for v in z)])
    settings = {"k": args.k, "pcs": args.pcs, "bandwidth": bandwidth, "baseline": args.baseline, "seed": args.seed}
    write_manifest(run_dir, "eval", args.seed, settings, {"generated": args.generated, "truth": args.truth}, started)
    agg = report.aggregate()
    print("  ".join(f"{k}={v:.4g}" for k, v in agg.items() if v is not None))
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pertflow", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--out", required=True, help="run directory (relative paths honour $%s)" % OUTPUT_ROOT_ENV)
        p.add_argument("--force", action="store_true", help="overwrite an existing run directory")
        if seed:
            p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a flow model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--init", help="start from this checkpoint instead of a fresh model")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate cells from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--conditions", default="all-test", help="file with one 'cov/p1+p2' per line, or all-test")
    p.add_argument("--dataset", help="dataset for all-test and for control-cell sources")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--cfg", type=float, default=1.0, help="guidance weight w")
    p.add_argument("--conditional-only", action="store_true", help="skip guidance (conditional velocity only)")
    p.add_argument("--n", type=int, default=1000, help="cells per condition")
    p.add_argument("--clamp", action="store_true", help="clip generated expression at zero")
    common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score generated cells against held-out truth")
    p.add_argument("--generated", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--k", type=int, default=50, help="DEG count")
    p.add_argument("--pcs", type=int, default=30, help="PCA dimension for mmd_pca")
    p.add_argument("--bandwidth", type=float, default=None, help="fixed RBF bandwidth (default: median heuristic)")
    p.add_argument("--baseline", choices=["none", "linear_additive"], default="none")
    common(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (PertFlowError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
