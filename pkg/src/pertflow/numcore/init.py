"""Parameter initializers (fan-in scaled uniform, as in common deep-learning defaults)."""

import numpy as np


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def dense(rng, n_in: int, n_out: int, zero: bool = False):
    if zero:
        return np.zeros((n_in, n_out)), np.zeros(n_out)
    return uniform_fan_in(rng, (n_in, n_out), n_in), uniform_fan_in(rng, (n_out,), n_in)


def conv(rng, c_in: int, c_out: int, k: int, zero: bool = False):
    if zero:
        return np.zeros((c_out, c_in, k)), np.zeros(c_out)
    fan_in = c_in * k
    return uniform_fan_in(rng, (c_out, c_in, k), fan_in), uniform_fan_in(rng, (c_out,), fan_in)
