"""
Independent reference samplers for marginal-law comparisons.

Both oracles build Brownian motion directly as a cumulative sum of
Gaussian increments, on a random stream disjoint from the edge streams.
"""

import math

import numpy as np

# Top counter word reserved for oracle streams (edge streams use small edge indices)
_ORACLE_WORD = np.uint64(1 << 63)

_CHUNK = 1000


def _oracle_stream(seed: int, stream: int) -> np.random.Generator:
    counter = np.array([0, 0, stream, _ORACLE_WORD], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=seed, counter=counter))


def _brownian_paths(rng: np.random.Generator, n: int, n_steps: int, dt: float) -> np.ndarray:
    """Brownian paths on the grid, shape (n, n_steps + 1), started at 0."""
    out = np.zeros((n, n_steps + 1))
    np.cumsum(rng.normal(scale=math.sqrt(dt), size=(n, n_steps)), axis=1, out=out[:, 1:])
    return out


def brownian_marginal(t: float, n: int, dt: float = 1e-3, seed: int = 0) -> np.ndarray:
    """
    Samples of W(t) for standard Brownian motion simulated on a dt grid.

    Args:
        t: Time.
        n: Number of samples.
        dt: Grid step.
        seed: Oracle seed.

    Returns:
        np.ndarray: n samples.
    """
    n_steps = max(1, int(round(t / dt)))
    rng = _oracle_stream(seed, 0)
    samples = [
        _brownian_paths(rng, min(_CHUNK, n - lo), n_steps, t / n_steps)[:, -1]
        for lo in range(0, n, _CHUNK)
    ]
    return np.concatenate(samples) if samples else np.empty(0)


def skew_bm_flip_sampler(p: float, t: float, n: int, dt: float = 1e-3, seed: int = 0) -> np.ndarray:
    """
    Skew Brownian motion at time t by excursion sign flipping.

    Each excursion of |W| away from zero gets an independent sign, + with
    probability p. Excursions are delimited by sign changes of W on the grid.

    Args:
        p: Probability of the positive side.
        t: Time.
        n: Number of samples.
        dt: Grid step.
        seed: Oracle seed.

    Returns:
        np.ndarray: n samples of the signed value at t.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    n_steps = max(1, int(round(t / dt)))
    rng = _oracle_stream(seed, 1)
    samples = []
    for lo in range(0, n, _CHUNK):
        size = min(_CHUNK, n - lo)
        w = _brownian_paths(rng, size, n_steps, t / n_steps)
        crossings = np.cumsum(w[:, 1:] * w[:, :-1] < 0, axis=1)
        excursion = crossings[:, -1]
        signs = np.where(rng.random((size, int(excursion.max()) + 1)) < p, 1.0, -1.0)
        samples.append(signs[np.arange(size), excursion] * np.abs(w[:, -1]))
    return np.concatenate(samples) if samples else np.empty(0)
