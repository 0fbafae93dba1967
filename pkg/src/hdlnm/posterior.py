"""Simulation from the approximate Gaussian posterior of the coefficients."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .fit import FittedModel, model_design
from .lagdata import TimeSeriesDataset

__all__ = [
    "PosteriorDraws",
    "sample_coefficients",
    "posterior_predictive",
    "functional_interval",
    "write_draws_csv",
    "CHUNK",
]

CHUNK = 1000
CLIP_TOL = 1e-8


@dataclass(frozen=True)
class PosteriorDraws:
    samples: np.ndarray
    seed: int
    model_id: str = ""

    @property
    def n_draws(self) -> int:
        return self.samples.shape[0]


def _root(cov):
    """Symmetric square root factor with small negative eigenvalues clipped."""
    cov = 0.5 * (cov + cov.T)
    ev, U = np.linalg.eigh(cov)
    top = max(ev.max(), 0.0)
    if ev.min() < -CLIP_TOL * top:
        raise np.linalg.LinAlgError("covariance has a significantly negative eigenvalue")
    return U * np.sqrt(np.clip(ev, 0.0, None))


def _streams(seed, n_draws):
    """One child RNG per chunk of draws so results do not depend on threading."""
    n_chunks = -(-n_draws // CHUNK)
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    sizes = [min(CHUNK, n_draws - i * CHUNK) for i in range(n_chunks)]
    return [(np.random.default_rng(c), s) for c, s in zip(children, sizes)]


def sample_coefficients(model: FittedModel, n_draws: int = 1000, seed: int = 0,
                        threads: int = 1) -> PosteriorDraws:
    """Draws from ``N(coef, cov)`` of a fitted model; reproducible per seed."""
    return _sample(model.coef, model.cov, n_draws, seed, threads)


def _sample(mean, cov, n_draws, seed, threads=1):
    mean = np.asarray(mean, dtype=float)
    A = _root(np.asarray(cov, dtype=float))
    p = len(mean)

    def draw(stream):
        rng, size = stream
        return mean + rng.standard_normal((size, p)) @ A.T

    streams = _streams(seed, n_draws)
    if threads > 1 and len(streams) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(draw, streams))
    else:
        parts = [draw(s) for s in streams]
    samples = np.vstack(parts) if parts else np.zeros((0, p))
    return PosteriorDraws(samples=samples, seed=int(seed))


def posterior_predictive(model: FittedModel, data: TimeSeriesDataset, n_draws: int = 1000,
                         seed: int = 0, draws: PosteriorDraws | None = None) -> np.ndarray:
    """Simulated count vectors (``n_draws x n_rows``) from the predictive distribution.

    For every coefficient draw the mean is recomputed and one count vector is
    simulated, keeping smoothing parameters and dispersion at their estimates.
    """
    X, off, _ = model_design(model, data)
    if draws is None:
        draws = sample_coefficients(model, n_draws, seed)
    eta = draws.samples @ X.T
    if off is not None:
        eta = eta + off
    mu = model.family.linkinv(eta)
    # separate stream from the coefficient draws
    rng = np.random.default_rng([int(seed), 1])
    return model.family.sample(mu, rng)


def functional_interval(draws, g, level: float = 0.95):
    """Equal-tailed interval and mean of ``g`` over coefficient draws.

    ``g`` maps an ``(n_draws, p)`` array to ``(n_draws, ...)`` values. Returns
    ``(lo, hi, mean)`` arrays.
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    samples = draws.samples if isinstance(draws, PosteriorDraws) else np.asarray(draws)
    values = np.asarray(g(samples), dtype=float)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(values, [alpha, 1.0 - alpha], axis=0)
    return lo, hi, values.mean(axis=0)


def write_draws_csv(path, matrix, header: str | None = None, column_prefix="v", columns=None):
    """One row per draw; ``header`` is written as a leading ``#`` comment line."""
    matrix = np.atleast_2d(np.asarray(matrix))
    if columns is None:
        columns = [f"{column_prefix}{j}" for j in range(matrix.shape[1])]
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        fh.write(",".join(str(c) for c in columns) + "\n")
        for row in matrix:
            fh.write(",".join(repr(float(v)) if not float(v).is_integer() else str(int(v))
                              for v in row) + "\n")
