"""Gaussian-kernel KDE with cross-validated bandwidth.

The estimator z-scores features and uses one isotropic bandwidth in
standardized space; ``kde_logpdf`` folds the standardization Jacobian
back in, so returned values are densities in original units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels

__all__ = ["KdeModel", "DEFAULT_BANDWIDTH_GRID", "fit_kde_cv", "kde_logpdf"]

# 20 log-spaced trial bandwidths in standardized units
DEFAULT_BANDWIDTH_GRID = tuple(
    float(b) for b in np.logspace(np.log10(0.02), np.log10(2.0), 20)
)


@dataclass(frozen=True, eq=False)
class KdeModel:
    """Equal-weight Gaussian mixture over standardized sample points."""

    points: np.ndarray
    bandwidth: float
    mean: np.ndarray
    sd: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        mean = np.asarray(self.mean, dtype=np.float64).ravel()
        sd = np.asarray(self.sd, dtype=np.float64).ravel()
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("points must be a non-empty m x d matrix")
        if mean.shape != (pts.shape[1],) or sd.shape != (pts.shape[1],):
            raise ValueError("standardizer shape must match feature count")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if np.any(sd <= 0):
            raise ValueError("standardizer sds must be positive")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "sd", sd)
        object.__setattr__(self, "bandwidth", float(self.bandwidth))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def to_dict(self) -> dict:
        return {
            "kind": "kde",
            "bandwidth": self.bandwidth,
            "mean": self.mean.tolist(),
            "sd": self.sd.tolist(),
            "points": self.points.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KdeModel":
        return cls(
            points=np.asarray(d["points"], dtype=np.float64),
            bandwidth=float(d["bandwidth"]),
            mean=np.asarray(d["mean"], dtype=np.float64),
            sd=np.asarray(d["sd"], dtype=np.float64),
        )


def _standardize_stats(x: np.ndarray):
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    # constant columns leave summation dust ~1e-14 in std, so test relative to scale
    if np.any(sd <= 1e-8 * (1.0 + np.abs(mean))):
        raise ValueError("degenerate feature: zero variance in sample")
    return mean, sd


def fit_kde_cv(
    samples: np.ndarray,
    grid=None,
    folds: int = 5,
    seed: int = 0,
    use_numba: bool | None = None,
) -> KdeModel:
    """Select the bandwidth maximizing mean held-out log-likelihood.

    Folds come from one seeded shuffle; ties between bandwidths go to
    the smaller one.  The returned model holds the full standardized
    sample.
    """
    x = np.ascontiguousarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("samples must be an n x d matrix")
    n = x.shape[0]
    if n < 10:
        raise ValueError("need at least 10 samples to cross-validate")
    if folds < 2 or folds > n:
        raise ValueError("folds must be in [2, n]")
    grid = DEFAULT_BANDWIDTH_GRID if grid is None else tuple(float(b) for b in grid)
    if len(grid) == 0 or any(not b > 0 for b in grid):
        raise ValueError("bandwidth grid must be non-empty and positive")
    grid = tuple(sorted(grid))

    mean, sd = _standardize_stats(x)
    z = (x - mean) / sd

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    parts = np.array_split(perm, folds)

    # Jacobian term is bandwidth-independent, so held-out scores use
    # standardized-space log-likelihoods directly.
    scores = np.zeros(len(grid))
    for part in parts:
        held = z[part]
        mask = np.ones(n, dtype=bool)
        mask[part] = False
        train = z[mask]
        for gi, b in enumerate(grid):
            ll = _kernels.kde_logpdf(train, held, b, use_numba=use_numba)
            scores[gi] += float(np.mean(ll)) / folds
    if not np.any(np.isfinite(scores)):
        raise ValueError("all bandwidths scored non-finite held-out log-likelihood")
    best = int(np.argmax(scores))  # first max wins: smallest bandwidth on ties
    return KdeModel(points=z, bandwidth=grid[best], mean=mean, sd=sd)


def kde_logpdf(
    m: KdeModel, x: np.ndarray, use_numba: bool | None = None
) -> np.ndarray | float:
    """Log-density at ``x`` in original units (exact log-sum-exp).

    Accepts one point (d,) or a batch (n, d); scalar in, scalar out.
    """
    q = np.asarray(x, dtype=np.float64)
    single = q.ndim == 1
    if single:
        q = q[None, :]
    if q.ndim != 2 or q.shape[1] != m.dim:
        raise ValueError("query width must match the fitted dimension")
    zq = (q - m.mean) / m.sd
    ll = _kernels.kde_logpdf(m.points, zq, m.bandwidth, use_numba=use_numba)
    ll = ll - float(np.sum(np.log(m.sd)))
    return float(ll[0]) if single else ll
