"""Bivariate copula families: densities, h-functions, sampling and fitting.

Six families: independence, Gaussian, Clayton, Frank, Gumbel and
Student-t.  Parameters are estimated by inverting the Kendall's-tau
relation of each family; an optional golden-section refinement of the
log-likelihood is used by the vine layer.  The conditional distribution
``h(u | v)`` and its inverse drive conditional-inversion sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.stats import multivariate_normal, multivariate_t, norm, t as student_t

from ._kernels import kendall_tau

FAMILIES = ("independence", "gaussian", "clayton", "frank", "gumbel", "studentt")

# degrees-of-freedom grid for the Student-t profile likelihood
NU_GRID = (2.5, 3.0, 4.0, 5.0, 7.0, 10.0, 15.0, 20.0, 30.0)

# numerically safe parameter ranges (Frank is split by sign around 0)
THETA_BOUNDS = {
    "gaussian": (-0.999, 0.999),
    "studentt": (-0.999, 0.999),
    "clayton": (1e-6, 28.0),
    "frank": (-35.0, 35.0),
    "gumbel": (1.0, 17.0),
}

_EPS = 1e-12


@dataclass(frozen=True)
class BivariateCopula:
    """A fitted pair-copula: family tag plus its parameter(s)."""

    family: str
    theta: float = 0.0
    nu: float | None = None

    def __post_init__(self):
        f = self.family
        if f not in FAMILIES:
            raise ValueError(f"unknown copula family {f!r}")
        th = self.theta
        if f in ("gaussian", "studentt") and not -1.0 < th < 1.0:
            raise ValueError(f"{f} needs -1 < theta < 1, got {th}")
        if f == "studentt" and not (self.nu is not None and self.nu > 2.0):
            raise ValueError("studentt needs nu > 2")
        if f == "clayton" and not th > 0.0:
            raise ValueError("clayton needs theta > 0")
        if f == "gumbel" and not th >= 1.0:
            raise ValueError("gumbel needs theta >= 1")
        if f == "frank" and th == 0.0:
            raise ValueError("frank needs theta != 0 (use independence for the limit)")

    @property
    def n_params(self) -> int:
        if self.family == "independence":
            return 0
        return 2 if self.family == "studentt" else 1

    def to_dict(self) -> dict:
        d = {"family": self.family, "theta": self.theta}
        if self.nu is not None:
            d["nu"] = self.nu
        return d

    @staticmethod
    def from_dict(d: dict) -> "BivariateCopula":
        return BivariateCopula(d["family"], float(d.get("theta", 0.0)), d.get("nu"))


def independence() -> BivariateCopula:
    return BivariateCopula("independence")


def _check_interior(*arrays):
    for a in arrays:
        if np.any(a <= 0.0) or np.any(a >= 1.0):
            raise ValueError("copula arguments must lie strictly inside (0, 1)")


def _as_arrays(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_interior(u, v)
    return u, v


# ---------------------------------------------------------------------------
# Kendall's tau <-> parameter maps
# ---------------------------------------------------------------------------


def _frank_tau(theta: float) -> float:
    """tau(theta) for Frank via the first Debye function (odd in theta)."""
    th = abs(theta)
    if th < 1e-12:
        return 0.0

    def integrand(x):
        return x / math.expm1(x) if x > 0 else 1.0

    debye1 = integrate.quad(integrand, 0.0, th, limit=200)[0] / th
    tau = 1.0 - 4.0 / th * (1.0 - debye1)
    return math.copysign(tau, theta)


def theta_to_tau(family: str, theta: float, nu: float | None = None) -> float:
    """Analytic Kendall's tau implied by a family parameter."""
    if family == "independence":
        return 0.0
    if family in ("gaussian", "studentt"):
        return 2.0 / math.pi * math.asin(theta)
    if family == "clayton":
        return theta / (theta + 2.0)
    if family == "gumbel":
        return 1.0 - 1.0 / theta
    if family == "frank":
        return _frank_tau(theta)
    raise ValueError(f"unknown family {family!r}")


def tau_to_theta(family: str, tau: float) -> float:
    """Invert the tau(theta) relation of a family.

    Frank has no closed form; it is solved by bisection on the Debye
    relation to |tau(theta) - tau| < 1e-10.
    """
    if abs(tau) >= 1.0:
        raise ValueError("|tau| = 1 is a boundary: no admissible parameter")
    if family in ("gaussian", "studentt"):
        return math.sin(math.pi * tau / 2.0)
    if family == "clayton":
        if tau < 0:
            raise ValueError("clayton cannot represent negative dependence")
        return max(2.0 * tau / (1.0 - tau), THETA_BOUNDS["clayton"][0])
    if family == "gumbel":
        if tau < 0:
            raise ValueError("gumbel cannot represent negative dependence")
        return max(1.0 / (1.0 - tau), 1.0)
    if family == "frank":
        if abs(tau) < 1e-9:
            return math.copysign(1e-6, tau if tau != 0 else 1.0)
        lo, hi = 1e-6, THETA_BOUNDS["frank"][1]
        target = abs(tau)
        if _frank_tau(hi) < target:
            return math.copysign(hi, tau)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            val = _frank_tau(mid)
            if abs(val - target) < 1e-10:
                lo = hi = mid
                break
            if val < target:
                lo = mid
            else:
                hi = mid
        return math.copysign(0.5 * (lo + hi), tau)
    raise ValueError(f"family {family!r} has no tau inversion")


# ---------------------------------------------------------------------------
# family maths (vectorized; u, v strictly interior)
# ---------------------------------------------------------------------------


def _gauss_logpdf(rho, u, v):
    x, y = norm.ppf(u), norm.ppf(v)
    r2 = 1.0 - rho * rho
    return -0.5 * np.log(r2) - (rho * rho * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * r2)


def _gauss_h(rho, u, v):
    x, y = norm.ppf(u), norm.ppf(v)
    return norm.cdf((x - rho * y) / math.sqrt(1.0 - rho * rho))


def _gauss_hinv(rho, p, v):
    y = norm.ppf(v)
    x = norm.ppf(p) * math.sqrt(1.0 - rho * rho) + rho * y
    return norm.cdf(x)


def _t_logpdf(rho, nu, u, v):
    x, y = student_t.ppf(u, nu), student_t.ppf(v, nu)
    r2 = 1.0 - rho * rho
    quad = (x * x - 2.0 * rho * x * y + y * y) / (nu * r2)
    out = (
        math.lgamma((nu + 2.0) / 2.0)
        + math.lgamma(nu / 2.0)
        - 2.0 * math.lgamma((nu + 1.0) / 2.0)
        - 0.5 * math.log(r2)
        - (nu + 2.0) / 2.0 * np.log1p(quad)
        + (nu + 1.0) / 2.0 * (np.log1p(x * x / nu) + np.log1p(y * y / nu))
    )
    return out


def _t_h(rho, nu, u, v):
    x, y = student_t.ppf(u, nu), student_t.ppf(v, nu)
    scale = np.sqrt((nu + y * y) * (1.0 - rho * rho) / (nu + 1.0))
    return student_t.cdf((x - rho * y) / scale, nu + 1.0)


def _t_hinv(rho, nu, p, v):
    y = student_t.ppf(v, nu)
    scale = np.sqrt((nu + y * y) * (1.0 - rho * rho) / (nu + 1.0))
    x = student_t.ppf(p, nu + 1.0) * scale + rho * y
    return student_t.cdf(x, nu)


def _clayton_logpdf(th, u, v):
    lu, lv = np.log(u), np.log(v)
    # log(u^-t + v^-t - 1) via a shifted exp to dodge overflow at tiny u, v
    a, b = -th * lu, -th * lv
    m = np.maximum(a, b)
    lsum = m + np.log(np.exp(a - m) + np.exp(b - m) - np.exp(-m))
    return math.log1p(th) - (1.0 + th) * (lu + lv) - (2.0 + 1.0 / th) * lsum


def _clayton_cdf(th, u, v):
    return (u ** (-th) + v ** (-th) - 1.0) ** (-1.0 / th)


def _clayton_h(th, u, v):
    # v^(-t-1) (u^-t + v^-t - 1)^(-1-1/t), factored through v to stay finite
    ratio = (v / u) ** th
    return (ratio + 1.0 - v**th) ** (-(1.0 + th) / th)


def _clayton_hinv(th, p, v):
    inner = p ** (-th / (1.0 + th)) - 1.0 + v**th
    return v * inner ** (-1.0 / th)


def _gumbel_core(th, u, v):
    x, y = -np.log(u), -np.log(v)
    s = x**th + y**th
    return x, y, s


def _gumbel_logpdf(th, u, v):
    x, y, s = _gumbel_core(th, u, v)
    s_pow = s ** (1.0 / th)
    return (
        -s_pow
        + x
        + y
        + (2.0 / th - 2.0) * np.log(s)
        + (th - 1.0) * (np.log(x) + np.log(y))
        + np.log1p((th - 1.0) / s_pow)
    )


def _gumbel_cdf(th, u, v):
    _, _, s = _gumbel_core(th, u, v)
    return np.exp(-(s ** (1.0 / th)))


def _gumbel_h(th, u, v):
    x, y, s = _gumbel_core(th, u, v)
    return np.exp(-(s ** (1.0 / th)) + y + (1.0 / th - 1.0) * np.log(s) + (th - 1.0) * np.log(y))


def _frank_logpdf(th, u, v):
    gu, gv, g1 = np.expm1(-th * u), np.expm1(-th * v), math.expm1(-th)
    denom = -g1 - gu * gv
    return math.log(abs(th)) + math.log(abs(g1)) - th * (u + v) - 2.0 * np.log(np.abs(denom))


def _frank_cdf(th, u, v):
    gu, gv, g1 = np.expm1(-th * u), np.expm1(-th * v), math.expm1(-th)
    return -np.log1p(gu * gv / g1) / th


def _frank_h(th, u, v):
    gu, gv, g1 = np.expm1(-th * u), np.expm1(-th * v), math.expm1(-th)
    return gu * np.exp(-th * v) / (g1 + gu * gv)


def _frank_hinv(th, p, v):
    gv, g1 = np.expm1(-th * v), math.expm1(-th)
    gu = p * g1 / (np.exp(-th * v) - p * gv)
    return -np.log1p(gu) / th


def _bisect_hinv(cop: BivariateCopula, p, v, max_steps: int = 200):
    """Invert h(. | v) = p by bisection; h is monotone increasing in u."""
    p = np.asarray(p, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    lo = np.full(np.broadcast(p, v).shape, _EPS)
    hi = np.full_like(lo, 1.0 - _EPS)
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        too_low = h_function(cop, mid, v) < p
        lo = np.where(too_low, mid, lo)
        hi = np.where(too_low, hi, mid)
        if np.max(hi - lo) < 1e-13:
            return 0.5 * (lo + hi)
    raise RuntimeError(f"h_inverse bisection did not converge in {max_steps} steps")


# ---------------------------------------------------------------------------
# public dispatch
# ---------------------------------------------------------------------------


def pair_logpdf(c: BivariateCopula, u, v):
    u, v = _as_arrays(u, v)
    f, th = c.family, c.theta
    if f == "independence":
        return np.zeros(np.broadcast(u, v).shape)
    if f == "gaussian":
        return _gauss_logpdf(th, u, v)
    if f == "studentt":
        return _t_logpdf(th, c.nu, u, v)
    if f == "clayton":
        return _clayton_logpdf(th, u, v)
    if f == "gumbel":
        return _gumbel_logpdf(th, u, v)
    if f == "frank":
        return _frank_logpdf(th, u, v)
    raise ValueError(f)


def pair_density(c: BivariateCopula, u, v):
    """Copula density c(u, v) on the open unit square."""
    return np.exp(pair_logpdf(c, u, v))


def pair_cdf(c: BivariateCopula, u, v):
    """Copula CDF C(u, v); used mainly as a finite-difference oracle."""
    u, v = _as_arrays(u, v)
    f, th = c.family, c.theta
    if f == "independence":
        return u * v
    if f == "clayton":
        return _clayton_cdf(th, u, v)
    if f == "gumbel":
        return _gumbel_cdf(th, u, v)
    if f == "frank":
        return _frank_cdf(th, u, v)
    cov = np.array([[1.0, th], [th, 1.0]])
    if f == "gaussian":
        pts = np.column_stack([norm.ppf(np.atleast_1d(u)), norm.ppf(np.atleast_1d(v))])
        out = multivariate_normal.cdf(pts, mean=[0.0, 0.0], cov=cov)
    else:
        pts = np.column_stack(
            [student_t.ppf(np.atleast_1d(u), c.nu), student_t.ppf(np.atleast_1d(v), c.nu)]
        )
        out = multivariate_t.cdf(pts, loc=[0.0, 0.0], shape=cov, df=c.nu)
    out = np.asarray(out)
    return out.reshape(np.broadcast(u, v).shape) if out.size > 1 else float(out)


def h_function(c: BivariateCopula, u, v):
    """Conditional distribution h(u | v) = dC(u, v)/dv."""
    u, v = _as_arrays(u, v)
    f, th = c.family, c.theta
    if f == "independence":
        return u * np.ones(np.broadcast(u, v).shape)
    if f == "gaussian":
        return _gauss_h(th, u, v)
    if f == "studentt":
        return _t_h(th, c.nu, u, v)
    if f == "clayton":
        return _clayton_h(th, u, v)
    if f == "gumbel":
        return _gumbel_h(th, u, v)
    if f == "frank":
        return _frank_h(th, u, v)
    raise ValueError(f)


def h_inverse(c: BivariateCopula, p, v):
    """Inverse of :func:`h_function` in its first argument."""
    p, v = _as_arrays(p, v)
    f, th = c.family, c.theta
    if f == "independence":
        return p * np.ones(np.broadcast(p, v).shape)
    if f == "gaussian":
        return np.clip(_gauss_hinv(th, p, v), _EPS, 1.0 - _EPS)
    if f == "studentt":
        return np.clip(_t_hinv(th, c.nu, p, v), _EPS, 1.0 - _EPS)
    if f == "clayton":
        return np.clip(_clayton_hinv(th, p, v), _EPS, 1.0 - _EPS)
    if f == "frank":
        return np.clip(_frank_hinv(th, p, v), _EPS, 1.0 - _EPS)
    return _bisect_hinv(c, p, v)


def loglik(c: BivariateCopula, u, v) -> float:
    return float(np.sum(pair_logpdf(c, u, v)))


def sample_pair(c: BivariateCopula, n: int, seed) -> np.ndarray:
    """n x 2 sample by conditional inversion: u = h^-1(p | v)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    v = np.clip(rng.random(n), _EPS, 1.0 - _EPS)
    p = np.clip(rng.random(n), _EPS, 1.0 - _EPS)
    u = h_inverse(c, p, v)
    return np.column_stack([u, v])


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


def _make(family: str, theta: float, nu: float | None = None) -> BivariateCopula:
    lo, hi = THETA_BOUNDS[family]
    return BivariateCopula(family, float(np.clip(theta, lo, hi)), nu)


def _fit_t_nu(rho: float, u, v) -> tuple[float, float]:
    """Profile the Student-t dof over NU_GRID at fixed rho."""
    best_nu, best_ll = None, -np.inf
    for nu in NU_GRID:
        ll = float(np.sum(_t_logpdf(rho, nu, u, v)))
        if ll > best_ll:
            best_nu, best_ll = nu, ll
    return best_nu, best_ll


def fit_inverse_tau(family: str, pseudo_pair: np.ndarray) -> BivariateCopula:
    """Fit one family by inverting the sample Kendall's tau.

    ``pseudo_pair`` is an n x 2 matrix of pseudo-observations.  For the
    Student-t family the correlation comes from tau and the degrees of
    freedom from a grid profile likelihood.
    """
    uv = np.asarray(pseudo_pair, dtype=np.float64)
    if uv.ndim != 2 or uv.shape[1] != 2:
        raise ValueError("expected an n x 2 pseudo-observation matrix")
    if family == "independence":
        return independence()
    tau = kendall_tau(uv[:, 0], uv[:, 1])
    theta = tau_to_theta(family, tau)
    if family == "studentt":
        rho = float(np.clip(theta, *THETA_BOUNDS["studentt"]))
        nu, _ = _fit_t_nu(rho, uv[:, 0], uv[:, 1])
        return _make("studentt", rho, nu)
    return _make(family, theta)


def _golden_max(fun, lo: float, hi: float, tol: float = 1e-6) -> float:
    """Golden-section maximizer of a unimodal function on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return 0.5 * (a + b)


def fit_mle(family: str, pseudo_pair: np.ndarray) -> tuple[BivariateCopula, float]:
    """Inverse-tau start, then golden-section likelihood refinement.

    Returns the fitted copula and its log-likelihood.  The search
    bracket is the inverse-tau estimate widened by half the admissible
    range, clipped to the family bounds (Frank keeps the sign of tau).
    """
    uv = np.asarray(pseudo_pair, dtype=np.float64)
    if family == "independence":
        return independence(), 0.0
    start = fit_inverse_tau(family, uv)
    u, v = uv[:, 0], uv[:, 1]
    lo, hi = THETA_BOUNDS[family]
    if family == "frank":
        # keep the bracket on one side of the removable singularity at 0
        if start.theta > 0:
            lo = 1e-6
        else:
            hi = -1e-6
    half = 0.5 * (hi - lo)
    b_lo = max(lo, start.theta - half)
    b_hi = min(hi, start.theta + half)

    if family == "studentt":
        nu = start.nu

        def negfree(th):
            return float(np.sum(_t_logpdf(th, nu, u, v)))

        theta = _golden_max(negfree, b_lo, b_hi)
        nu, ll = _fit_t_nu(theta, u, v)
        return _make("studentt", theta, nu), ll

    def objective(th):
        return loglik(_make(family, th), u, v)

    theta = _golden_max(objective, b_lo, b_hi)
    cop = _make(family, theta)
    return cop, loglik(cop, u, v)


# ---------------------------------------------------------------------------
# Kendall matrices and trivariate models
# ---------------------------------------------------------------------------


def kendall_matrix(data: np.ndarray, use_numba: bool | None = None) -> np.ndarray:
    """d x d matrix of pairwise tie-corrected Kendall's tau."""
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("expected an n x d matrix with n >= 2")
    d = x.shape[1]
    out = np.eye(d)
    for i in range(d):
        for j in range(i + 1, d):
            out[i, j] = out[j, i] = kendall_tau(x[:, i], x[:, j], use_numba=use_numba)
    return out


def _project_correlation(mat: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Nearest-by-clipping positive-definite correlation matrix.

    Eigenvalues are clipped at ``floor`` and the diagonal renormalized
    to 1; repeated with a growing floor if renormalization nudges the
    smallest eigenvalue back under it.
    """
    r = np.array(mat, dtype=np.float64)
    clip = floor
    for _ in range(20):
        w = np.linalg.eigvalsh(r)
        if w.min() >= floor and np.allclose(np.diag(r), 1.0, atol=1e-12):
            return r
        w, v = np.linalg.eigh(r)
        a = (v * np.maximum(w, clip)) @ v.T
        scale = np.sqrt(np.diag(a))
        r = a / np.outer(scale, scale)
        np.fill_diagonal(r, 1.0)
        clip *= 1.5
    raise RuntimeError("positive-definite projection failed to converge")


def _check_cube(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 1:
        u = u[None, :]
    if u.ndim != 2 or u.shape[1] != 3:
        raise ValueError("expected points in the open unit cube, shape (n, 3)")
    _check_interior(u)
    return u


@dataclass(frozen=True, eq=False)
class EllipticalCopula3D:
    """Trivariate Gaussian or Student-t copula with full correlation matrix."""

    family: str
    corr: np.ndarray
    nu: float | None = None

    def __post_init__(self):
        if self.family not in ("gaussian", "studentt"):
            raise ValueError("elliptical family must be gaussian or studentt")
        r = np.asarray(self.corr, dtype=np.float64)
        if r.shape != (3, 3) or not np.allclose(r, r.T) or not np.allclose(np.diag(r), 1.0):
            raise ValueError("corr must be a symmetric 3x3 matrix with unit diagonal")
        if np.linalg.eigvalsh(r).min() <= 0:
            raise ValueError("corr must be positive definite")
        if self.family == "studentt" and not (self.nu is not None and self.nu > 2.0):
            raise ValueError("studentt needs nu > 2")
        object.__setattr__(self, "corr", r)

    def to_dict(self) -> dict:
        d = {"family": self.family, "corr": self.corr.tolist()}
        if self.nu is not None:
            d["nu"] = self.nu
        return d

    @staticmethod
    def from_dict(d: dict) -> "EllipticalCopula3D":
        return EllipticalCopula3D(d["family"], np.asarray(d["corr"]), d.get("nu"))


def elliptical_3d_logpdf(c: EllipticalCopula3D, u) -> np.ndarray:
    """Log copula density at interior points u (n x 3)."""
    u = _check_cube(u)
    r = c.corr
    rinv = np.linalg.inv(r)
    _, logdet = np.linalg.slogdet(r)
    if c.family == "gaussian":
        z = norm.ppf(u)
        quad = np.einsum("ni,ij,nj->n", z, rinv - np.eye(3), z)
        return -0.5 * logdet - 0.5 * quad
    nu = c.nu
    x = student_t.ppf(u, nu)
    quad = np.einsum("ni,ij,nj->n", x, rinv, x)
    d = 3
    log_joint = (
        math.lgamma((nu + d) / 2.0)
        - math.lgamma(nu / 2.0)
        - 0.5 * d * math.log(nu * math.pi)
        - 0.5 * logdet
        - (nu + d) / 2.0 * np.log1p(quad / nu)
    )
    log_marg = student_t.logpdf(x, nu).sum(axis=1)
    return log_joint - log_marg


def fit_elliptical_3d(family: str, pseudo: np.ndarray) -> EllipticalCopula3D:
    """Sine-map inverse-tau fit of the correlation matrix, PD-repaired.

    Student-t degrees of freedom maximize the copula log-likelihood
    over NU_GRID at the fixed correlation matrix.
    """
    uv = np.asarray(pseudo, dtype=np.float64)
    taus = kendall_matrix(uv)
    if not np.all(np.isfinite(taus)):
        raise ValueError("non-finite Kendall's tau")
    rho = np.sin(np.pi * taus / 2.0)
    np.fill_diagonal(rho, 1.0)
    rho = _project_correlation(rho)
    if family == "gaussian":
        return EllipticalCopula3D("gaussian", rho)
    if family != "studentt":
        raise ValueError("elliptical family must be gaussian or studentt")
    best_nu, best_ll = None, -np.inf
    for nu in NU_GRID:
        ll = float(np.sum(elliptical_3d_logpdf(EllipticalCopula3D("studentt", rho, nu), uv)))
        if ll > best_ll:
            best_nu, best_ll = nu, ll
    return EllipticalCopula3D("studentt", rho, best_nu)


def sample_elliptical_3d(c: EllipticalCopula3D, n: int, seed) -> np.ndarray:
    """n x 3 pseudo-sample via Cholesky and the marginal CDF transform."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    chol = np.linalg.cholesky(c.corr)
    z = rng.standard_normal((n, 3)) @ chol.T
    if c.family == "gaussian":
        u = norm.cdf(z)
    else:
        w = np.sqrt(c.nu / rng.chisquare(c.nu, n))
        u = student_t.cdf(z * w[:, None], c.nu)
    return np.clip(u, _EPS, 1.0 - _EPS)


@dataclass(frozen=True)
class ArchimedeanCopula3D:
    """Exchangeable trivariate Archimedean copula (single parameter).

    d = 3 needs a completely monotone generator inverse, so theta > 0
    for every family here (Frank's negative branch is bivariate-only).
    """

    family: str
    theta: float

    def __post_init__(self):
        if self.family not in ("clayton", "frank", "gumbel"):
            raise ValueError("trivariate Archimedean family must be clayton, frank or gumbel")
        if self.family == "gumbel":
            if not self.theta >= 1.0:
                raise ValueError("gumbel needs theta >= 1")
        elif not self.theta > 0.0:
            raise ValueError(f"trivariate {self.family} needs theta > 0")

    def to_dict(self) -> dict:
        return {"family": self.family, "theta": self.theta}

    @staticmethod
    def from_dict(d: dict) -> "ArchimedeanCopula3D":
        return ArchimedeanCopula3D(d["family"], float(d["theta"]))


def fit_archimedean_3d(family: str, pseudo: np.ndarray) -> ArchimedeanCopula3D:
    """Single theta from the mean of the three pairwise Kendall's taus."""
    uv = np.asarray(pseudo, dtype=np.float64)
    taus = kendall_matrix(uv)
    mean_tau = float(np.mean(taus[np.triu_indices(3, k=1)]))
    if family == "frank" and mean_tau <= 0:
        raise ValueError("trivariate frank needs positive mean dependence")
    theta = tau_to_theta(family, mean_tau)
    lo, hi = THETA_BOUNDS[family]
    return ArchimedeanCopula3D(family, float(np.clip(theta, max(lo, 1e-6), hi)))


def _clayton_log_s(th, u):
    # log(u1^-t + u2^-t + u3^-t - 2), shifted-exp form
    a = -th * np.log(u)
    m = a.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=-1, keepdims=True) - 2.0 * np.exp(-m)))[..., 0]


def archimedean_3d_logpdf(c: ArchimedeanCopula3D, u) -> np.ndarray:
    """Log density from the third derivative of the generator inverse."""
    u = _check_cube(u)
    th = c.theta
    if c.family == "clayton":
        ls = _clayton_log_s(th, u)
        return (
            math.log1p(th)
            + math.log1p(2.0 * th)
            - (3.0 + 1.0 / th) * ls
            - (1.0 + th) * np.log(u).sum(axis=1)
        )
    if c.family == "gumbel":
        alpha = 1.0 / th
        beta = 1.0 - alpha
        x = -np.log(u)
        s = (x**th).sum(axis=1)
        s_a = s**alpha
        poly = alpha * alpha * s_a * s_a + 3.0 * alpha * beta * s_a + beta * (beta + 1.0)
        return (
            -s_a
            + (alpha - 3.0) * np.log(s)
            + np.log(poly)
            + 2.0 * math.log(th)
            + ((th - 1.0) * np.log(x) + x).sum(axis=1)
        )
    # frank: c = theta^2 (1+g) e^{-theta sum(u)} / ((1-g)^3 expm1(-theta)^2)
    g1 = math.expm1(-th)
    g = -np.prod(np.expm1(-th * u), axis=1) / (g1 * g1)
    return (
        2.0 * math.log(th)
        + np.log1p(g)
        - th * u.sum(axis=1)
        - 3.0 * np.log1p(-g)
        - 2.0 * math.log(abs(g1))
    )


def _gumbel_log_psi2(th, s):
    # log of |psi''(s)| for the Gumbel generator inverse psi(t)=exp(-t^(1/th))
    alpha = 1.0 / th
    s_a = s**alpha
    return -s_a + (alpha - 2.0) * np.log(s) + np.log(alpha) + np.log(alpha * s_a + 1.0 - alpha)


def _sample_archimedean_third(c: ArchimedeanCopula3D, u1, u2, p):
    """Solve psi''(s2 + phi(u3)) / psi''(s2) = p for u3."""
    th = c.theta
    if c.family == "clayton":
        pair = np.stack([u1, u2], axis=-1)
        a = -th * np.log(pair)
        m = a.max(axis=-1)
        ls2 = m + np.log(np.exp(a - m[:, None]).sum(axis=-1) - np.exp(-m))
        q1 = np.expm1(-th / (1.0 + 2.0 * th) * np.log(p))
        a3 = np.logaddexp(ls2 + np.log(q1), 0.0)
        return np.exp(-a3 / th)
    if c.family == "frank":
        g1 = math.expm1(-th)
        g2 = -np.expm1(-th * u1) * np.expm1(-th * u2) / g1
        k = p * g2 / (1.0 - g2) ** 2
        r = 2.0 * k / (2.0 * k + 1.0 + np.sqrt(4.0 * k + 1.0))
        return -np.log1p(r / g2 * g1) / th
    # gumbel: monotone in u3, bisection on the log conditional
    s2 = (-np.log(u1)) ** th + (-np.log(u2)) ** th
    base = _gumbel_log_psi2(th, s2)
    target = np.log(p)
    lo = np.full_like(u1, _EPS)
    hi = np.full_like(u1, 1.0 - _EPS)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = _gumbel_log_psi2(th, s2 + (-np.log(mid)) ** th) - base
        too_low = val < target
        lo = np.where(too_low, mid, lo)
        hi = np.where(too_low, hi, mid)
        if np.max(hi - lo) < 1e-13:
            break
    return 0.5 * (lo + hi)


def sample_archimedean_3d(c: ArchimedeanCopula3D, n: int, seed) -> np.ndarray:
    """Conditional-inversion sampling: u1, then u2 | u1, then u3 | u1, u2.

    The bivariate margin of an exchangeable Archimedean copula is the
    same family with the same theta, so step two reuses h_inverse.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    w = np.clip(rng.random((n, 3)), _EPS, 1.0 - _EPS)
    pair = BivariateCopula(c.family, c.theta)
    u1 = w[:, 0]
    u2 = h_inverse(pair, w[:, 1], u1)
    u3 = _sample_archimedean_third(c, u1, u2, w[:, 2])
    return np.clip(np.column_stack([u1, u2, u3]), _EPS, 1.0 - _EPS)
