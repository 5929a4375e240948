"""Regular-vine copula for three variables.

The d = 3 vine is a path: a center variable linked to the other two in
tree 1, plus one conditional pair-copula in tree 2 on h-transformed
arguments.  Structure selection maximizes the summed |tau| to the
center; each edge picks its family by AIC after a 1-D likelihood
refinement.  At d = 3 every vine class (R/C/D) coincides up to
labeling, so a single path representation covers all structures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .copulas import (
    FAMILIES,
    BivariateCopula,
    fit_mle,
    h_function,
    h_inverse,
    independence,
    kendall_matrix,
    pair_logpdf,
)

_EPS = 1e-12


@dataclass(frozen=True)
class VineEdge:
    """One pair-copula: variable pair, optional conditioning variable."""

    pair: tuple[int, int]
    copula: BivariateCopula
    given: int | None = None

    def to_dict(self) -> dict:
        d = {"pair": list(self.pair), **self.copula.to_dict()}
        if self.given is not None:
            d["given"] = self.given
        return d

    @staticmethod
    def from_dict(d: dict) -> "VineEdge":
        cop = BivariateCopula(d["family"], float(d.get("theta", 0.0)), d.get("nu"))
        return VineEdge(tuple(d["pair"]), cop, d.get("given"))


@dataclass(frozen=True)
class VineModel:
    """d=3 vine: path order (a, center, b) and its three pair-copulas."""

    order: tuple[int, int, int]
    edges: tuple[VineEdge, VineEdge, VineEdge]

    def __post_init__(self):
        if sorted(self.order) != [0, 1, 2]:
            raise ValueError("order must be a permutation of (0, 1, 2)")
        a, c, b = self.order
        want = [((a, c), None), ((b, c), None), ((a, b), c)]
        got = [(e.pair, e.given) for e in self.edges]
        if got != want:
            raise ValueError(f"edges {got} do not match the path structure {want}")

    @property
    def center(self) -> int:
        return self.order[1]

    def to_dict(self) -> dict:
        return {"order": list(self.order), "edges": [e.to_dict() for e in self.edges]}

    @staticmethod
    def from_dict(d: dict) -> "VineModel":
        return VineModel(tuple(d["order"]), tuple(VineEdge.from_dict(e) for e in d["edges"]))


def select_structure(pseudo: np.ndarray) -> tuple[int, int, int]:
    """Choose the center by maximum summed |tau|; ties to the lowest index."""
    taus = kendall_matrix(pseudo)
    strength = np.sum(np.abs(taus), axis=1) - 1.0
    center = int(np.argmax(strength))
    a, b = [j for j in range(3) if j != center]
    return (a, center, b)


def _fit_edge(
    uv: np.ndarray, families, criterion: str
) -> tuple[BivariateCopula, float]:
    """Fit every admissible candidate family; keep the criterion winner.

    Families whose fit raises (Clayton/Gumbel under negative tau) are
    skipped for this edge rather than failing the vine.
    """
    best = None
    for fam in FAMILIES:
        if fam not in families:
            continue
        if fam == "independence":
            cand, ll = independence(), 0.0
        else:
            try:
                cand, ll = fit_mle(fam, uv)
            except ValueError:
                continue
        score = 2.0 * cand.n_params - 2.0 * ll if criterion == "aic" else -ll
        if best is None or score < best[0]:
            best = (score, cand, ll)
    if best is None:
        raise ValueError("no admissible candidate family for this edge")
    return best[1], best[2]


def fit_vine(
    pseudo: np.ndarray,
    families=FAMILIES,
    criterion: str = "aic",
) -> VineModel:
    """Sequential vine fit: tree 1 on raw pairs, tree 2 on h-transforms."""
    u = np.asarray(pseudo, dtype=np.float64)
    if u.ndim != 2 or u.shape[1] != 3:
        raise ValueError("expected an n x 3 pseudo-observation matrix")
    if criterion not in ("aic", "loglik"):
        raise ValueError("criterion must be 'aic' or 'loglik'")
    order = select_structure(u)
    a, c, b = order
    cop_a, _ = _fit_edge(u[:, [a, c]], families, criterion)
    cop_b, _ = _fit_edge(u[:, [b, c]], families, criterion)
    ua_c = np.clip(h_function(cop_a, u[:, a], u[:, c]), _EPS, 1.0 - _EPS)
    ub_c = np.clip(h_function(cop_b, u[:, b], u[:, c]), _EPS, 1.0 - _EPS)
    cop_ab, _ = _fit_edge(np.column_stack([ua_c, ub_c]), families, criterion)
    return VineModel(
        order,
        (
            VineEdge((a, c), cop_a),
            VineEdge((b, c), cop_b),
            VineEdge((a, b), cop_ab, given=c),
        ),
    )


def vine_logpdf(m: VineModel, u) -> np.ndarray:
    """Log density: sum of the three pair log-densities."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 1:
        u = u[None, :]
    a, c, b = m.order
    cop_a, cop_b, cop_ab = (e.copula for e in m.edges)
    out = pair_logpdf(cop_a, u[:, a], u[:, c]) + pair_logpdf(cop_b, u[:, b], u[:, c])
    ua_c = np.clip(h_function(cop_a, u[:, a], u[:, c]), _EPS, 1.0 - _EPS)
    ub_c = np.clip(h_function(cop_b, u[:, b], u[:, c]), _EPS, 1.0 - _EPS)
    return out + pair_logpdf(cop_ab, ua_c, ub_c)


def vine_density(m: VineModel, u) -> np.ndarray:
    return np.exp(vine_logpdf(m, u))


def vine_loglik(m: VineModel, pseudo: np.ndarray) -> float:
    ll = float(np.sum(vine_logpdf(m, pseudo)))
    if not np.isfinite(ll):
        raise ValueError("non-finite vine density on the given points")
    return ll


def vine_sample(m: VineModel, n: int, seed) -> np.ndarray:
    """Conditional-inversion sampling along the path.

    With w uniform: u_c = w1; u_a = h^-1(w2 | u_c); for u_b the tree-2
    conditional is inverted first, then the tree-1 h-function.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    w = np.clip(rng.random((n, 3)), _EPS, 1.0 - _EPS)
    a, c, b = m.order
    cop_a, cop_b, cop_ab = (e.copula for e in m.edges)
    out = np.empty((n, 3))
    out[:, c] = w[:, 0]
    ua_c = w[:, 1]
    out[:, a] = h_inverse(cop_a, ua_c, out[:, c])
    ub_c = h_inverse(cop_ab, w[:, 2], ua_c)
    out[:, b] = h_inverse(cop_b, ub_c, out[:, c])
    return np.clip(out, _EPS, 1.0 - _EPS)


def gaussian_vine_from_corr(corr: np.ndarray, order: tuple[int, int, int]) -> VineModel:
    """All-Gaussian vine equivalent to the trivariate Gaussian copula.

    The tree-2 parameter is the partial correlation of the outer pair
    given the center.  Used as a closed-form oracle for vine_logpdf.
    """
    r = np.asarray(corr, dtype=np.float64)
    a, c, b = order
    r_ac, r_bc, r_ab = r[a, c], r[b, c], r[a, b]
    partial = (r_ab - r_ac * r_bc) / np.sqrt((1.0 - r_ac**2) * (1.0 - r_bc**2))
    return VineModel(
        order,
        (
            VineEdge((a, c), BivariateCopula("gaussian", r_ac)),
            VineEdge((b, c), BivariateCopula("gaussian", r_bc)),
            VineEdge((a, b), BivariateCopula("gaussian", float(partial)), given=c),
        ),
    )
