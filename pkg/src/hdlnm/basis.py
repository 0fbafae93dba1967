"""One-dimensional penalized spline bases.

Every constructor returns an :class:`EvaluatedBasis` holding the model matrix
at the construction points, the penalty matrices, and whatever is needed to
evaluate the same functions at new points (:func:`predict_basis`).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "EvaluatedBasis",
    "thinplate_basis",
    "cyclic_cubic_basis",
    "ridge_basis",
    "gp_basis",
    "center_basis",
    "predict_basis",
    "make_basis",
    "sum_to_zero_transform",
    "nullspace_dimension",
]

MAX_KNOTS = 2000
RANK_TOL = 1e-8
GP_MIN_POWER = 0.05
GP_JITTER = 1e-8


class ExtrapolationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EvaluatedBasis:
    """Model matrix, penalties and reconstruction info for one smooth.

    Attributes
    ----------
    kind : str
        One of ``thinplate``, ``cyclic_cubic``, ``ridge_factor``,
        ``gp_power_exponential``.
    X : ndarray, shape (n, k)
        Model matrix at the construction points (constraint absorbed).
    penalties : list of ndarray
        Symmetric PSD ``k x k`` matrices.
    nullspace_dim : list of int
        Null-space dimension of each penalty.
    info : dict
        Arrays/scalars needed to evaluate the raw basis at new points.
    constraint : ndarray or None
        ``k_raw x k`` reparameterization already applied to ``X`` and the
        penalties.
    """

    kind: str
    X: np.ndarray
    penalties: list
    nullspace_dim: list
    info: dict = field(default_factory=dict)
    constraint: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.X.shape[1]

    def to_dict(self) -> dict:
        info = {}
        for key, value in self.info.items():
            if isinstance(value, np.ndarray):
                info[key] = {"shape": list(value.shape), "data": value.ravel().tolist()}
            else:
                info[key] = value
        return {
            "kind": self.kind,
            "k": self.k,
            "info": info,
            "constraint": None if self.constraint is None else {
                "shape": list(self.constraint.shape),
                "data": self.constraint.ravel().tolist(),
            },
            "penalties": [
                {"shape": list(S.shape), "data": S.ravel().tolist()} for S in self.penalties
            ],
            "nullspace_dim": [int(m) for m in self.nullspace_dim],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluatedBasis":
        def arr(v):
            return np.ascontiguousarray(np.array(v["data"], dtype=float).reshape(v["shape"]))

        info = {}
        for key, value in d["info"].items():
            if isinstance(value, dict) and "shape" in value:
                info[key] = arr(value)
            else:
                info[key] = value
        constraint = None if d["constraint"] is None else arr(d["constraint"])
        penalties = [arr(S) for S in d["penalties"]]
        return cls(kind=d["kind"], X=np.zeros((0, d["k"])), penalties=penalties,
                   nullspace_dim=list(d["nullspace_dim"]), info=info, constraint=constraint)


def nullspace_dimension(S: np.ndarray, tol: float = RANK_TOL) -> int:
    """Number of eigenvalues of ``S`` below ``tol`` times the largest."""
    ev = np.linalg.eigvalsh(S)
    top = max(ev.max(), 0.0)
    if top == 0.0:
        return S.shape[0]
    return int(np.sum(ev <= tol * top))


def _thin(values: np.ndarray, max_knots: int) -> np.ndarray:
    """Distinct sorted values, subsampled at evenly spaced quantile ranks."""
    u = np.unique(values[np.isfinite(values)])
    if len(u) > max_knots:
        idx = np.round(np.linspace(0, len(u) - 1, max_knots)).astype(int)
        u = u[idx]
    return u


def _symmetrize(S):
    return np.ascontiguousarray(0.5 * (S + S.T))


# ---------------------------------------------------------------- thin plate

def _tp_eta(r):
    # 1-D thin-plate radial function for second-derivative penalty
    return np.abs(r) ** 3 / 12.0


def _thinplate_raw(x, info):
    z = (np.asarray(x, dtype=float) - info["shift"]) / info["scale"]
    E = _tp_eta(z[:, None] - info["knots"][None, :])
    range_part = E @ info["range_transform"]
    return np.column_stack([range_part, np.ones_like(z), z])


def thinplate_basis(x, k: int, max_knots: int = MAX_KNOTS) -> EvaluatedBasis:
    """Low-rank thin-plate regression spline in one dimension.

    The radial kernel ``|r|^3/12`` is formed on the distinct values of ``x``
    (at most ``max_knots`` of them), truncated to its ``k`` dominant
    eigenvectors, and constrained orthogonal to the linear polynomials, which
    are appended as two unpenalized columns.
    """
    x = np.asarray(x, dtype=float).ravel()
    k = int(k)
    if k < 3:
        raise ValueError("thinplate basis needs k >= 3")
    distinct = np.unique(x)
    if len(distinct) < k:
        raise ValueError(f"thinplate basis needs at least k={k} distinct values, got {len(distinct)}")
    knots_raw = _thin(x, max_knots)
    shift = float(knots_raw.mean())
    scale = float(knots_raw.std()) or 1.0
    knots = (knots_raw - shift) / scale

    E = _tp_eta(knots[:, None] - knots[None, :])
    ev, U = np.linalg.eigh(E)
    order = np.argsort(-np.abs(ev), kind="stable")[:k]
    ev, U = ev[order], U[:, order]
    # fix eigenvector signs for determinism across LAPACK builds
    signs = np.sign(U[np.argmax(np.abs(U), axis=0), np.arange(k)])
    U = U * signs

    T = np.column_stack([np.ones_like(knots), knots])
    Q, _ = np.linalg.qr(U.T @ T, mode="complete")
    Zc = Q[:, 2:]
    S_range = _symmetrize(Zc.T @ np.diag(ev) @ Zc)
    lam, V = np.linalg.eigh(S_range)
    lam, V = lam[::-1], V[:, ::-1]
    V = V * np.sign(V[np.argmax(np.abs(V), axis=0), np.arange(V.shape[1])])
    if lam.min() <= 0:
        raise np.linalg.LinAlgError("thin-plate penalty is not positive on its range space")

    info = {
        "knots": np.ascontiguousarray(knots),
        "shift": shift,
        "scale": scale,
        "range_transform": np.ascontiguousarray(U @ Zc @ V),
        "lower": float(x.min()),
        "upper": float(x.max()),
    }
    S = np.zeros((k, k))
    S[: k - 2, : k - 2] = np.diag(lam)
    S /= lam.max()
    X = np.ascontiguousarray(_thinplate_raw(x, info))
    return EvaluatedBasis("thinplate", X, [S], [2], info)


# ------------------------------------------------------------- cyclic cubic

def _cyclic_matrices(knots):
    h = np.diff(knots)
    n = len(h)
    B = np.zeros((n, n))
    D = np.zeros((n, n))
    for i in range(n):
        hp, hi = h[i - 1], h[i]
        B[i, i - 1] += hp / 6.0
        B[i, i] += (hp + hi) / 3.0
        B[i, (i + 1) % n] += hi / 6.0
        D[i, i - 1] += 1.0 / hp
        D[i, i] += -1.0 / hp - 1.0 / hi
        D[i, (i + 1) % n] += 1.0 / hi
    return B, D


def _cyclic_raw(x, info):
    knots = info["knots"]
    x = np.asarray(x, dtype=float)
    n = len(knots) - 1
    B, D = _cyclic_matrices(knots)
    F = np.linalg.solve(B, D)  # second derivatives at knots from knot values
    j = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, n - 1)
    h = knots[j + 1] - knots[j]
    am = (knots[j + 1] - x) / h
    ap = (x - knots[j]) / h
    cm = ((knots[j + 1] - x) ** 3 / h - h * (knots[j + 1] - x)) / 6.0
    cp = ((x - knots[j]) ** 3 / h - h * (x - knots[j])) / 6.0
    jn = (j + 1) % n
    X = cm[:, None] * F[j] + cp[:, None] * F[jn]
    rows = np.arange(len(x))
    X[rows, j] += am
    X[rows, jn] += ap
    return X


def cyclic_cubic_basis(x, knots=None, k: int | None = None) -> EvaluatedBasis:
    """Periodic cubic regression spline; first and last knot are identified.

    Either ``knots`` (sorted, at least 4) or ``k`` (giving ``k + 1`` evenly
    spaced knots over the range of ``x``) must be supplied. The basis has one
    coefficient per knot except the last.
    """
    x = np.asarray(x, dtype=float).ravel()
    if knots is None:
        if k is None:
            raise ValueError("give knots or k")
        knots = np.linspace(x.min(), x.max(), int(k) + 1)
    knots = np.asarray(knots, dtype=float)
    if len(knots) < 4:
        raise ValueError("cyclic cubic basis needs at least 4 knots")
    if np.any(np.diff(knots) <= 0):
        raise ValueError("knots must be strictly increasing")
    if x.size and (x.min() < knots[0] or x.max() > knots[-1]):
        raise ValueError("x outside the knot range of the cyclic basis")
    B, D = _cyclic_matrices(knots)
    S = _symmetrize(D.T @ np.linalg.solve(B, D))
    S /= np.linalg.eigvalsh(S).max()
    info = {"knots": np.ascontiguousarray(knots)}
    X = np.ascontiguousarray(_cyclic_raw(x, info))
    return EvaluatedBasis("cyclic_cubic", X, [S], [1], info)


# -------------------------------------------------------------------- ridge

def ridge_basis(levels, categories=None) -> EvaluatedBasis:
    """Indicator basis with identity penalty (i.i.d. Gaussian random effect)."""
    levels = np.asarray(levels).astype(str).ravel()
    if categories is None:
        categories = sorted(set(levels.tolist()))
    categories = [str(c) for c in categories]
    if len(categories) < 2:
        raise ValueError("ridge basis needs at least 2 levels")
    info = {"levels": categories}
    X = _ridge_raw(levels, info)
    return EvaluatedBasis("ridge_factor", X, [np.eye(len(categories))], [0], info)


def _ridge_raw(levels, info):
    lookup = {c: i for i, c in enumerate(info["levels"])}
    levels = np.asarray(levels).astype(str).ravel()
    X = np.zeros((len(levels), len(lookup)))
    for row, lev in enumerate(levels):
        try:
            X[row, lookup[lev]] = 1.0
        except KeyError:
            raise ValueError(f"unseen factor level {lev!r}") from None
    return X


# --------------------------------------------------------- gaussian process

def _gp_kernel(a, b, power, range_):
    return np.exp(-(np.abs(a[:, None] - b[None, :]) / range_) ** power)


def _gp_raw(t, info):
    t = np.asarray(t, dtype=float)
    C = _gp_kernel(t, info["grid"], info["power"], info["range"])
    return C @ info["transform"]


def gp_basis(t, k: int, power: float = GP_MIN_POWER, range: float = 10.0,
             max_knots: int = MAX_KNOTS) -> EvaluatedBasis:
    """Reduced-rank basis for a power-exponential Gaussian process.

    The kernel ``exp(-(|dt|/range)^power)`` is eigendecomposed on the distinct
    values of ``t`` (thinned to ``max_knots``); the ``k`` leading eigenpairs
    give Nystrom basis functions with penalty ``diag(1/eigenvalue)``.
    """
    t = np.asarray(t, dtype=float).ravel()
    power = float(np.clip(power, GP_MIN_POWER, 2.0))
    grid = _thin(t, max_knots)
    k = int(k)
    if k > len(grid):
        raise ValueError(f"gp basis needs k <= number of distinct points ({len(grid)})")
    C = _gp_kernel(grid, grid, power, float(range))
    ev, U = np.linalg.eigh(C)
    if ev.min() < -GP_JITTER * ev.max():
        ev, U = np.linalg.eigh(C + GP_JITTER * np.eye(len(grid)))
        if ev.min() < 0:
            raise np.linalg.LinAlgError("power-exponential kernel is not PSD after jitter")
    ev, U = ev[::-1][:k], U[:, ::-1][:, :k]
    if ev.min() <= 0:
        raise np.linalg.LinAlgError("kernel rank is below k")
    U = U * np.sign(U[np.argmax(np.abs(U), axis=0), np.arange(k)])
    info = {
        "grid": np.ascontiguousarray(grid),
        "power": power,
        "range": float(range),
        "transform": np.ascontiguousarray(U / ev),
        "eigenvalues": np.ascontiguousarray(ev),
    }
    S = np.diag(1.0 / ev)
    S /= S.max()
    X = np.ascontiguousarray(_gp_raw(t, info))
    return EvaluatedBasis("gp_power_exponential", X, [S], [0], info)


# ---------------------------------------------------------------- centering

def sum_to_zero_transform(colsums: np.ndarray) -> np.ndarray:
    """Orthonormal basis (``k x (k-1)``) of the complement of ``colsums``."""
    c = np.asarray(colsums, dtype=float).reshape(-1, 1)
    Q, _ = np.linalg.qr(c, mode="complete")
    return np.ascontiguousarray(Q[:, 1:])


def center_basis(b: EvaluatedBasis, x_obs=None) -> EvaluatedBasis:
    """Absorb a sum-to-zero constraint over the observed rows.

    ``x_obs`` defaults to the construction points. The basis dimension drops
    by one and the penalties are transformed congruently.
    """
    X_obs = b.X if x_obs is None else predict_basis(b, x_obs, warn=False)
    Z = sum_to_zero_transform(X_obs.sum(axis=0))
    penalties = [_symmetrize(Z.T @ S @ Z) for S in b.penalties]
    constraint = Z if b.constraint is None else b.constraint @ Z
    return replace(
        b,
        X=np.ascontiguousarray(b.X @ Z),
        penalties=penalties,
        nullspace_dim=[nullspace_dimension(S) for S in penalties],
        constraint=np.ascontiguousarray(constraint),
    )


# --------------------------------------------------------------- prediction

_RAW = {
    "thinplate": _thinplate_raw,
    "cyclic_cubic": _cyclic_raw,
    "ridge_factor": _ridge_raw,
    "gp_power_exponential": _gp_raw,
}


def predict_basis(b: EvaluatedBasis, x_new, warn: bool = True) -> np.ndarray:
    """Evaluate the basis functions of ``b`` (constraint included) at ``x_new``."""
    if b.kind == "thinplate" and warn:
        xv = np.asarray(x_new, dtype=float)
        if xv.size and (xv.min() < b.info["lower"] or xv.max() > b.info["upper"]):
            warnings.warn("thin-plate basis evaluated outside its construction range",
                          ExtrapolationWarning, stacklevel=2)
    if b.kind == "cyclic_cubic":
        xv = np.asarray(x_new, dtype=float)
        knots = b.info["knots"]
        if xv.size and (xv.min() < knots[0] or xv.max() > knots[-1]):
            raise ValueError("x outside the knot range of the cyclic basis")
    X = _RAW[b.kind](x_new if b.kind == "ridge_factor" else np.asarray(x_new, dtype=float).ravel(),
                     b.info)
    if b.constraint is not None:
        X = X @ b.constraint
    return np.ascontiguousarray(X)


def make_basis(spec: dict, x) -> EvaluatedBasis:
    """Construct a basis from a declarative dict such as ``{"type": "thinplate", "k": 10}``."""
    kind = spec.get("type", "thinplate")
    if kind in ("thinplate", "tp"):
        return thinplate_basis(x, spec.get("k", 10), spec.get("max_knots", MAX_KNOTS))
    if kind in ("cyclic_cubic", "cc"):
        knots = spec.get("knots")
        if knots is None and "domain" in spec:
            lo, hi = spec["domain"]
            knots = np.linspace(lo, hi, int(spec.get("k", 10)) + 1)
        return cyclic_cubic_basis(x, knots=knots, k=spec.get("k", 10))
    if kind in ("ridge_factor", "re"):
        return ridge_basis(x, spec.get("levels"))
    if kind in ("gp_power_exponential", "gp"):
        return gp_basis(x, spec.get("k", 10), spec.get("power", GP_MIN_POWER),
                        spec.get("range", 10.0), spec.get("max_knots", MAX_KNOTS))
    raise ValueError(f"unknown basis type {kind!r}")
