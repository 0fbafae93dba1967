"""Tensor-product smooths, lag-summed DLNM terms and group deviation terms."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .basis import (
    EvaluatedBasis,
    make_basis,
    nullspace_dimension,
    predict_basis,
    ridge_basis,
    sum_to_zero_transform,
)
from .lagdata import LagFrame

__all__ = [
    "TensorTerm",
    "row_kron",
    "tensor_product",
    "lag_tensor_term",
    "lag_functional_rows",
    "surface_rows",
    "hierarchical_term",
    "lag_only_directions",
    "drop_directions",
    "MAX_TENSOR_COEF",
]

MAX_TENSOR_COEF = 100_000
IDENT_TOL = 1e-10


def row_kron(*mats) -> np.ndarray:
    """Row-wise Kronecker product; the first matrix varies slowest."""
    out = np.asarray(mats[0], dtype=float)
    n = out.shape[0]
    for m in mats[1:]:
        out = (out[:, :, None] * np.asarray(m, dtype=float)[:, None, :]).reshape(n, -1)
    return out


@dataclass(frozen=True)
class TensorTerm:
    """Tensor-product smooth over one or more marginal bases.

    ``margins`` keep their raw (uncentered) parameterization; the sum-to-zero
    transform ``constraint`` is applied once to the whole product. For a
    hierarchical deviation term, ``group_constraints`` holds one transform per
    group level and coefficients are stored group-major.
    """

    margins: list
    penalties: list
    nullspace_dim: list
    X: np.ndarray | None = None
    constraint: np.ndarray | None = None
    lag_summed: bool = False
    covariates: list = field(default_factory=list)
    lag: int | None = None
    hierarchy: dict | None = None
    identifiability: np.ndarray | None = None

    @property
    def raw_dim(self) -> int:
        return int(np.prod([m.k for m in self.margins]))

    @property
    def n_coef(self) -> int:
        if self.hierarchy is not None:
            return self.hierarchy["constraints"][0].shape[1] * len(self.hierarchy["levels"])
        return self.raw_dim if self.constraint is None else self.constraint.shape[1]


def _expanded_penalties(margins):
    """Per-margin penalties (unit spectral norm) expanded with identities."""
    dims = [m.k for m in margins]
    out = []
    for i, m in enumerate(margins):
        S = m.penalties[0]
        S = S / np.linalg.eigvalsh(S).max()
        mats = [np.eye(d) for d in dims]
        mats[i] = S
        full = mats[0]
        for M in mats[1:]:
            full = np.kron(full, M)
        out.append(full)
    return out


def _congruent(S, Z):
    if Z is None:
        return np.ascontiguousarray(S)
    P = Z.T @ S @ Z
    return np.ascontiguousarray(0.5 * (P + P.T))


def tensor_product(margins, center: bool = True, rows=None) -> TensorTerm:
    """Tensor product of marginal bases evaluated on the same rows.

    Model-matrix rows are row-wise Kronecker products of the marginal rows.
    When ``center`` is true a single sum-to-zero constraint is absorbed,
    computed from ``rows`` (defaults to the product rows themselves).
    """
    margins = list(margins)
    if len(margins) < 2:
        raise ValueError("a tensor product needs at least 2 margins")
    raw_dim = int(np.prod([m.k for m in margins]))
    if raw_dim > MAX_TENSOR_COEF:
        raise ValueError(f"tensor product would have {raw_dim} coefficients")
    X = row_kron(*[m.X for m in margins])
    penalties = _expanded_penalties(margins)
    Z = None
    if center:
        base = X if rows is None else rows
        Z = sum_to_zero_transform(base.sum(axis=0))
        X = X @ Z
    penalties = [_congruent(S, Z) for S in penalties]
    return TensorTerm(
        margins=margins,
        penalties=penalties,
        nullspace_dim=[nullspace_dimension(S) for S in penalties],
        X=np.ascontiguousarray(X),
        constraint=Z,
    )


def _summed_raw_rows(margins, lag_values, xlags):
    """Sum over lags of the raw tensor rows for every row of the frame."""
    n = xlags[0].shape[0]
    n_lag = len(lag_values)
    A = predict_basis(margins[0], lag_values)
    cov_bases = []
    for m, xl in zip(margins[1:], xlags):
        B = predict_basis(m, xl.ravel()).reshape(n, n_lag, m.k)
        cov_bases.append(B)
    out = np.zeros((n, int(np.prod([m.k for m in margins]))))
    for l in range(n_lag):
        out += row_kron(np.broadcast_to(A[l], (n, A.shape[1])), *[B[:, l, :] for B in cov_bases])
    return out


def _identifiability(R, penalties, extra=()):
    """Orthonormal basis of directions invisible to both data and penalties.

    For lag-summed terms any function of lag alone summing to zero over the
    lags drops out of the rows; the part of it that is also unpenalized is
    returned here so it can be removed from the parameterization.
    """
    G = R.T @ R
    scale = np.linalg.eigvalsh(G).max() or 1.0
    M = G / scale
    for S in list(penalties) + list(extra):
        top = np.linalg.eigvalsh(S).max()
        if top > 0:
            M = M + S / top
    ev, V = np.linalg.eigh(M)
    null = V[:, ev <= IDENT_TOL * ev.max()]
    if null.shape[1] == 0:
        return None
    return np.ascontiguousarray(null)


def _constant_coefficients(basis: EvaluatedBasis):
    """Coefficients reproducing the constant function, or None if not spanned."""
    X = basis.X
    c, *_ = np.linalg.lstsq(X, np.ones(X.shape[0]), rcond=None)
    if np.max(np.abs(X @ c - 1.0)) > 1e-8:
        return None
    return c


def lag_only_directions(term: TensorTerm):
    """Coefficient directions that are functions of lag alone summing to zero over lags.

    Such surfaces vanish from every lag-summed row, so the data carry no
    information about them. Returns an orthonormal ``n_coef x r`` matrix
    (``None`` when there are none, e.g. when a covariate margin does not
    span the constants).
    """
    if not term.lag_summed:
        return None
    lag_margin = term.margins[0]
    A = predict_basis(lag_margin, np.arange(term.lag + 1, dtype=float), warn=False)
    _, sv, Vt = np.linalg.svd(A.sum(axis=0, keepdims=True))
    lag_dirs = Vt[1:].T  # lag coefficients with zero sum over lags
    c = np.ones(1)
    for m in term.margins[1:]:
        cm = _constant_coefficients(m)
        if cm is None:
            return None
        c = np.kron(c, cm)
    raw = np.kron(lag_dirs, c[:, None])
    if term.hierarchy is None:
        Zs, G = [term.constraint], 1
    else:
        Zs, G = term.hierarchy["constraints"], len(term.hierarchy["levels"])
    blocks = []
    per = Zs[0].shape[1]
    for s, Z in enumerate(Zs):
        proj = raw if Z is None else Z.T @ raw
        U, sv, _ = np.linalg.svd(proj, full_matrices=False)
        U = U[:, sv > 1e-8 * max(sv.max(), 1e-300)]
        full = np.zeros((per * G, U.shape[1]))
        full[s * per:(s + 1) * per] = U
        blocks.append(full)
    N = np.hstack(blocks)
    return N if N.shape[1] else None


def _complement(N):
    Q, _ = np.linalg.qr(N, mode="complete")
    return Q[:, N.shape[1]:]


def drop_directions(term: TensorTerm, N) -> TensorTerm:
    """Restrict a (non-hierarchical) term to the orthogonal complement of ``N``."""
    if term.hierarchy is not None:
        raise ValueError("cannot drop directions from a deviation term")
    Q = _complement(N)
    Z = Q if term.constraint is None else term.constraint @ Q
    penalties = [_congruent(S, Q) for S in term.penalties]
    return replace(
        term,
        constraint=np.ascontiguousarray(Z),
        penalties=penalties,
        nullspace_dim=[nullspace_dimension(S) for S in penalties],
        X=None if term.X is None else np.ascontiguousarray(term.X @ Q),
    )


def lag_tensor_term(frame: LagFrame, covariate_names, bases, lag: int | None = None) -> TensorTerm:
    """Build the lag-functional tensor term for the given covariates.

    ``bases`` lists basis specs for (lag, covariate, ...) in that order. The
    lag margin is constructed on ``0..lag``, each covariate margin on all of
    its lagged values. Centering is computed on the lag-summed rows.
    """
    covariate_names = list(covariate_names)
    if len(bases) != len(covariate_names) + 1:
        raise ValueError("need one basis for the lag and one per covariate")
    L = frame.L if lag is None else int(lag)
    if L > frame.L:
        raise ValueError("term lag exceeds the frame lag")
    lag_values = np.arange(L + 1, dtype=float)
    margins = [make_basis(bases[0], lag_values)]
    xlags = []
    for name, spec in zip(covariate_names, bases[1:]):
        xl = frame.xlag[name][:, : L + 1]
        xlags.append(xl)
        margins.append(make_basis(spec, xl.ravel()))
    raw_dim = int(np.prod([m.k for m in margins]))
    if raw_dim > MAX_TENSOR_COEF:
        raise ValueError(f"tensor product would have {raw_dim} coefficients")
    R = _summed_raw_rows(margins, lag_values, xlags)
    Z = sum_to_zero_transform(R.sum(axis=0))
    raw_pen = _expanded_penalties(margins)
    null = _identifiability(R @ Z, [_congruent(S, Z) for S in raw_pen])
    if null is not None:
        # drop directions that neither the data nor the penalties can see
        Z = Z @ _complement(null)
    penalties = [_congruent(S, Z) for S in raw_pen]
    X = R @ Z
    return TensorTerm(
        margins=margins,
        penalties=penalties,
        nullspace_dim=[nullspace_dimension(S) for S in penalties],
        X=np.ascontiguousarray(X),
        constraint=Z,
        lag_summed=True,
        covariates=covariate_names,
        lag=L,
    )


def lag_functional_rows(term: TensorTerm, frame: LagFrame, covariate_names=None,
                        group=None) -> np.ndarray:
    """Model-matrix rows ``sum_l h(l, x_{t-l}, ...)`` of a lag tensor term.

    Works on any frame with enough lag history, so it also serves prediction.
    """
    covariate_names = term.covariates if covariate_names is None else list(covariate_names)
    if len(covariate_names) != len(term.margins) - 1:
        raise ValueError("number of covariates does not match the tensor margins")
    L = frame.L if term.lag is None else term.lag
    if frame.L < L:
        raise ValueError("insufficient lag history for this term")
    lag_values = np.arange(L + 1, dtype=float)
    xlags = [frame.xlag[name][:, : L + 1] for name in covariate_names]
    R = _summed_raw_rows(term.margins, lag_values, xlags)
    if term.hierarchy is None:
        return R if term.constraint is None else R @ term.constraint
    groups = frame.group if group is None else np.asarray(group).astype(str)
    return _deviation_rows(term, R, groups)


def surface_rows(term: TensorTerm, lags, *covariate_values, level=None) -> np.ndarray:
    """Rows evaluating ``h(l, x, ...)`` pointwise (no lag summation).

    All inputs are broadcast to a common 1-D shape. For a deviation term,
    ``level`` selects the group whose deviation is evaluated.
    """
    arrays = np.broadcast_arrays(np.asarray(lags, dtype=float),
                                 *[np.asarray(v, dtype=float) for v in covariate_values])
    arrays = [a.ravel() for a in arrays]
    if len(arrays) != len(term.margins):
        raise ValueError("one value array per margin is required")
    raw = row_kron(*[predict_basis(m, a, warn=False) for m, a in zip(term.margins, arrays)])
    if term.hierarchy is None:
        return raw if term.constraint is None else raw @ term.constraint
    return _deviation_rows(term, raw, np.full(raw.shape[0], str(level)))


def _deviation_rows(term, R, groups):
    levels = term.hierarchy["levels"]
    Zs = term.hierarchy["constraints"]
    per = Zs[0].shape[1]
    out = np.zeros((R.shape[0], per * len(levels)))
    groups = np.asarray(groups).astype(str)
    unknown = set(groups.tolist()) - set(levels)
    if unknown:
        raise ValueError(f"unknown group level(s) {sorted(unknown)}")
    for s, (lev, Z) in enumerate(zip(levels, Zs)):
        mask = groups == lev
        out[mask, s * per:(s + 1) * per] = R[mask] @ Z
    return out


def hierarchical_term(term: TensorTerm, groups, frame: LagFrame | None = None) -> TensorTerm:
    """Group-specific deviation smooths sharing the penalties of ``term``.

    A ridge margin over the group levels is added: every marginal penalty is
    replicated block-diagonally across groups and an identity penalty shrinks
    all deviations toward zero, so the deviations share smoothing parameters.
    Each group's deviation is centered over that group's rows.
    """
    groups = np.asarray(groups).astype(str)
    ridge = ridge_basis(groups)
    levels = ridge.info["levels"]
    if term.lag_summed:
        if frame is None:
            raise ValueError("a lag-summed term needs its frame")
        lag_values = np.arange(term.lag + 1, dtype=float)
        xlags = [frame.xlag[name][:, : term.lag + 1] for name in term.covariates]
        R = _summed_raw_rows(term.margins, lag_values, xlags)
    else:
        R = row_kron(*[m.X for m in term.margins])
    Zs = []
    for lev in levels:
        Zs.append(sum_to_zero_transform(R[groups == lev].sum(axis=0)))
    G = len(levels)
    raw_pen = _expanded_penalties(term.margins)
    penalties = []
    for S in raw_pen:
        blocks = [_congruent(S, Z) for Z in Zs]
        penalties.append(_block_diag(blocks))
    per = Zs[0].shape[1]
    penalties.append(np.eye(per * G))
    dev = replace(
        term,
        margins=list(term.margins),
        penalties=penalties,
        nullspace_dim=[nullspace_dimension(S) for S in penalties],
        constraint=None,
        hierarchy={"levels": levels, "constraints": Zs},
        X=None,
        identifiability=None,
    )
    X = _deviation_rows(dev, R, groups)
    return replace(dev, X=np.ascontiguousarray(X))


def _block_diag(blocks):
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n))
    i = 0
    for b in blocks:
        k = b.shape[0]
        out[i:i + k, i:i + k] = b
        i += k
    return out
