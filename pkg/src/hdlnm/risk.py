"""Relative risk, cumulative risk, optimum value, attributable fraction, contrasts.

All functionals are linear in the coefficients on the log scale, so a single
matrix ``A`` (grid points x coefficients) gives both the point estimate
``exp(A @ coef)`` and, through posterior draws, the credible bounds.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .fit import FittedModel
from .lagdata import TimeSeriesDataset
from .posterior import PosteriorDraws, functional_interval, sample_coefficients
from .tensor import surface_rows

__all__ = [
    "RiskGrid",
    "AttributableResult",
    "rr_surface",
    "cumulative_risk",
    "optimum_value",
    "attributable",
    "attributable_fraction",
    "group_contrast",
    "default_grid",
    "ExtrapolationWarning",
]

DEFAULT_GRID_POINTS = 100
DEFAULT_LEVEL = 0.95
DEFAULT_DRAWS = 1000


class ExtrapolationWarning(UserWarning):
    pass


def _fmt(v) -> str:
    return repr(float(v))


@dataclass
class RiskGrid:
    """Exponentiated functional over a (lag x covariate) grid with bounds.

    ``est`` has shape ``(n_lag, n_x)`` for surfaces and ``(n_x,)`` for
    cumulative risk. ``baseline`` describes what the risk is relative to.
    """

    term: str
    x: np.ndarray
    est: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    level: float
    baseline: str
    lags: np.ndarray | None = None
    fixed: dict = field(default_factory=dict)
    extrapolated: bool = False

    @property
    def significant(self) -> np.ndarray:
        """True where the credible interval excludes 1."""
        return (self.lo > 1.0) | (self.hi < 1.0)

    def rows(self):
        extra = list(self.fixed.items())
        if self.lags is None:
            for j, xv in enumerate(self.x):
                yield [*(v for _, v in extra), xv, self.est[j], self.lo[j], self.hi[j],
                       bool(self.significant[j])]
        else:
            sig = self.significant
            for i, lv in enumerate(self.lags):
                for j, xv in enumerate(self.x):
                    yield [lv, xv, *(v for _, v in extra), self.est[i, j], self.lo[i, j],
                           self.hi[i, j], bool(sig[i, j])]

    def columns(self):
        extra = list(self.fixed)
        if self.lags is None:
            return [*extra, "x", "est", "lo", "hi", "significant"]
        return ["lag", "x", *extra, "est", "lo", "hi", "significant"]

    def to_csv(self, path, header: str | None = None):
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            fh.write(",".join(self.columns()) + "\n")
            for row in self.rows():
                out = []
                for v in row:
                    if isinstance(v, (bool, np.bool_)):
                        out.append("true" if v else "false")
                    elif isinstance(v, str):
                        out.append(v)
                    else:
                        out.append(_fmt(v))
                fh.write(",".join(out) + "\n")


def _lag_term(model: FittedModel, name: str):
    term = model.term(name)
    if term.kind not in ("lag_tensor", "deviation"):
        raise ValueError(f"term {name!r} is not a lag tensor term")
    return term


def _embed(model, name, rows):
    A = np.zeros((rows.shape[0], len(model.coef)))
    start, stop = model.term_index[name]
    A[:, start:stop] = rows
    return A


def default_grid(model: FittedModel, covariate: str, n: int = DEFAULT_GRID_POINTS,
                 lower_q: str = "q01", upper_q: str = "q99") -> np.ndarray:
    """Evenly spaced grid between the 1st and 99th training percentiles."""
    s = model.summaries.get(covariate)
    if s is None:
        raise KeyError(f"no training summary for covariate {covariate!r}")
    return np.linspace(s[lower_q], s[upper_q], n)


def _check_span(model, covariate, values):
    s = model.summaries.get(covariate)
    if s is None:
        return False
    values = np.asarray(values, dtype=float)
    outside = bool(values.min() < s["min"] or values.max() > s["max"])
    if outside:
        warnings.warn(f"grid for {covariate!r} extends beyond the training range; "
                      "values are extrapolated", ExtrapolationWarning, stacklevel=3)
    return outside


def _other_values(model, term, at):
    """Fixed values for every covariate of the term after the first."""
    at = dict(at or {})
    values = []
    for name in term.tensor.covariates[1:]:
        if name not in at:
            s = model.summaries.get(name)
            if s is None:
                raise ValueError(f"a value for covariate {name!r} is required")
            at[name] = s["q50"]
        values.append(float(at[name]))
    return values, {k: at[k] for k in term.tensor.covariates[1:]}


def _surface_matrix(model, name, lags, x, others, group=None):
    """Rows of log-RR at every (lag, x) pair; global plus group deviation if asked."""
    term = _lag_term(model, name)
    LL, XX = np.meshgrid(lags, x, indexing="ij")
    cols = [LL.ravel(), XX.ravel(), *[np.full(LL.size, v) for v in others]]
    A = _embed(model, name, surface_rows(term.tensor, *cols))
    if group is not None:
        dev_name = f"{name}:dev"
        dev = model.term(dev_name)
        A = A + _embed(model, dev_name, surface_rows(dev.tensor, *cols, level=group))
    return A


def _draws(model, draws, n_draws, seed):
    if draws is None:
        draws = sample_coefficients(model, n_draws, seed)
    return draws


def _interval(A, model, draws, level):
    est = np.exp(A @ model.coef)
    lo, hi, _ = functional_interval(draws, lambda B: np.exp(B @ A.T), level)
    return est, lo, hi


def rr_surface(model: FittedModel, term: str = "h", x_grid=None, lags=None, reference=None,
               at=None, group=None, level: float = DEFAULT_LEVEL,
               draws: PosteriorDraws | None = None, n_draws: int = DEFAULT_DRAWS,
               seed: int = 0) -> RiskGrid:
    """Relative risk ``exp{h(l, x)}`` (optionally minus ``h(l, reference)``).

    For terms with several covariates the remaining ones are held at ``at``
    (default: their training medians). ``group`` adds that group's deviation
    in a hierarchical model.
    """
    t = _lag_term(model, term)
    cov = t.tensor.covariates[0]
    x = default_grid(model, cov) if x_grid is None else np.asarray(x_grid, dtype=float)
    lags = np.arange(t.tensor.lag + 1, dtype=float) if lags is None else np.asarray(lags, float)
    others, fixed = _other_values(model, t, at)
    extrapolated = _check_span(model, cov, x)
    A = _surface_matrix(model, term, lags, x, others, group)
    baseline = "overall mean"
    if reference is not None:
        R = _surface_matrix(model, term, lags, np.array([float(reference)]), others, group)
        A = A - np.repeat(R, len(x), axis=0)
        baseline = f"{cov}={float(reference)!r}"
    draws = _draws(model, draws, n_draws, seed)
    est, lo, hi = _interval(A, model, draws, level)
    shape = (len(lags), len(x))
    if group is not None:
        fixed = {**fixed, "group": str(group)}
    return RiskGrid(term=term, x=x, lags=lags, est=est.reshape(shape), lo=lo.reshape(shape),
                    hi=hi.reshape(shape), level=level, baseline=baseline, fixed=fixed,
                    extrapolated=extrapolated)


def _cumulative_matrix(model, term, x, others, group=None):
    t = _lag_term(model, term)
    lags = np.arange(t.tensor.lag + 1, dtype=float)
    A = _surface_matrix(model, term, lags, x, others, group)
    return A.reshape(len(lags), len(x), -1).sum(axis=0)


def cumulative_risk(model: FittedModel, term: str = "h", x_grid=None, reference=None, at=None,
                    group=None, level: float = DEFAULT_LEVEL,
                    draws: PosteriorDraws | None = None, n_draws: int = DEFAULT_DRAWS,
                    seed: int = 0) -> RiskGrid:
    """Cumulative risk ``exp{sum_l h(l, x)}`` with bounds from joint draws."""
    t = _lag_term(model, term)
    cov = t.tensor.covariates[0]
    x = default_grid(model, cov) if x_grid is None else np.asarray(x_grid, dtype=float)
    others, fixed = _other_values(model, t, at)
    extrapolated = _check_span(model, cov, x)
    A = _cumulative_matrix(model, term, x, others, group)
    baseline = "overall mean"
    if reference is not None:
        A = A - _cumulative_matrix(model, term, np.array([float(reference)]), others, group)
        baseline = f"{cov}={float(reference)!r}"
    draws = _draws(model, draws, n_draws, seed)
    est, lo, hi = _interval(A, model, draws, level)
    if group is not None:
        fixed = {**fixed, "group": str(group)}
    return RiskGrid(term=term, x=x, est=est, lo=lo, hi=hi, level=level, baseline=baseline,
                    fixed=fixed, extrapolated=extrapolated)


def optimum_value(cr: RiskGrid):
    """Grid value minimizing the cumulative risk; ties go to the smaller value."""
    if cr.lags is not None:
        raise ValueError("optimum_value expects a cumulative-risk grid")
    est = np.asarray(cr.est)
    best = est.min()
    candidates = np.flatnonzero(est == best)
    idx = int(candidates[np.argmin(cr.x[candidates])])
    return float(cr.x[idx]), idx


@dataclass
class AttributableResult:
    """Forward attributable fractions and numbers.

    ``overall`` and each entry of ``subsets`` are ``(estimate, lo, hi)``.
    """

    af: np.ndarray
    an: np.ndarray
    y: np.ndarray
    time: np.ndarray
    ot: tuple
    overall: tuple
    subsets: dict
    level: float

    def to_dict(self, include_series: bool = False) -> dict:
        out = {
            "ot": [float(v) for v in self.ot],
            "level": self.level,
            "overall": {"est": float(self.overall[0]), "lo": float(self.overall[1]),
                        "hi": float(self.overall[2])},
            "subsets": {k: {"est": float(v[0]), "lo": float(v[1]), "hi": float(v[2]),
                            "n_days": int(v[3])}
                        for k, v in self.subsets.items()},
            "total_an": float(self.an.sum()),
        }
        if include_series:
            out["series"] = {"date": [str(t) for t in self.time],
                             "af": self.af.tolist(), "an": self.an.tolist()}
        return out

    def to_json(self, include_series: bool = False) -> str:
        return json.dumps(self.to_dict(include_series), sort_keys=True, indent=2)


def _log_cr_rows(model, term, values):
    """Rows of ``sum_l h(l, x_t, z_t, ...)`` for every day (values: list of arrays)."""
    t = _lag_term(model, term)
    n = len(values[0])
    lags = np.arange(t.tensor.lag + 1, dtype=float)
    rows = np.zeros((n, t.n_coef))
    for lag in lags:
        rows += surface_rows(t.tensor, np.full(n, lag), *values)
    return _embed(model, term, rows)


def attributable_fraction(log_cr_x, log_cr_ot):
    """``1 - CR(OT)/CR(x)`` from log cumulative risks (broadcasting)."""
    return 1.0 - np.exp(np.asarray(log_cr_ot, dtype=float) - np.asarray(log_cr_x, dtype=float))


def attributable(model: FittedModel, term: str, data: TimeSeriesDataset, ot=None,
                 level: float = DEFAULT_LEVEL, subsets: dict | None = None,
                 quantiles=(0.05, 0.95), draws: PosteriorDraws | None = None,
                 n_draws: int = DEFAULT_DRAWS, seed: int = 0) -> AttributableResult:
    """Forward attributable fraction ``AF(x_t) = 1 - CR(OT)/CR(x_t)`` and ``AN = AF*y``.

    ``ot`` defaults to the optimum of the cumulative risk on the default grid.
    ``subsets`` maps names to boolean day masks over ``data``; when omitted,
    ``heat`` (above the upper quantile of the first covariate) and ``cold``
    (below the lower quantile) are used. Bounds propagate the coefficient
    draws through the whole computation with ``ot`` held fixed.
    """
    t = _lag_term(model, term)
    names = t.tensor.covariates
    if ot is None:
        others, _ = _other_values(model, t, None)
        cr = cumulative_risk(model, term, at=dict(zip(names[1:], others)), n_draws=2, seed=seed)
        ot = (optimum_value(cr)[0], *others)
    ot = tuple(np.atleast_1d(np.asarray(ot, dtype=float)).tolist())
    if len(ot) != len(names):
        raise ValueError("ot needs one value per covariate of the term")

    values = [data.variable(nm) for nm in names]
    ok = np.isfinite(data.y)
    for v in values:
        ok &= np.isfinite(v)
    y = data.y[ok]
    values = [v[ok] for v in values]
    # OT is evaluated in the same batch so that days at OT give bitwise equal rows
    rows = _log_cr_rows(model, term, [np.append(v, o) for v, o in zip(values, ot)])
    A, A_ot = rows[:-1], rows[-1:]

    if subsets is None:
        x0 = values[0]
        lo_q, hi_q = np.quantile(x0, quantiles)
        subsets = {"heat": x0 > hi_q, "cold": x0 < lo_q}
        mask_source = "filtered"
    else:
        mask_source = "full"
    masks = {}
    for key, mask in subsets.items():
        mask = np.asarray(mask, dtype=bool)
        if mask_source == "full":
            mask = mask[ok]
        if not mask.any():
            raise ValueError(f"subset {key!r} selects no days")
        masks[key] = mask

    af = attributable_fraction(A @ model.coef, A_ot @ model.coef)
    an = af * y
    draws = _draws(model, draws, n_draws, seed)
    af_draws = attributable_fraction(draws.samples @ A.T, draws.samples @ A_ot.T)
    alpha = (1.0 - level) / 2.0

    def summary(mask):
        est = an[mask].sum() / y[mask].sum()
        per_draw = (af_draws[:, mask] * y[mask]).sum(axis=1) / y[mask].sum()
        lo, hi = np.quantile(per_draw, [alpha, 1.0 - alpha])
        return float(est), float(lo), float(hi), int(mask.sum())

    overall = summary(np.ones(len(y), dtype=bool))[:3]
    return AttributableResult(af=af, an=an, y=y, time=data.time[ok], ot=ot, overall=overall,
                              subsets={k: summary(m) for k, m in masks.items()}, level=level)


def group_contrast(model: FittedModel, term: str, group_a, group_b, x_grid=None, lags=None,
                   reference=None, at=None, level: float = DEFAULT_LEVEL,
                   draws: PosteriorDraws | None = None, n_draws: int = DEFAULT_DRAWS,
                   seed: int = 0) -> RiskGrid:
    """``exp{h_a(l, x) - h_b(l, x)}`` between two groups of a hierarchical term.

    With ``reference`` the contrast at ``(l, reference)`` is divided out at
    every lag, which removes the part of the surfaces the data cannot
    identify (functions of lag alone).
    """
    dev_name = f"{term}:dev"
    dev = model.term(dev_name)
    levels = dev.tensor.hierarchy["levels"]
    for g in (group_a, group_b):
        if str(g) not in levels:
            raise ValueError(f"unknown group {g!r}")
    t = _lag_term(model, term)
    cov = t.tensor.covariates[0]
    x = default_grid(model, cov) if x_grid is None else np.asarray(x_grid, dtype=float)
    lags = np.arange(t.tensor.lag + 1, dtype=float) if lags is None else np.asarray(lags, float)
    others, fixed = _other_values(model, t, at)
    extrapolated = _check_span(model, cov, x)

    def contrast_rows(xv):
        LL, XX = np.meshgrid(lags, xv, indexing="ij")
        cols = [LL.ravel(), XX.ravel(), *[np.full(LL.size, v) for v in others]]
        return (surface_rows(dev.tensor, *cols, level=str(group_a))
                - surface_rows(dev.tensor, *cols, level=str(group_b)))

    rows = contrast_rows(x)
    baseline = f"group {group_b}"
    if reference is not None:
        rows = rows - np.repeat(contrast_rows(np.array([float(reference)])), len(x), axis=0)
        baseline += f", {cov}={float(reference)!r}"
    A = _embed(model, dev_name, rows)
    draws = _draws(model, draws, n_draws, seed)
    est, lo, hi = _interval(A, model, draws, level)
    shape = (len(lags), len(x))
    return RiskGrid(term=term, x=x, lags=lags, est=est.reshape(shape), lo=lo.reshape(shape),
                    hi=hi.reshape(shape), level=level, baseline=baseline,
                    fixed={**fixed, "group": f"{group_a}/{group_b}"},
                    extrapolated=extrapolated)
