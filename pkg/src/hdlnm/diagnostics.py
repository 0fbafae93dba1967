"""Model checks: overdispersion, posterior predictive checks, basis size, AIC."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .fit import FittedModel, model_design
from .lagdata import TimeSeriesDataset
from .posterior import posterior_predictive

__all__ = [
    "overdispersion_test",
    "ppc_statistics",
    "ppc_quantiles",
    "ppc_acf",
    "acf",
    "basis_dim_check",
    "compare_models",
    "PpcReport",
    "run_checks",
    "BasisWarning",
    "MIN_PPC_DRAWS",
]

MIN_PPC_DRAWS = 100
N_QUANTILE_LEVELS = 200
ACF_MAX_LAG = 30
EDF_WARN_RATIO = 0.9
P_FLOOR = 1e-16


class BasisWarning(UserWarning):
    pass


def overdispersion_test(model: FittedModel) -> dict:
    """Deviance goodness-of-fit test against ``chi2(n - edf)``."""
    df = model.n - model.edf_total
    if df <= 0:
        raise ValueError("effective degrees of freedom reach the sample size")
    p = float(stats.chi2.sf(model.deviance, df))
    return {"deviance": float(model.deviance), "df": float(df), "ratio": float(model.deviance / df),
            "p_value": p}


def _summary(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    q = np.quantile(y, [0.01, 0.25, 0.75, 0.99], axis=-1)
    return np.stack([y.mean(axis=-1), y.var(axis=-1, ddof=1), q[2] - q[1], q[0], q[3]], axis=-1)


STAT_NAMES = ("mean", "variance", "iqr", "q01", "q99")


def _check_draws(sims):
    sims = np.atleast_2d(np.asarray(sims))
    if sims.shape[0] < MIN_PPC_DRAWS:
        raise ValueError(f"at least {MIN_PPC_DRAWS} predictive draws are required")
    return sims


def ppc_statistics(y, sims, level: float = 0.95) -> dict:
    """Observed summary statistics against their predictive distribution.

    Returns, per statistic, the observed value, the predictive interval and
    whether the observation falls inside it.
    """
    sims = _check_draws(sims)
    obs = _summary(y)
    rep = _summary(sims)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(rep, [alpha, 1 - alpha], axis=0)
    out = {}
    for i, name in enumerate(STAT_NAMES):
        out[name] = {"observed": float(obs[i]), "mean": float(rep[:, i].mean()),
                     "lo": float(lo[i]), "hi": float(hi[i]),
                     "inside": bool(lo[i] <= obs[i] <= hi[i])}
    return out


def ppc_quantiles(y, sims, n_levels: int = N_QUANTILE_LEVELS, level: float = 0.95) -> dict:
    """Observed quantiles against predictive bands at ``n_levels`` levels in [0, 1]."""
    sims = _check_draws(sims)
    probs = np.linspace(0.0, 1.0, n_levels)
    obs = np.quantile(np.asarray(y, dtype=float), probs)
    rep = np.quantile(sims.astype(float), probs, axis=1)  # (levels, draws)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(rep, [alpha, 1 - alpha], axis=1)
    inside = (obs >= lo) & (obs <= hi)
    return {"probs": probs, "observed": obs, "lo": lo, "hi": hi, "inside": inside,
            "fraction_inside": float(inside.mean())}


def acf(x, max_lag: int = ACF_MAX_LAG) -> np.ndarray:
    """Sample autocorrelation at lags ``1..max_lag`` (biased estimator).

    ``x`` may be 2-D, in which case each row is one series.
    """
    x = np.asarray(x, dtype=float)
    x = x - x.mean(axis=-1, keepdims=True)
    n = x.shape[-1]
    denom = np.sum(x * x, axis=-1)
    denom = np.where(denom > 0, denom, np.nan)
    out = [np.sum(x[..., k:] * x[..., : n - k], axis=-1) / denom for k in range(1, max_lag + 1)]
    return np.stack(out, axis=-1)


def ppc_acf(y, sims, max_lag: int = ACF_MAX_LAG, level: float = 0.95) -> dict:
    """Observed ACF of the counts against its predictive band at each lag."""
    sims = _check_draws(sims)
    y = np.asarray(y, dtype=float)
    if len(y) < 3 * max_lag:
        raise ValueError(f"series too short for an ACF check up to lag {max_lag}")
    obs = acf(y, max_lag)
    rep = acf(sims, max_lag)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.nanquantile(rep, [alpha, 1 - alpha], axis=0)
    inside = (obs >= lo) & (obs <= hi)
    return {"lags": np.arange(1, max_lag + 1), "observed": obs,
            "mean": np.nanmean(rep, axis=0), "lo": lo, "hi": hi,
            "inside": inside, "n_inside": int(inside.sum())}


def basis_dim_check(model: FittedModel, ratio: float = EDF_WARN_RATIO) -> list:
    """Flag smooths whose edf comes close to their usable basis dimension."""
    rows = []
    for term in model.terms:
        if term.kind == "intercept" or term.name not in model.edf:
            continue
        k = term.n_coef
        edf = model.edf[term.name]
        flag = bool(k > 0 and edf > ratio * k)
        rows.append({"term": term.name, "edf": float(edf), "k": int(k),
                     "ratio": float(edf / k) if k else 0.0, "warning": flag})
        if flag:
            warnings.warn(f"term {term.name!r} uses {edf:.1f} of {k} degrees of freedom; "
                          "consider a larger basis", BasisWarning, stacklevel=2)
    return rows


def compare_models(models: dict) -> list:
    """AIC table sorted ascending with differences to the best model."""
    if not models:
        return []
    ns = {int(m.n) for m in models.values()}
    if len(ns) > 1:
        raise ValueError("models were fitted to different numbers of observations")
    rows = [{"model": k, "aic": float(m.aic), "edf": float(m.edf_total),
             "family": m.family.name} for k, m in models.items()]
    rows.sort(key=lambda r: (r["aic"], r["model"]))
    best = rows[0]["aic"]
    for r in rows:
        r["delta"] = r["aic"] - best
    return rows


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if np.isfinite(v) else None
    return v


@dataclass
class PpcReport:
    overdispersion: dict
    statistics: dict
    quantiles: dict
    acf: dict
    basis: list
    n_draws: int
    seed: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        od = dict(self.overdispersion)
        od["p_value_reported"] = max(od["p_value"], P_FLOOR)
        return _plain({
            "overdispersion": od,
            "statistics": self.statistics,
            "quantiles": self.quantiles,
            "acf": self.acf,
            "basis": self.basis,
            "n_draws": self.n_draws,
            "seed": self.seed,
            **self.extra,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def quantiles_csv(self, path, header: str | None = None):
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            fh.write("prob,observed,lo,hi,inside\n")
            q = self.quantiles
            for p, o, lo, hi, ins in zip(q["probs"], q["observed"], q["lo"], q["hi"], q["inside"]):
                fh.write(f"{float(p)!r},{float(o)!r},{float(lo)!r},{float(hi)!r},"
                         f"{'true' if ins else 'false'}\n")

    def summary_text(self) -> str:
        od = self.overdispersion
        lines = [f"deviance {od['deviance']:.1f} on {od['df']:.1f} df, "
                 f"p = {max(od['p_value'], P_FLOOR):.3g}",
                 f"{'statistic':<10}{'observed':>12}{'lo':>12}{'hi':>12}  inside"]
        for name, r in self.statistics.items():
            lines.append(f"{name:<10}{r['observed']:>12.3f}{r['lo']:>12.3f}{r['hi']:>12.3f}  "
                         f"{'yes' if r['inside'] else 'no'}")
        lines.append(f"quantile levels inside band: {self.quantiles['fraction_inside']:.3f}")
        lines.append(f"ACF lags inside band: {self.acf['n_inside']}/{len(self.acf['lags'])}")
        for b in self.basis:
            flag = "  (basis may be too small)" if b["warning"] else ""
            lines.append(f"edf {b['term']}: {b['edf']:.2f} of {b['k']}{flag}")
        return "\n".join(lines)

    def acf_csv(self, path, header: str | None = None):
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            fh.write("lag,observed,mean,lo,hi,inside\n")
            a = self.acf
            for k, o, m, lo, hi, ins in zip(a["lags"], a["observed"], a["mean"], a["lo"], a["hi"],
                                            a["inside"]):
                fh.write(f"{int(k)},{float(o)!r},{float(m)!r},{float(lo)!r},{float(hi)!r},"
                         f"{'true' if ins else 'false'}\n")


def run_checks(model: FittedModel, data: TimeSeriesDataset, n_draws: int = 1000,
               seed: int = 0, max_lag: int = ACF_MAX_LAG, level: float = 0.95) -> PpcReport:
    """All diagnostics for a fitted model on its data."""
    _, _, frame = model_design(model, data)
    sims = posterior_predictive(model, data, n_draws=n_draws, seed=seed)
    y = frame.y
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        basis = basis_dim_check(model)
    return PpcReport(
        overdispersion=overdispersion_test(model),
        statistics=ppc_statistics(y, sims, level),
        quantiles=ppc_quantiles(y, sims, level=level),
        acf=ppc_acf(y, sims, max_lag, level),
        basis=basis,
        n_draws=int(n_draws),
        seed=int(seed),
    )
