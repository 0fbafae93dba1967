"""Penalized IRLS, Laplace-approximate REML and the fitted-model container."""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .family import Family, NegativeBinomial, make_family
from .lagdata import LagFrame, TimeSeriesDataset
from .terms import ModelSpec, build_terms, model_frame, offset_values, term_from_dict
from .tensor import drop_directions, lag_only_directions

__all__ = [
    "PirlsResult",
    "Design",
    "FittedModel",
    "ConvergenceError",
    "pirls",
    "laplace_reml",
    "reml_score",
    "fit",
    "predict",
    "predict_terms",
    "build_design",
    "SCHEMA_VERSION",
]

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
INNER_TOL = 1e-9
OUTER_TOL = 1e-6
MAX_PIRLS_ITER = 200
JITTER = 1e-10
INVISIBLE_TOL = 1e-8
LOG_SP_HALF_RANGE = 25.0
LOG_THETA_BOUNDS = (math.log(1e-3), math.log(1e6))


class ConvergenceError(RuntimeError):
    pass


@dataclass
class PirlsResult:
    beta: np.ndarray
    eta: np.ndarray
    mu: np.ndarray
    w: np.ndarray
    deviance: float
    penalized_deviance: float
    converged: bool
    iterations: int


def _factor(H):
    """Cholesky factor of ``H``, retrying once with a trace-scaled jitter."""
    try:
        return linalg.cho_factor(H, lower=False, check_finite=False), H
    except linalg.LinAlgError:
        jitter = JITTER * np.trace(H) / H.shape[0] * H.shape[0]
        Hj = H + jitter * np.eye(H.shape[0])
        try:
            return linalg.cho_factor(Hj, lower=False, check_finite=False), Hj
        except linalg.LinAlgError:
            raise np.linalg.LinAlgError("penalized system is singular after jitter") from None


def pirls(X, S, family: Family, y, offset=None, beta0=None, tol=INNER_TOL,
          max_iter=MAX_PIRLS_ITER) -> PirlsResult:
    """Penalized iteratively re-weighted least squares.

    Minimizes ``deviance + beta' S beta`` where ``S`` is the total
    (already weighted) penalty. Step halving guards against increases of the
    penalized deviance. Non-convergence is reported, not raised.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    S = np.zeros((p, p)) if S is None else np.asarray(S, dtype=float)
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)

    def evaluate(beta):
        eta = X @ beta + off
        mu = family.linkinv(eta)
        dev = family.deviance(y, mu)
        return eta, mu, dev + float(beta @ S @ beta), dev

    if beta0 is None:
        mu = family.initial_mu(y)
        eta = family.linkfun(mu)
        beta_old = None
        pdev_old = np.inf
    else:
        beta_old = np.asarray(beta0, dtype=float)
        eta, mu, pdev_old, _ = evaluate(beta_old)

    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        z, w = family.working(y, mu, eta)
        z = z - off
        XtW = X.T * w
        H = XtW @ X + S
        cf, _ = _factor(H)
        beta = linalg.cho_solve(cf, XtW @ z, check_finite=False)
        eta_new, mu_new, pdev, dev = evaluate(beta)
        if beta_old is not None and not (pdev <= pdev_old):
            step = 1.0
            for _ in range(40):
                step *= 0.5
                trial = beta_old + step * (beta - beta_old)
                eta_t, mu_t, pdev_t, dev_t = evaluate(trial)
                if np.isfinite(pdev_t) and pdev_t <= pdev_old:
                    beta, eta_new, mu_new, pdev, dev = trial, eta_t, mu_t, pdev_t, dev_t
                    break
            else:
                beta, eta_new, mu_new, pdev = beta_old, eta, mu, pdev_old
                dev = family.deviance(y, mu_new)
        change = abs(pdev - pdev_old)
        beta_old, eta, mu, pdev_old = beta, eta_new, mu_new, pdev
        if change <= tol * (abs(pdev) + 0.1):
            converged = True
            break
    _, w = family.working(y, mu, eta)
    return PirlsResult(beta=beta_old, eta=eta, mu=mu, w=w, deviance=dev,
                       penalized_deviance=pdev_old, converged=converged, iterations=it)


@dataclass
class PenaltyBlock:
    """Penalty local to the coefficient slice ``sl``; ``fixed`` is its sp or None."""

    term: int
    index: int
    sl: slice
    S: np.ndarray
    fixed: float | None = None


@dataclass
class Design:
    """Everything the fitter needs: stacked model matrix, penalties, response."""

    X: np.ndarray
    y: np.ndarray
    offset: np.ndarray | None
    terms: list
    slices: list
    penalties: list
    frame: LagFrame
    ranks: dict = field(default_factory=dict)
    identifiability: np.ndarray | None = None

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def free(self) -> list:
        return [i for i, pb in enumerate(self.penalties) if pb.fixed is None]

    def total_penalty(self, sp) -> np.ndarray:
        S = np.zeros((self.p, self.p))
        for lam, pb in zip(sp, self.penalties):
            if lam != 0.0:
                S[pb.sl, pb.sl] += lam * pb.S
        if self.identifiability is not None:
            S += self.identifiability
        return S

    def penalty_logdet(self, sp):
        """Log pseudo-determinant of the weighted total penalty and its rank.

        Computed term by term; a term whose smoothing parameters are all
        positive uses its structural rank, otherwise the rank is numerical.
        """
        total, rank = 0.0, 0
        by_term: dict[int, list] = {}
        for lam, pb in zip(sp, self.penalties):
            by_term.setdefault(pb.term, []).append((lam, pb))
        for t, term in enumerate(self.terms):
            ident = term.identifiability
            items = by_term.get(t, [])
            if not items and ident is None:
                continue
            k = term.n_coef
            block = np.zeros((k, k))
            for lam, pb in items:
                if lam != 0.0:
                    block += lam * pb.S
            if ident is not None:
                block += ident @ ident.T
            ev = np.linalg.eigvalsh(block)
            if all(lam > 0 for lam, _ in items):
                r = self.ranks[t]
            else:
                r = int(np.sum(ev > 1e-8 * max(ev.max(), 0.0))) if ev.max() > 0 else 0
            if r == 0:
                continue
            top = ev[-r:]
            if np.any(top <= 0):
                return -np.inf, rank
            total += float(np.sum(np.log(top)))
            rank += r
        return total, rank


def build_design(spec: ModelSpec, data: TimeSeriesDataset, terms=None, frame=None) -> Design:
    frame = model_frame(spec, data) if frame is None else frame
    if terms is None:
        terms = build_terms(spec, data, frame)
    blocks, slices, penalties = [], [], []
    start = 0
    for ti, term in enumerate(terms):
        Xt = term.design(data, frame)
        blocks.append(Xt)
        sl = slice(start, start + term.n_coef)
        slices.append(sl)
        for j, (S, sp) in enumerate(zip(term.penalties, term.sp)):
            penalties.append(PenaltyBlock(ti, j, sl, S, None if sp is None else float(sp)))
        start += term.n_coef
    X = np.ascontiguousarray(np.hstack(blocks))
    p = X.shape[1]
    ident = None
    ranks = {}
    for ti, term in enumerate(terms):
        k = term.n_coef
        M = np.zeros((k, k))
        for S in term.penalties:
            top = np.linalg.eigvalsh(S).max()
            if top > 0:
                M += S / top
        if term.identifiability is not None:
            M += term.identifiability @ term.identifiability.T
            if ident is None:
                ident = np.zeros((p, p))
            sl = slices[ti]
            ident[sl, sl] += term.identifiability @ term.identifiability.T
        if k and (term.penalties or term.identifiability is not None):
            ev = np.linalg.eigvalsh(M)
            ranks[ti] = int(np.sum(ev > 1e-8 * ev.max()))
        else:
            ranks[ti] = 0
    y = frame.y
    off = offset_values(spec, data, frame)
    return Design(X=X, y=y, offset=off, terms=terms, slices=slices, penalties=penalties,
                  frame=frame, ranks=ranks, identifiability=ident)


def laplace_reml(design: Design, sp, family: Family, beta0=None):
    """Laplace-approximate REML score (larger is better) and the inner fit.

    ``loglik - beta'S beta/2 + log|S|_+/2 - log|X'WX + S|/2 + Mp/2 log(2 pi)``
    with ``Mp`` the dimension of the total penalty null space.
    """
    sp = np.asarray(sp, dtype=float)
    S = design.total_penalty(sp)
    res = pirls(design.X, S, family, design.y, design.offset, beta0=beta0)
    ll = family.loglik(design.y, res.mu)
    XtW = design.X.T * res.w
    H = XtW @ design.X + S
    try:
        cf = linalg.cho_factor(H, lower=False, check_finite=False)
    except linalg.LinAlgError:
        return -np.inf, res
    log_det_H = 2.0 * float(np.sum(np.log(np.abs(np.diag(cf[0])))))
    log_det_S, rank = design.penalty_logdet(sp)
    mp = design.p - rank
    pen = float(res.beta @ S @ res.beta)
    score = ll - 0.5 * pen + 0.5 * log_det_S - 0.5 * log_det_H + 0.5 * mp * math.log(2 * math.pi)
    return float(score), res


def reml_score(log_sp, log_theta, spec: ModelSpec, data: TimeSeriesDataset) -> float:
    """REML score of ``spec`` on ``data`` at the given log smoothing parameters.

    ``log_sp`` has one entry per penalty of the expanded model (in term
    order); ``log_theta`` is ignored for Poisson models.
    """
    design = build_design(spec, data)
    family = _family_with_theta(make_family(spec.family), log_theta)
    score, _ = laplace_reml(design, np.exp(np.asarray(log_sp, dtype=float)), family)
    return score


def _family_with_theta(family, log_theta):
    if family.has_theta and log_theta is not None:
        return NegativeBinomial(float(math.exp(log_theta)))
    return family


@dataclass
class FittedModel:
    """Result of :func:`fit`.

    ``log_sp`` stores ``log`` smoothing parameters (``-inf`` for an
    unpenalized fit); ``cov`` is the Bayesian posterior covariance
    ``(X'WX + S)^-1`` (scale 1 for count families).
    """

    spec: ModelSpec
    terms: list
    family: Family
    coef: np.ndarray
    cov: np.ndarray
    log_sp: np.ndarray
    sp_names: list
    edf: dict
    edf_total: float
    reml: float
    aic: float
    deviance: float
    loglik: float
    n: int
    lag: int
    converged: bool
    fitted: np.ndarray | None = None
    term_index: dict = field(default_factory=dict)
    report: dict = field(default_factory=dict)
    summaries: dict = field(default_factory=dict)

    @property
    def theta(self):
        return getattr(self.family, "theta", None)

    @property
    def sp(self) -> np.ndarray:
        return np.exp(self.log_sp)

    def term(self, name):
        for t in self.terms:
            if t.name == name:
                return t
        raise KeyError(f"no term named {name!r}")

    def coef_of(self, name) -> np.ndarray:
        start, stop = self.term_index[name]
        return self.coef[start:stop]

    def to_dict(self) -> dict:
        p = len(self.coef)
        lower = self.cov[np.tril_indices(p)]
        return {
            "schema_version": SCHEMA_VERSION,
            "spec": self.spec.to_dict(),
            "family": self.family.to_dict(),
            "coefficients": self.coef.tolist(),
            "covariance_lower": lower.tolist(),
            "log_sp": [None if not np.isfinite(v) else float(v) for v in self.log_sp],
            "sp_names": list(self.sp_names),
            "theta": self.theta,
            "edf": {k: float(v) for k, v in self.edf.items()},
            "edf_total": float(self.edf_total),
            "reml": float(self.reml),
            "aic": float(self.aic),
            "deviance": float(self.deviance),
            "loglik": float(self.loglik),
            "n": int(self.n),
            "lag": int(self.lag),
            "converged": bool(self.converged),
            "term_index": {k: list(v) for k, v in self.term_index.items()},
            "terms": [t.to_dict() for t in self.terms],
            "report": self.report,
            "summaries": self.summaries,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "FittedModel":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported model schema version {d.get('schema_version')!r}")
        coef = np.ascontiguousarray(np.array(d["coefficients"], dtype=float))
        p = len(coef)
        cov = np.zeros((p, p))
        cov[np.tril_indices(p)] = d["covariance_lower"]
        cov = cov + np.tril(cov, -1).T
        log_sp = np.array([-np.inf if v is None else v for v in d["log_sp"]], dtype=float)
        return cls(
            spec=ModelSpec.from_dict(d["spec"]),
            terms=[term_from_dict(t) for t in d["terms"]],
            family=make_family(d["family"]),
            coef=coef,
            cov=np.ascontiguousarray(cov),
            log_sp=log_sp,
            sp_names=list(d["sp_names"]),
            edf=dict(d["edf"]),
            edf_total=d["edf_total"],
            reml=d["reml"],
            aic=d["aic"],
            deviance=d["deviance"],
            loglik=d["loglik"],
            n=d["n"],
            lag=d["lag"],
            converged=d["converged"],
            term_index={k: tuple(v) for k, v in d["term_index"].items()},
            report=d.get("report", {}),
            summaries=d.get("summaries", {}),
        )

    @classmethod
    def from_json(cls, text: str) -> "FittedModel":
        return cls.from_dict(json.loads(text))


def _start_log_sp(design: Design, family: Family):
    """Initial log smoothing parameters balancing penalty and data curvature."""
    mu = family.initial_mu(design.y)
    _, w = family.working(design.y, mu, family.linkfun(mu))
    XtWX_diag = np.einsum("ij,ij->j", design.X, design.X * w[:, None])
    overall = max(float(XtWX_diag.mean()), 1e-12)
    out = []
    for pb in design.penalties:
        data_part = float(XtWX_diag[pb.sl].sum())
        if data_part <= 0:
            data_part = overall * (pb.sl.stop - pb.sl.start)
        out.append(math.log(data_part / max(np.trace(pb.S), 1e-12)))
    return np.array(out)


def _theta_start(y):
    m, v = float(np.mean(y)), float(np.var(y, ddof=1)) if len(y) > 1 else 0.0
    return math.log(m * m / max(v - m, 0.1 * m))


def fit(spec: ModelSpec | dict, data: TimeSeriesDataset, seed: int = 0, n_starts: int = 3,
        sp=None, theta=None, frame=None) -> FittedModel:
    """Fit ``spec`` to ``data`` by PIRLS within a REML outer search.

    The outer search is Nelder-Mead on log smoothing parameters (and
    ``log theta`` for the negative binomial) from ``n_starts`` starting
    points: a balanced default and random perturbations drawn with ``seed``.

    Parameters
    ----------
    sp : array-like, optional
        Fix every smoothing parameter (one per penalty, in term order).
    theta : float, optional
        Fix the negative binomial size instead of estimating it.
    """
    if isinstance(spec, dict):
        spec = ModelSpec.from_dict(spec)
    family = make_family(spec.family)
    design = build_design(spec, data, frame=frame)
    n_pen = len(design.penalties)
    if sp is not None:
        sp = np.broadcast_to(np.asarray(sp, dtype=float), (n_pen,)).copy()
        for pb, v in zip(design.penalties, sp):
            pb.fixed = float(v)
    design = _drop_unpenalized_lag_only(spec, data, design)
    null_dim = design.p - sum(design.ranks.values())
    if design.X.shape[0] <= null_dim:
        raise ValueError("fewer data rows than unpenalized coefficients")

    if family.has_theta and theta is None and isinstance(spec.family, dict) \
            and spec.family.get("theta") is not None and spec.family.get("fix_theta", False):
        theta = float(spec.family["theta"])
    estimate_theta = family.has_theta and theta is None
    free = design.free
    x0_sp = _start_log_sp(design, family)
    lower = x0_sp - LOG_SP_HALF_RANGE
    upper = x0_sp + LOG_SP_HALF_RANGE
    base_sp = np.array([0.0 if pb.fixed is None else pb.fixed for pb in design.penalties])

    x0 = list(x0_sp[free])
    bounds = [(lower[i], upper[i]) for i in free]
    if estimate_theta:
        x0.append(min(max(_theta_start(design.y), LOG_THETA_BOUNDS[0]), LOG_THETA_BOUNDS[1]))
        bounds.append(LOG_THETA_BOUNDS)
    x0 = np.array(x0, dtype=float)
    fixed_theta = theta

    def unpack(x):
        s = base_sp.copy()
        s[free] = np.exp(x[: len(free)])
        fam = family
        if estimate_theta:
            fam = NegativeBinomial(float(math.exp(x[-1])))
        elif family.has_theta and fixed_theta is not None:
            fam = NegativeBinomial(float(fixed_theta))
        return s, fam

    state = {"beta": None}

    def objective(x):
        s, fam = unpack(x)
        try:
            score, res = laplace_reml(design, s, fam, beta0=state["beta"])
        except (np.linalg.LinAlgError, FloatingPointError, ValueError):
            return 1e300
        if not np.isfinite(score) or not res.converged:
            return 1e300
        state["beta"] = res.beta
        return -score

    rng = np.random.default_rng(seed)
    starts = [x0]
    for _ in range(max(n_starts, 1) - 1):
        starts.append(np.clip(x0 + rng.normal(0.0, 2.0, size=x0.shape),
                              [b[0] for b in bounds], [b[1] for b in bounds]))

    runs = []
    if len(x0) == 0:
        # nothing to optimize; the score may be -inf (e.g. all penalties zero)
        s_fix, fam_fix = unpack(x0)
        score, res = laplace_reml(design, s_fix, fam_fix)
        if not res.converged:
            raise ConvergenceError("PIRLS did not converge at the fixed smoothing parameters")
        return _finalize(spec, design, fam_fix, s_fix, score, res, True,
                         report={"starts": [], "seed": int(seed)})
    else:
        f0 = objective(x0)
        fatol = OUTER_TOL * max(abs(f0), 1.0) if f0 < 1e299 else OUTER_TOL
        for start in starts:
            state["beta"] = None
            simplex = [start]
            for i in range(len(start)):
                v = start.copy()
                v[i] += 2.0 if start[i] + 2.0 <= bounds[i][1] else -2.0
                simplex.append(v)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = optimize.minimize(
                    objective, start, method="Nelder-Mead", bounds=bounds,
                    options={"initial_simplex": np.array(simplex), "xatol": 0.05,
                             "fatol": fatol, "maxiter": 200 * len(start),
                             "maxfev": 300 * len(start)},
                )
            runs.append({"x": res.x, "score": -float(res.fun), "success": bool(res.success),
                         "nfev": int(res.nfev)})
            logger.debug("start %s -> score %.6f (%s)", start, -res.fun, res.message)

    usable = [r for r in runs if np.isfinite(r["score"]) and r["score"] > -1e299]
    if not usable:
        raise ConvergenceError("inner fit failed at every starting point")
    best = max(usable, key=lambda r: r["score"])
    s_hat, fam_hat = unpack(np.asarray(best["x"], dtype=float))
    score, res = laplace_reml(design, s_hat, fam_hat)
    if not res.converged:
        raise ConvergenceError("PIRLS did not converge at the selected smoothing parameters")
    converged = bool(best["success"])
    return _finalize(spec, design, fam_hat, s_hat, score, res, converged,
                     report={"starts": [{"score": r["score"], "success": r["success"],
                                         "nfev": r["nfev"]} for r in runs],
                             "seed": int(seed)})


def _drop_unpenalized_lag_only(spec, data, design):
    """Remove lag-only directions from lag terms whose penalties are all fixed at 0.

    Without a penalty those coefficients are not identified at all, so they
    are dropped (as a rank-deficient GLM would) instead of being pinned by
    the jitter, which would silently act as a ridge.
    """
    fixed = {}
    for pb in design.penalties:
        fixed.setdefault(pb.term, []).append(pb.fixed)
    terms = list(design.terms)
    changed = False
    for ti, term in enumerate(terms):
        tensor = getattr(term, "tensor", None)
        if tensor is None or not tensor.lag_summed or tensor.hierarchy is not None:
            continue
        values = fixed.get(ti, [])
        if not values or any(v is None or v != 0.0 for v in values):
            continue
        N = lag_only_directions(tensor)
        if N is None:
            continue
        terms[ti] = type(term)(term.name, drop_directions(tensor, N), term.sp, spec=term.spec,
                               kind=term.kind)
        changed = True
    if not changed:
        return design
    new = build_design(spec, data, terms=terms, frame=design.frame)
    for pb_new, pb_old in zip(new.penalties, design.penalties):
        pb_new.fixed = pb_old.fixed
    return new


def _canonical_covariance(design, S, Vb):
    """Posterior covariance of the minimum-penalty representative.

    A lag-summed term cannot distinguish surfaces that differ by a function
    of lag alone summing to zero over the lags; those directions carry no
    likelihood information, only prior width. The estimate already has the
    smallest penalty within its class, and each draw is mapped the same way,
    so intervals reflect what the data identify.
    """
    blocks = []
    for term, sl in zip(design.terms, design.slices):
        tensor = getattr(term, "tensor", None)
        if tensor is None or not tensor.lag_summed:
            continue
        N = lag_only_directions(tensor)
        if N is None:
            continue
        Xt = design.X[:, sl]
        if np.linalg.norm(Xt @ N) > INVISIBLE_TOL * max(np.linalg.norm(Xt), 1.0):
            continue
        if N.shape[1]:
            full = np.zeros((design.p, N.shape[1]))
            full[sl] = N
            blocks.append(full)
    if not blocks:
        return Vb
    N = np.hstack(blocks)
    SN = S @ N
    M = N.T @ SN
    if np.linalg.matrix_rank(M) < M.shape[0]:
        return Vb
    P = np.eye(design.p) - N @ np.linalg.solve(M, SN.T)
    out = P @ Vb @ P.T
    return np.ascontiguousarray(0.5 * (out + out.T))


def _finalize(spec, design, family, sp, score, res, converged, report):
    X = design.X
    S = design.total_penalty(sp)
    XtWX = (X.T * res.w) @ X
    H = XtWX + S
    cf, _ = _factor(H)
    Vb = linalg.cho_solve(cf, np.eye(design.p), check_finite=False)
    Vb = np.ascontiguousarray(0.5 * (Vb + Vb.T))
    F = Vb @ XtWX
    diagF = np.diag(F)
    Vb = _canonical_covariance(design, S, Vb)
    edf = {}
    term_index = {}
    for term, sl in zip(design.terms, design.slices):
        term_index[term.name] = (sl.start, sl.stop)
        if term.kind != "intercept":
            edf[term.name] = float(diagF[sl].sum())
    edf_total = float(diagF.sum())
    ll = family.loglik(design.y, res.mu)
    aic_value = -2.0 * ll + 2.0 * (edf_total + family.n_extra_params())
    names = [f"{design.terms[pb.term].name}[{pb.index}]" for pb in design.penalties]
    with np.errstate(divide="ignore"):
        log_sp = np.log(np.asarray(sp, dtype=float))
    report = dict(report)
    report["pirls_iterations"] = res.iterations
    report["deviation_centering"] = "per-group"
    return FittedModel(
        spec=spec,
        terms=design.terms,
        family=family,
        coef=np.ascontiguousarray(res.beta),
        cov=Vb,
        log_sp=log_sp,
        sp_names=names,
        edf=edf,
        edf_total=edf_total,
        reml=float(score),
        aic=float(aic_value),
        deviance=float(res.deviance),
        loglik=float(ll),
        n=int(X.shape[0]),
        lag=int(design.frame.L),
        converged=converged,
        fitted=res.mu,
        term_index=term_index,
        report=report,
        summaries=_summaries(design.frame),
    )


def _summaries(frame) -> dict:
    """Quantiles of the lagged covariates, used for default grids and range checks."""
    out = {}
    for name, xl in frame.xlag.items():
        v = np.asarray(xl, dtype=float).ravel()
        v = v[np.isfinite(v)]
        if v.size == 0:
            continue
        q = np.quantile(v, [0.01, 0.05, 0.5, 0.95, 0.99])
        out[name] = {"min": float(v.min()), "max": float(v.max()), "q01": float(q[0]),
                     "q05": float(q[1]), "q50": float(q[2]), "q95": float(q[3]),
                     "q99": float(q[4])}
    return out


@dataclass
class Prediction:
    eta: np.ndarray
    mu: np.ndarray
    index: np.ndarray
    terms: dict


def predict_terms(model: FittedModel, newdata: TimeSeriesDataset) -> Prediction:
    """Per-term contributions, linear predictor and mean on ``newdata``.

    Rows without enough lag history are dropped; ``index`` maps the returned
    rows back to positions in ``newdata``.
    """
    try:
        frame = model_frame(model.spec, newdata, require_counts=False)
    except ValueError as exc:
        raise ValueError(f"insufficient lag history: {exc}") from exc
    contributions = {}
    blocks = []
    for term in model.terms:
        Xt = term.design(newdata, frame)
        blocks.append(Xt)
        contributions[term.name] = Xt @ model.coef_of(term.name)
    eta = np.hstack(blocks) @ model.coef
    off = offset_values(model.spec, newdata, frame)
    if off is not None:
        eta = eta + off
    return Prediction(eta=eta, mu=model.family.linkinv(eta), index=frame.index,
                      terms=contributions)


def predict(model: FittedModel, newdata: TimeSeriesDataset):
    """Linear predictor and mean ``(eta, mu)`` on the usable rows of ``newdata``."""
    pred = predict_terms(model, newdata)
    return pred.eta, pred.mu


def model_design(model: FittedModel, data: TimeSeriesDataset):
    """Model matrix, log offset and frame of ``data`` under a fitted model."""
    frame = model_frame(model.spec, data)
    X = np.hstack([t.design(data, frame) for t in model.terms])
    return X, offset_values(model.spec, data, frame), frame
