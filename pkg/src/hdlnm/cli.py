"""Command-line front end driven by a single JSON run configuration.

Example::

    hdlnm fit --config run.json --seed 1
    hdlnm risk --config run.json --model out/model.json --seed 1
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import basis_dim_check, overdispersion_test, run_checks
from .fit import ConvergenceError, FittedModel, fit, model_design, predict_terms
from .lagdata import read_csv
from .posterior import posterior_predictive, sample_coefficients, write_draws_csv
from .risk import (
    ExtrapolationWarning,
    attributable,
    cumulative_risk,
    group_contrast,
    optimum_value,
    rr_surface,
)
from .terms import ModelSpec

__all__ = ["main", "load_config", "render_heatmap_svg", "CONFIG_SCHEMA_VERSION"]

CONFIG_SCHEMA_VERSION = 1
STOCHASTIC = ("fit", "risk", "check", "simulate")
EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2


class ConfigError(ValueError):
    pass


class RunContext:
    """Resolved configuration, output directory and provenance header."""

    def __init__(self, config: dict, base: Path, args):
        self.config = config
        self.base = base
        self.args = args
        paths = config.get("paths", {})
        out = args.out if args.out is not None else paths.get("out", "out")
        self.out = self.resolve(out)
        self.seed = args.seed if args.seed is not None else config.get("seed")
        self.threads = max(1, int(args.threads or 1))
        canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
        self.config_hash = hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base / p

    def existing(self, p, what) -> Path:
        path = self.resolve(p)
        if not path.exists():
            raise FileNotFoundError(f"{what} not found: {path}")
        return path

    @property
    def header(self) -> str:
        seed = "none" if self.seed is None else str(int(self.seed))
        return f"hdlnm {__version__} config={self.config_hash} seed={seed}"

    def data(self, key="data"):
        paths = self.config.get("paths", {})
        if key not in paths:
            raise ConfigError(f"paths.{key} is required")
        return read_csv(self.existing(paths[key], "data file"))

    def model_path(self) -> Path:
        if self.args.model is not None:
            return Path(self.args.model)
        paths = self.config.get("paths", {})
        return self.resolve(paths["model"]) if "model" in paths else self.out / "model.json"

    def load_model(self) -> FittedModel:
        path = self.model_path()
        if not path.exists():
            raise FileNotFoundError(f"model file not found: {path}")
        return FittedModel.from_json(path.read_text())

    def write_json(self, name_or_path, obj) -> Path:
        path = name_or_path if isinstance(name_or_path, Path) else self.out / name_or_path
        path.parent.mkdir(parents=True, exist_ok=True)
        body = {"header": self.header, **obj}
        path.write_text(json.dumps(body, sort_keys=True, indent=2) + "\n")
        return path


def load_config(path) -> dict:
    """Read and validate a run configuration."""
    try:
        config = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    version = config.get("schema_version")
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema_version {version!r}")
    if "model" in config:
        ModelSpec.from_dict(config["model"])
    return config


def _grid(spec):
    if spec is None:
        return None
    if isinstance(spec, dict):
        try:
            return np.linspace(float(spec["from"]), float(spec["to"]), int(spec.get("n", 100)))
        except KeyError as exc:
            raise ConfigError(f"grid needs 'from' and 'to': missing {exc}") from exc
    grid = np.asarray(spec, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ConfigError("grid must be a non-empty list or a {from, to, n} object")
    return grid


def cmd_fit(ctx: RunContext) -> int:
    config = ctx.config
    if "model" not in config:
        raise ConfigError("config has no model block")
    spec = ModelSpec.from_dict(config["model"])
    data = ctx.data()
    opts = config.get("fit", {})
    model = fit(spec, data, seed=int(ctx.seed), n_starts=int(opts.get("n_starts", 3)))
    out = model.to_dict()
    out["header"] = ctx.header
    path = ctx.model_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(out, sort_keys=True, separators=(",", ":")) + "\n")
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        edf_table = basis_dim_check(model)
    try:
        od = overdispersion_test(model)
    except ValueError:
        od = None
    report = {
        "converged": bool(model.converged),
        "aic": model.aic,
        "reml": model.reml,
        "deviance": model.deviance,
        "n": model.n,
        "family": model.family.to_dict(),
        "edf": edf_table,
        "edf_total": model.edf_total,
        "smoothing_parameters": {n: (None if not np.isfinite(v) else float(v))
                                 for n, v in zip(model.sp_names, model.log_sp)},
        "overdispersion": od,
        "optimizer": model.report,
    }
    ctx.write_json("fit_report.json", report)
    print(f"fitted {model.n} rows: AIC {model.aic:.2f}, edf {model.edf_total:.2f}, "
          f"converged {model.converged}")
    return EXIT_OK if model.converged else EXIT_NOT_CONVERGED


def cmd_predict(ctx: RunContext) -> int:
    model = ctx.load_model()
    key = "newdata" if "newdata" in ctx.config.get("paths", {}) else "data"
    data = ctx.data(key)
    pred = predict_terms(model, data)
    ctx.out.mkdir(parents=True, exist_ok=True)
    path = ctx.out / "predictions.csv"
    has_group = data.group is not None
    with open(path, "w", newline="") as fh:
        fh.write(f"# {ctx.header}\n")
        fh.write("date," + ("group," if has_group else "") + "eta,mu\n")
        for i, e, m in zip(pred.index, pred.eta, pred.mu):
            g = f"{data.group[i]}," if has_group else ""
            fh.write(f"{data.time[i]},{g}{float(e)!r},{float(m)!r}\n")
    print(f"wrote {len(pred.eta)} predictions to {path}")
    return EXIT_OK


def cmd_risk(ctx: RunContext) -> int:
    model = ctx.load_model()
    opts = ctx.config.get("risk", {})
    term = opts.get("term")
    if term is None:
        lag_terms = [t.name for t in model.terms if t.kind == "lag_tensor"]
        if not lag_terms:
            raise ConfigError("model has no lag tensor term")
        term = lag_terms[0]
    level = float(opts.get("level", 0.95))
    draws = sample_coefficients(model, int(opts.get("n_draws", 1000)), int(ctx.seed),
                                threads=ctx.threads)
    common = dict(x_grid=_grid(opts.get("x_grid")), at=opts.get("at"), level=level, draws=draws)
    group = opts.get("group")
    ctx.out.mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ExtrapolationWarning)
        rr = rr_surface(model, term, lags=opts.get("lags"), reference=opts.get("reference"),
                        group=group, **common)
        cr = cumulative_risk(model, term, reference=opts.get("reference"), group=group, **common)
    rr.to_csv(ctx.out / "rr_surface.csv", ctx.header)
    cr.to_csv(ctx.out / "cr.csv", ctx.header)

    cr_raw = cumulative_risk(model, term, x_grid=common["x_grid"], at=common["at"],
                             group=group, level=level, draws=draws)
    ot = opts.get("ot")
    if ot is None:
        ot = [optimum_value(cr_raw)[0]]
        t = model.term(term)
        for name in t.tensor.covariates[1:]:
            ot.append(float(rr.fixed[name]))
    data_key = "data" if "data" in ctx.config.get("paths", {}) else None
    if data_key is not None:
        data = ctx.data(data_key)
        x0 = data.variable(model.term(term).tensor.covariates[0])
        q_hi, q_lo = float(opts.get("heat_quantile", 0.95)), float(opts.get("cold_quantile", 0.05))
        finite = x0[np.isfinite(x0)]
        hi_cut, lo_cut = np.quantile(finite, [q_hi, q_lo])
        with np.errstate(invalid="ignore"):
            subsets = {"heat": x0 > hi_cut, "cold": x0 < lo_cut}
        subsets = {k: v for k, v in subsets.items() if v.any()}
        af = attributable(model, term, data, ot=ot, level=level, subsets=subsets, draws=draws)
        body = af.to_dict(include_series=bool(opts.get("af_series", False)))
        body["thresholds"] = {"heat": float(hi_cut), "cold": float(lo_cut)}
        ctx.write_json("af.json", body)
    contrast = opts.get("contrast")
    if contrast:
        gc = group_contrast(model, term, contrast["a"], contrast["b"], lags=opts.get("lags"),
                            **common)
        gc.to_csv(ctx.out / "contrast.csv", ctx.header)
    if opts.get("heatmap", True):
        (ctx.out / "heatmap.svg").write_text(render_heatmap_svg(rr, ctx.header))
    extrapolated = any(issubclass(w.category, ExtrapolationWarning) for w in caught)
    print(f"risk grids for term {term!r} written to {ctx.out}"
          + (" (grid extrapolates beyond the training range)" if extrapolated else ""))
    return EXIT_OK


def cmd_check(ctx: RunContext) -> int:
    model = ctx.load_model()
    data = ctx.data()
    opts = ctx.config.get("check", {})
    report = run_checks(model, data, n_draws=int(opts.get("n_draws", 1000)), seed=int(ctx.seed),
                        max_lag=int(opts.get("max_lag", 30)), level=float(opts.get("level", 0.95)))
    ctx.out.mkdir(parents=True, exist_ok=True)
    ctx.write_json("diagnostics.json", report.to_dict())
    report.quantiles_csv(ctx.out / "ppc_quantiles.csv", ctx.header)
    report.acf_csv(ctx.out / "ppc_acf.csv", ctx.header)
    print(report.summary_text())
    return EXIT_OK


def cmd_simulate(ctx: RunContext) -> int:
    model = ctx.load_model()
    data = ctx.data()
    opts = ctx.config.get("simulate", {})
    n_draws = int(opts.get("n_draws", 100))
    if n_draws < 1:
        raise ConfigError("simulate.n_draws must be positive")
    draws = sample_coefficients(model, n_draws, int(ctx.seed), threads=ctx.threads)
    sims = posterior_predictive(model, data, seed=int(ctx.seed), draws=draws)
    _, _, frame = model_design(model, data)
    columns = [str(t) for t in frame.time]
    if frame.group is not None:
        columns = [f"{g}:{t}" for g, t in zip(frame.group, columns)]
    ctx.out.mkdir(parents=True, exist_ok=True)
    write_draws_csv(ctx.out / "ppd_draws.csv", sims, ctx.header, columns=columns)
    print(f"wrote {n_draws} predictive draws of {sims.shape[1]} days")
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "risk": cmd_risk, "check": cmd_check,
            "simulate": cmd_simulate}


def _colour(v, vmax):
    """Blue-white-red on log RR, white at RR = 1."""
    t = 0.0 if vmax <= 0 else max(-1.0, min(1.0, v / vmax))
    if t >= 0:
        r, g, b = 255, round(255 * (1 - t)), round(255 * (1 - t))
    else:
        r, g, b = round(255 * (1 + t)), round(255 * (1 + t)), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def render_heatmap_svg(grid, header: str = "", cell: int = 6, height_cell: int = 14) -> str:
    """Cell-coloured SVG of an RR surface (lags vertically, covariate horizontally)."""
    if grid.lags is None:
        raise ValueError("heatmap needs a lag x covariate grid")
    logrr = np.log(grid.est)
    vmax = float(np.max(np.abs(logrr)))
    n_lag, n_x = logrr.shape
    left, top = 40, 20
    width = left + n_x * cell + 80
    height = top + n_lag * height_cell + 40
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">']
    if header:
        out.append(f"<!-- {header} -->")
    for i in range(n_lag):
        y = top + (n_lag - 1 - i) * height_cell
        for j in range(n_x):
            x = left + j * cell
            out.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{height_cell}" '
                       f'fill="{_colour(logrr[i, j], vmax)}"/>')
        if i % 5 == 0:
            out.append(f'<text x="{left - 4}" y="{y + height_cell - 3}" font-size="10" '
                       f'text-anchor="end">{grid.lags[i]:g}</text>')
    base = top + n_lag * height_cell
    for j in range(0, n_x, max(1, n_x // 5)):
        out.append(f'<text x="{left + j * cell}" y="{base + 12}" font-size="10">'
                   f'{grid.x[j]:.1f}</text>')
    out.append(f'<text x="{left}" y="{base + 28}" font-size="11">covariate</text>')
    out.append(f'<text x="4" y="{top - 6}" font-size="11">lag</text>')
    lx = left + n_x * cell + 20
    for k, v in enumerate(np.linspace(vmax, -vmax, 11)):
        out.append(f'<rect x="{lx}" y="{top + k * 10}" width="12" height="10" '
                   f'fill="{_colour(v, vmax)}"/>')
    out.append(f'<text x="{lx + 16}" y="{top + 8}" font-size="10">{np.exp(vmax):.2f}</text>')
    out.append(f'<text x="{lx + 16}" y="{top + 58}" font-size="10">1</text>')
    out.append(f'<text x="{lx + 16}" y="{top + 108}" font-size="10">{np.exp(-vmax):.2f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdlnm", description="Hierarchical distributed-lag "
                                     "non-linear models for daily count series.")
    parser.add_argument("--version", action="version", version=f"hdlnm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument("--model", help="model JSON (written by fit, read by the others)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for draws")
    return parser


def _error(kind, message) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": str(message)}, sort_keys=True) + "\n")
    return EXIT_ERROR


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config_path = Path(args.config)
        if not config_path.exists():
            raise FileNotFoundError(f"config not found: {config_path}")
        config = load_config(config_path)
        ctx = RunContext(config, config_path.resolve().parent, args)
        if args.command in STOCHASTIC and ctx.seed is None:
            return _error("ConfigError", "seed required")
        return COMMANDS[args.command](ctx)
    except ConvergenceError as exc:
        sys.stderr.write(json.dumps({"error": "ConvergenceError", "message": str(exc)}) + "\n")
        return EXIT_NOT_CONVERGED
    except (OSError, ValueError, KeyError, TypeError) as exc:
        return _error(type(exc).__name__, exc)


if __name__ == "__main__":
    sys.exit(main())
