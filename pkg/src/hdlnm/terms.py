"""Declarative model specification and the model terms it expands into."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .basis import EvaluatedBasis, center_basis, make_basis, predict_basis
from .lagdata import LagFrame, TimeSeriesDataset, build_lag_frame
from .tensor import (
    TensorTerm,
    hierarchical_term,
    lag_functional_rows,
    lag_tensor_term,
    row_kron,
    tensor_product,
)

__all__ = ["ModelSpec", "ModelTerm", "build_terms", "model_frame", "term_from_dict"]

TERM_KINDS = ("intercept", "smooth", "tensor", "lag_tensor", "hierarchical")


@dataclass
class ModelSpec:
    """Family, term list and offset of an additive count model.

    Each term is a dict with a ``kind`` among ``intercept``, ``smooth``,
    ``tensor``, ``lag_tensor`` and ``hierarchical``; see the README for the
    fields of each kind. ``sp`` in a term fixes its smoothing parameters
    (one entry per penalty, ``None`` entries are estimated).
    """

    terms: list
    family: dict | str = "poisson"
    offset: str | None = None

    def __post_init__(self):
        self.terms = [dict(t) for t in self.terms]
        kinds = [t.get("kind") for t in self.terms]
        if kinds.count("intercept") != 1:
            raise ValueError("model needs exactly one intercept term")
        for t in self.terms:
            if t.get("kind") not in TERM_KINDS:
                raise ValueError(f"unknown term kind {t.get('kind')!r}")
        names = [t.get("name", t["kind"]) for t in self.terms]
        if len(set(names)) != len(names):
            raise ValueError("term names must be unique")

    @property
    def max_lag(self) -> int:
        lags = [int(t["lag"]) for t in self.terms if t["kind"] in ("lag_tensor", "hierarchical")]
        return max(lags, default=0)

    @property
    def lag_covariates(self) -> list:
        out = []
        for t in self.terms:
            if t["kind"] in ("lag_tensor", "hierarchical"):
                for c in t["covariates"]:
                    if c not in out:
                        out.append(c)
        return out

    @property
    def plain_variables(self) -> list:
        out = []
        for t in self.terms:
            if t["kind"] == "smooth":
                out.append(t["variable"])
            elif t["kind"] == "tensor":
                out.extend(t["variables"])
        return out

    def to_dict(self) -> dict:
        return {"family": copy.deepcopy(self.family), "terms": copy.deepcopy(self.terms),
                "offset": self.offset}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(terms=d["terms"], family=d.get("family", "poisson"), offset=d.get("offset"))


def _variable(data: TimeSeriesDataset, frame: LagFrame, name: str) -> np.ndarray:
    if name == "group":
        if frame.group is None:
            raise KeyError("data has no group column")
        return frame.group
    return data.variable(name)[frame.index]


def model_frame(spec: ModelSpec, data: TimeSeriesDataset, require_counts: bool = True) -> LagFrame:
    """Rows usable for ``spec``: complete lag history and no missing inputs."""
    frame = build_lag_frame(data, spec.max_lag, spec.lag_covariates, require_counts)
    keep = np.ones(frame.n, dtype=bool)
    for name in spec.plain_variables:
        if name == "group":
            continue
        values = data.variable(name)[frame.index]
        keep &= ~np.isnan(values)
    off = offset_values(spec, data, frame)
    if off is not None:
        keep &= np.isfinite(off)
    if not keep.all():
        frame = frame.subset(keep)
    if frame.n == 0:
        raise ValueError("no usable rows")
    return frame


def offset_values(spec: ModelSpec, data: TimeSeriesDataset, frame: LagFrame):
    """Log offset on the frame rows, or None."""
    if spec.offset is None:
        return None
    if spec.offset == "offset":
        if data.offset is None:
            raise KeyError("data has no offset column")
        raw = data.offset[frame.index]
    else:
        raw = data.variable(spec.offset)[frame.index]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(raw > 0, np.log(np.where(raw > 0, raw, 1.0)), np.nan)


class ModelTerm:
    """One additive component of the linear predictor.

    ``penalties`` are ``n_coef x n_coef`` matrices local to the term;
    ``identifiability`` (if any) spans coefficient directions that neither
    data nor penalties determine and is pinned to zero by the fitter.
    """

    def __init__(self, name, kind, n_coef, penalties=(), sp=None, identifiability=None,
                 spec=None):
        self.name = name
        self.kind = kind
        self.n_coef = int(n_coef)
        self.penalties = list(penalties)
        self.sp = list(sp) if sp is not None else [None] * len(self.penalties)
        if len(self.sp) != len(self.penalties):
            raise ValueError(f"term {name!r}: sp needs one entry per penalty ({len(self.penalties)})")
        self.identifiability = identifiability
        self.spec = spec or {}

    def design(self, data: TimeSeriesDataset, frame: LagFrame) -> np.ndarray:
        raise NotImplementedError

    def _base_dict(self):
        return {
            "name": self.name,
            "kind": self.kind,
            "n_coef": self.n_coef,
            "sp": self.sp,
            "spec": self.spec,
            "identifiability": _arr_to(self.identifiability),
        }

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r}, n_coef={self.n_coef})"


def _arr_to(a):
    if a is None:
        return None
    a = np.asarray(a)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _arr_from(d):
    if d is None:
        return None
    return np.ascontiguousarray(np.array(d["data"], dtype=float).reshape(d["shape"]))


class InterceptTerm(ModelTerm):
    def __init__(self, name="intercept"):
        super().__init__(name, "intercept", 1)

    def design(self, data, frame):
        return np.ones((frame.n, 1))

    def to_dict(self):
        return self._base_dict()


class SmoothTerm(ModelTerm):
    """One-dimensional smooth of a (possibly derived) variable."""

    def __init__(self, name, variable, basis: EvaluatedBasis, sp=None, spec=None):
        super().__init__(name, "smooth", basis.k, basis.penalties, sp, spec=spec)
        self.variable = variable
        self.basis = basis

    @classmethod
    def build(cls, t, data, frame):
        values = _variable(data, frame, t["variable"])
        b = make_basis(t.get("basis", {}), values)
        center = t.get("center", b.kind != "ridge_factor")
        if center:
            b = center_basis(b)
        return cls(t.get("name", t["variable"]), t["variable"], b, t.get("sp"), spec=t)

    def design(self, data, frame):
        return predict_basis(self.basis, _variable(data, frame, self.variable))

    def to_dict(self):
        d = self._base_dict()
        d.update(variable=self.variable, basis=self.basis.to_dict())
        return d


class TensorSmoothTerm(ModelTerm):
    """Tensor product of smooths of current-day variables."""

    def __init__(self, name, variables, tensor: TensorTerm, sp=None, spec=None):
        super().__init__(name, "tensor", tensor.n_coef, tensor.penalties, sp, spec=spec)
        self.variables = list(variables)
        self.tensor = tensor

    @classmethod
    def build(cls, t, data, frame):
        margins = [make_basis(b, _variable(data, frame, v))
                   for v, b in zip(t["variables"], t["bases"])]
        tensor = tensor_product(margins, center=True)
        return cls(t.get("name", ":".join(t["variables"])), t["variables"], tensor,
                   t.get("sp"), spec=t)

    def design(self, data, frame):
        raw = row_kron(*[predict_basis(m, _variable(data, frame, v))
                         for m, v in zip(self.tensor.margins, self.variables)])
        return raw @ self.tensor.constraint

    def to_dict(self):
        d = self._base_dict()
        d.update(variables=self.variables, tensor=_tensor_to_dict(self.tensor))
        return d


class LagTensorTerm(ModelTerm):
    """Lag-summed tensor term: ``sum_l h(l, x_{t-l}, ...)``."""

    def __init__(self, name, tensor: TensorTerm, sp=None, spec=None, kind="lag_tensor"):
        super().__init__(name, kind, tensor.n_coef, tensor.penalties, sp,
                         identifiability=tensor.identifiability, spec=spec)
        self.tensor = tensor

    @property
    def covariates(self):
        return self.tensor.covariates

    @property
    def lag(self):
        return self.tensor.lag

    def design(self, data, frame):
        return lag_functional_rows(self.tensor, frame)

    def to_dict(self):
        d = self._base_dict()
        d.update(tensor=_tensor_to_dict(self.tensor))
        return d


def _tensor_to_dict(tensor: TensorTerm) -> dict:
    return {
        "margins": [m.to_dict() for m in tensor.margins],
        "constraint": _arr_to(tensor.constraint),
        "lag_summed": tensor.lag_summed,
        "covariates": list(tensor.covariates),
        "lag": tensor.lag,
        "nullspace_dim": [int(v) for v in tensor.nullspace_dim],
        "hierarchy": None if tensor.hierarchy is None else {
            "levels": list(tensor.hierarchy["levels"]),
            "constraints": [_arr_to(Z) for Z in tensor.hierarchy["constraints"]],
        },
        "identifiability": _arr_to(tensor.identifiability),
    }


def _tensor_from_dict(d: dict) -> TensorTerm:
    hierarchy = None
    if d["hierarchy"] is not None:
        hierarchy = {"levels": list(d["hierarchy"]["levels"]),
                     "constraints": [_arr_from(Z) for Z in d["hierarchy"]["constraints"]]}
    return TensorTerm(
        margins=[EvaluatedBasis.from_dict(m) for m in d["margins"]],
        penalties=[],
        nullspace_dim=list(d["nullspace_dim"]),
        constraint=_arr_from(d["constraint"]),
        lag_summed=d["lag_summed"],
        covariates=list(d["covariates"]),
        lag=d["lag"],
        hierarchy=hierarchy,
        identifiability=_arr_from(d["identifiability"]),
    )


def term_from_dict(d: dict) -> ModelTerm:
    """Rebuild a term for prediction (penalty matrices are not restored)."""
    kind = d["kind"]
    if kind == "intercept":
        term = InterceptTerm(d["name"])
    elif kind == "smooth":
        b = EvaluatedBasis.from_dict(d["basis"])
        term = SmoothTerm(d["name"], d["variable"], b, d["sp"], spec=d["spec"])
    elif kind == "tensor":
        tensor = _tensor_from_dict(d["tensor"])
        term = TensorSmoothTerm.__new__(TensorSmoothTerm)
        ModelTerm.__init__(term, d["name"], "tensor", d["n_coef"], [], None, spec=d["spec"])
        term.variables, term.tensor = d["variables"], tensor
    elif kind in ("lag_tensor", "deviation"):
        tensor = _tensor_from_dict(d["tensor"])
        term = LagTensorTerm.__new__(LagTensorTerm)
        ModelTerm.__init__(term, d["name"], kind, d["n_coef"], [], None,
                           identifiability=tensor.identifiability, spec=d["spec"])
        term.tensor = tensor
    else:
        raise ValueError(f"unknown term kind {kind!r}")
    term.sp = list(d["sp"])
    return term


def build_terms(spec: ModelSpec, data: TimeSeriesDataset, frame: LagFrame) -> list:
    """Expand the spec into model terms fitted on ``frame``."""
    terms = []
    for t in spec.terms:
        kind = t["kind"]
        if kind == "intercept":
            terms.append(InterceptTerm(t.get("name", "intercept")))
        elif kind == "smooth":
            terms.append(SmoothTerm.build(t, data, frame))
        elif kind == "tensor":
            terms.append(TensorSmoothTerm.build(t, data, frame))
        elif kind == "lag_tensor":
            tensor = lag_tensor_term(frame, t["covariates"], t["bases"], t["lag"])
            terms.append(LagTensorTerm(t.get("name", "h"), tensor, t.get("sp"), spec=t))
        elif kind == "hierarchical":
            if frame.group is None:
                raise KeyError("hierarchical term needs a group column")
            name = t.get("name", "h")
            tensor = lag_tensor_term(frame, t["covariates"], t["bases"], t["lag"])
            terms.append(LagTensorTerm(name, tensor, t.get("sp"), spec=t))
            dev = hierarchical_term(tensor, frame.group, frame)
            terms.append(LagTensorTerm(f"{name}:dev", dev, t.get("dev_sp"), spec=t,
                                       kind="deviation"))
            if t.get("group_intercept", True):
                gspec = {"kind": "smooth", "name": f"{name}:group", "variable": "group",
                         "basis": {"type": "ridge_factor"}, "center": False,
                         "sp": t.get("group_sp")}
                terms.append(SmoothTerm.build(gspec, data, frame))
    return terms
