"""Count families with a log link, plus a fixed-scale Gaussian used for checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, xlogy

__all__ = ["Family", "Poisson", "NegativeBinomial", "Gaussian", "make_family",
           "log_likelihood", "irls_weights", "deviance", "aic", "simulate"]


class Family:
    """Base class. Subclasses define the variance function and log pmf."""

    name = "family"
    link = "log"
    has_theta = False

    def linkfun(self, mu):
        return np.log(mu)

    def linkinv(self, eta):
        return np.exp(np.minimum(eta, 700.0))

    def mu_eta(self, mu):
        """d mu / d eta at ``mu``."""
        return mu

    def variance(self, mu):
        raise NotImplementedError

    def loglik_terms(self, y, mu):
        raise NotImplementedError

    def unit_deviance(self, y, mu):
        raise NotImplementedError

    def loglik(self, y, mu) -> float:
        mu = np.asarray(mu, dtype=float)
        if not np.all(np.isfinite(mu)):
            raise ValueError("non-finite mean")
        return float(np.sum(self.loglik_terms(np.asarray(y, dtype=float), mu)))

    def deviance(self, y, mu) -> float:
        return float(np.sum(self.unit_deviance(np.asarray(y, dtype=float), np.asarray(mu, dtype=float))))

    def working(self, y, mu, eta):
        """Working response and IRLS weights at the current fit."""
        mu = np.asarray(mu, dtype=float)
        if self.link == "log" and np.any(mu <= 0):
            raise ValueError("mean must be positive")
        d = self.mu_eta(mu)
        z = eta + (y - mu) / d
        w = d**2 / self.variance(mu)
        return z, w

    def initial_mu(self, y):
        return np.asarray(y, dtype=float) + 0.1

    def n_extra_params(self) -> int:
        return 0

    def to_dict(self) -> dict:
        return {"kind": self.name}


@dataclass(frozen=True)
class Poisson(Family):
    name = "poisson"

    def variance(self, mu):
        return mu

    def loglik_terms(self, y, mu):
        return xlogy(y, mu) - mu - gammaln(y + 1.0)

    def unit_deviance(self, y, mu):
        return 2.0 * (xlogy(y, y / mu) - (y - mu))

    def sample(self, mu, rng):
        return rng.poisson(mu).astype(float)


@dataclass(frozen=True)
class NegativeBinomial(Family):
    """Negative binomial with size ``theta``: variance ``mu + mu**2/theta``."""

    theta: float = 1.0
    name = "negbin"
    has_theta = True

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")

    def variance(self, mu):
        return mu + mu**2 / self.theta

    def loglik_terms(self, y, mu):
        th = self.theta
        return (gammaln(y + th) - gammaln(th) - gammaln(y + 1.0)
                + th * np.log(th / (th + mu)) + xlogy(y, mu / (th + mu)))

    def unit_deviance(self, y, mu):
        th = self.theta
        return 2.0 * (xlogy(y, y / mu) - (y + th) * np.log((y + th) / (mu + th)))

    def sample(self, mu, rng):
        th = self.theta
        return rng.negative_binomial(th, th / (th + np.asarray(mu, dtype=float))).astype(float)

    def n_extra_params(self) -> int:
        return 1

    def to_dict(self) -> dict:
        return {"kind": self.name, "theta": float(self.theta)}


@dataclass(frozen=True)
class Gaussian(Family):
    """Identity-link Gaussian with known variance ``scale``.

    Not a count family; it exists so that Gaussian closed forms (ridge
    shrinkage, marginal likelihoods) can be used as independent checks.
    """

    scale: float = 1.0
    name = "gaussian"
    link = "identity"

    def linkfun(self, mu):
        return np.asarray(mu, dtype=float)

    def linkinv(self, eta):
        return np.asarray(eta, dtype=float)

    def mu_eta(self, mu):
        return np.ones_like(mu)

    def variance(self, mu):
        return np.full_like(mu, self.scale)

    def loglik_terms(self, y, mu):
        return -0.5 * ((y - mu) ** 2 / self.scale + np.log(2 * np.pi * self.scale))

    def unit_deviance(self, y, mu):
        return (y - mu) ** 2 / self.scale

    def initial_mu(self, y):
        return np.asarray(y, dtype=float)

    def sample(self, mu, rng):
        return rng.normal(mu, np.sqrt(self.scale))

    def to_dict(self) -> dict:
        return {"kind": self.name, "scale": float(self.scale)}


def make_family(spec) -> Family:
    if isinstance(spec, Family):
        return spec
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec.get("kind", "poisson")
    if kind == "poisson":
        return Poisson()
    if kind in ("negbin", "negative_binomial"):
        return NegativeBinomial(float(spec.get("theta", 1.0)))
    if kind == "gaussian":
        return Gaussian(float(spec.get("scale", 1.0)))
    if kind in ("quasipoisson", "quasi_poisson"):
        raise ValueError("quasi-Poisson has no predictive distribution; use negbin")
    raise ValueError(f"unknown family {kind!r}")


def log_likelihood(family: Family, y, mu) -> float:
    return family.loglik(y, mu)


def irls_weights(family: Family, y, mu):
    """Working response ``z`` (on the linear-predictor scale) and weights ``w``."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if family.link == "log" and np.any(mu <= 0):
        raise ValueError("mean must be positive")
    return family.working(y, mu, family.linkfun(mu))


def deviance(family: Family, y, mu) -> float:
    return family.deviance(y, mu)


def aic(family: Family, y, mu, edf: float) -> float:
    """``-2 loglik + 2 edf``; the negative binomial size counts as one more."""
    return -2.0 * family.loglik(y, mu) + 2.0 * (edf + family.n_extra_params())


def simulate(family: Family, mu, rng) -> np.ndarray:
    """One draw per mean; ``rng`` is a :class:`numpy.random.Generator`."""
    return family.sample(np.asarray(mu, dtype=float), rng)
