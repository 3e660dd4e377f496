"""Unconstrained parametrization, meta-prior and log-priors.

The sampler works on ``z = (log phi_1, ..., log phi_p, z_delta)`` where the
nugget is recovered through a shifted sigmoid,

    phi_delta = (1 - lb) / (1 + exp(-z_delta)) + lb,   lb = 1e-12.

No Jacobian enters anywhere: the tempered targets are densities on z-space.
"""

import math
import re

import numpy as np
from scipy import stats
from scipy.special import expit, logit

from .gp import NUGGET_LOWER, HyperParams, InvalidArgumentError

LOG_LENGTH_SUPPORT = (-7.0, 7.0)
NUGGET_META_BETA = (0.5, 0.5)


class BoundaryError(ValueError):
    """The nugget sits on a bound of its support and has no finite logit."""


def to_unconstrained(phi, lower=NUGGET_LOWER):
    s = (phi.nugget - lower) / (1.0 - lower)
    if not (0.0 < s < 1.0):
        raise BoundaryError(f"nugget {phi.nugget!r} is not strictly inside ({lower}, 1)")
    return np.append(np.log(phi.lengths), logit(s))


def from_unconstrained(z, lower=NUGGET_LOWER):
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise InvalidArgumentError(f"unconstrained vector must be finite: {z}")
    nugget = min((1.0 - lower) * expit(z[-1]) + lower, 1.0)
    return HyperParams(np.exp(z[:-1]), nugget)


def _nudge(nugget, lower=NUGGET_LOWER):
    eps = 1e-9 * (1.0 - lower)
    return np.clip(nugget, lower + eps, 1.0 - eps)


def meta_prior_sample(rng, p, size=None, lower=NUGGET_LOWER):
    """Draw level-0 points in z-space.

    Log length-scales are uniform on [-7, 7]; the nugget is drawn from a
    Beta(0.5, 0.5) truncated to ``[lower, 1]`` and mapped through the logit.
    Returns a ``(p+1,)`` vector, or ``(size, p+1)`` when ``size`` is given.
    """
    if p < 1:
        raise InvalidArgumentError("need at least one input dimension")
    m = 1 if size is None else int(size)
    logs = rng.uniform(*LOG_LENGTH_SUPPORT, size=(m, p))
    beta = stats.beta(*NUGGET_META_BETA)
    u = rng.uniform(beta.cdf(lower), 1.0, size=m)
    nugget = _nudge(beta.ppf(u), lower)
    zd = logit((nugget - lower) / (1.0 - lower))
    out = np.column_stack([logs, zd])
    return out[0] if size is None else out


def truncated_nugget_cdf(x, lower=NUGGET_LOWER):
    """CDF of the nugget meta-prior, used as a test oracle."""
    beta = stats.beta(*NUGGET_META_BETA)
    lo = beta.cdf(lower)
    return np.clip((beta.cdf(x) - lo) / (1.0 - lo), 0.0, 1.0)


def log_prior_flat(phi, lower=NUGGET_LOWER):
    """Improper flat prior on positive length-scales, uniform nugget on [lower, 1]."""
    if np.any(phi.lengths <= 0) or not (lower <= phi.nugget <= 1.0):
        return -np.inf
    return 0.0


class LogNormalPrior:
    """Independent log-normal length-scales with a uniform nugget on [1e-12, 1].

    The density is in ``phi`` (not in ``log phi``), i.e. it includes the
    ``1/phi`` factor of the log-normal.
    """

    def __init__(self, mu=0.0, sigma=1.0):
        if not sigma > 0:
            raise InvalidArgumentError("log-normal sigma must be positive")
        self.mu = float(mu)
        self.sigma = float(sigma)

    def __call__(self, phi):
        if log_prior_flat(phi) == -np.inf:
            return -np.inf
        logs = np.log(phi.lengths)
        return float(
            np.sum(
                -logs
                - math.log(self.sigma)
                - 0.5 * math.log(2 * math.pi)
                - 0.5 * ((logs - self.mu) / self.sigma) ** 2
            )
        )

    def __repr__(self):
        return f"lognormal:{self.mu:g},{self.sigma:g}"


_LOGNORMAL = re.compile(r"^lognormal\s*[:(]\s*([^,\s]+)\s*,\s*([^)\s]+)\s*\)?$")


def parse_prior(name):
    """``"flat"`` or ``"lognormal:mu,sigma"`` (also ``"lognormal(mu,sigma)"``)."""
    name = name.strip().lower()
    if name == "flat":
        return log_prior_flat
    m = _LOGNORMAL.match(name)
    if m:
        return LogNormalPrior(float(m.group(1)), float(m.group(2)))
    raise InvalidArgumentError(f"unknown prior {name!r}; use 'flat' or 'lognormal:mu,sigma'")
