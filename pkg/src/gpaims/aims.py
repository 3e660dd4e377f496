"""Parallel AIMS-OPT: annealed importance sampling with two-stage acceptance.

Each annealing level ``k`` reuses the previous level's samples as *markers*.
A step of a chain

1. picks a marker with probability equal to its normalized importance weight,
2. proposes ``xi ~ N(marker, c_k * Sigma_k)`` and accepts it locally with
   ``min(1, exp(-(H(xi) - H(marker)) / tau_k))``,
3. accepts a locally accepted ``xi`` globally against the kernel mixture
   ``p_hat``, an independence Metropolis-Hastings correction,
4. after a global rejection, tries a second candidate from
   ``N(current, c_0 * Sigma_k)`` with the delayed-rejection probability.

Locally rejected steps leave the chain where it is.  Chains start at their
markers and their lengths are a multinomial draw on the importance weights, so
a level always holds exactly ``N`` samples.  All densities are handled in the
log domain and every chain owns a random stream derived from
``(master_seed, level, chain)``.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .gp import InvalidArgumentError, neg_log_posterior
from .transforms import from_unconstrained, log_prior_flat, meta_prior_sample

log = logging.getLogger(__name__)

RIDGE = 1e-10
LOG_2PI = math.log(2.0 * math.pi)


class DegeneratePopulationError(RuntimeError):
    """Every sample of a level has zero importance weight."""


@dataclass(frozen=True)
class SamplerConfig:
    sample_count: int = 2000
    ess_gamma: float = 0.5
    spread_decay: float = 0.5
    initial_spread: float = 1.0
    stop_ratio: float = 0.1
    tau_floor: float = 1e-6
    mode: str = "optimize"
    max_levels: int = 50
    master_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.sample_count < 10:
            raise InvalidArgumentError("sample_count must be at least 10")
        for name in ("ess_gamma", "spread_decay", "stop_ratio"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise InvalidArgumentError(f"{name} must lie in (0, 1), got {v}")
        if not self.initial_spread > 0:
            raise InvalidArgumentError("initial_spread must be positive")
        if not 0.0 < self.tau_floor < 1.0:
            raise InvalidArgumentError("tau_floor must lie in (0, 1)")
        if self.mode not in ("optimize", "sample"):
            raise InvalidArgumentError(f"mode must be 'optimize' or 'sample', got {self.mode!r}")
        if self.max_levels < 1:
            raise InvalidArgumentError("max_levels must be at least 1")
        if self.master_seed < 0:
            raise InvalidArgumentError("master_seed must be non-negative")
        if self.workers < 1:
            raise InvalidArgumentError("workers must be at least 1")


@dataclass
class AnnealingLevel:
    """One rung of the temperature ladder.

    ``norm_weights``, ``proposal_cov`` and ``spread`` are the quantities used to
    *build* this level from the previous one; they are ``None`` at level 0.
    """

    index: int
    tau: float
    samples: np.ndarray
    h_values: np.ndarray
    cov_delta: float
    spread: float
    norm_weights: np.ndarray = None
    proposal_cov: np.ndarray = None
    rates: dict = field(default_factory=dict)

    def summary(self):
        return {
            "level": self.index,
            "tau": self.tau,
            "cov_delta": self.cov_delta,
            "spread": self.spread,
            "local_rate": self.rates.get("local", math.nan),
            "global_rate": self.rates.get("global", math.nan),
            "dr_rate": self.rates.get("dr", math.nan),
            "min_h": float(np.min(self.h_values)),
        }


@dataclass
class SamplerResult:
    levels: list
    final_samples: np.ndarray
    h_values: np.ndarray
    converged: bool
    stop_reason: str

    @property
    def map_index(self):
        # np.argmin returns the first occurrence on ties
        return int(np.argmin(self.h_values))

    @property
    def map_candidate(self):
        return from_unconstrained(self.final_samples[self.map_index])

    @property
    def map_h(self):
        return float(self.h_values[self.map_index])

    @property
    def temperature_trace(self):
        return [lv.tau for lv in self.levels]

    @property
    def hyperparams(self):
        return [from_unconstrained(z) for z in self.final_samples]


# ---------------------------------------------------------------------------
# Level-wide statistics
# ---------------------------------------------------------------------------


def _inv_tau(tau):
    return 0.0 if math.isinf(tau) else 1.0 / tau


def _log_weights(h_values, delta):
    h = np.asarray(h_values, dtype=float)
    finite = np.isfinite(h)
    logw = np.full(h.shape, -np.inf)
    if finite.any():
        logw[finite] = -(h[finite] - h[finite].min()) * delta
    return logw


def importance_weights(h_values, tau_new, tau_old):
    """Normalized weights ``p_new / p_old`` at the previous level's samples."""
    if not (tau_new > 0 and tau_old > 0 and tau_new <= tau_old):
        raise InvalidArgumentError(f"need 0 < tau_new <= tau_old, got {tau_new}, {tau_old}")
    logw = _log_weights(h_values, _inv_tau(tau_new) - _inv_tau(tau_old))
    if not np.isfinite(logw).any():
        raise DegeneratePopulationError("all samples have infinite objective")
    w = np.exp(logw - logsumexp(logw))
    return w / w.sum()


def _log_ess(h_finite, delta):
    logw = -(h_finite - h_finite.min()) * delta
    return 2.0 * logsumexp(logw) - logsumexp(2.0 * logw)


def solve_temperature(h_values, tau_old, gamma, tau_floor, mode="optimize"):
    """Next temperature such that the importance weights keep ``gamma * N`` effective samples.

    Solved by bisection on ``delta = 1/tau_new - 1/tau_old`` since the effective
    sample size is strictly decreasing in ``delta``.  ``N`` counts the finite
    objective values only.  Returns ``tau_floor`` when even the floor keeps
    enough effective samples, or when the population is flat.
    """
    h = np.asarray(h_values, dtype=float)
    h = h[np.isfinite(h)]
    if h.size == 0:
        raise DegeneratePopulationError("all samples have infinite objective")
    inv_old = _inv_tau(tau_old)
    if np.ptp(h) == 0.0 or tau_old <= tau_floor:
        tau_new = tau_floor
    else:
        target = math.log(gamma * h.size)
        d_max = 1.0 / tau_floor - inv_old
        if _log_ess(h, d_max) >= target:
            tau_new = tau_floor
        else:
            lo, hi = 0.0, d_max
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if mid in (lo, hi) or hi - lo <= 1e-12 * hi:
                    break
                if _log_ess(h, mid) > target:
                    lo = mid
                else:
                    hi = mid
            d = 0.5 * (lo + hi)
            tau_new = 1.0 / (d + inv_old)
    if mode == "sample":
        tau_new = max(tau_new, 1.0)
    return tau_new


def effective_sample_size(weights):
    w = np.asarray(weights, dtype=float)
    return 1.0 / np.sum(w * w)


def weighted_covariance(samples, weights):
    """Weighted population covariance, ridged when not safely positive definite."""
    Z = np.atleast_2d(np.asarray(samples, dtype=float))
    w = np.asarray(weights, dtype=float)
    m = w @ Z
    C = Z - m
    S = (C * w[:, None]).T @ C
    S = 0.5 * (S + S.T)
    if np.linalg.eigvalsh(S)[0] < RIDGE:
        S = S + RIDGE * np.eye(S.shape[0])
    return S


def coefficient_of_variation(h_values, shift_min=None):
    """Population COV of the objective after shifting it to start at 1.

    ``shift_min`` is the running minimum of the objective over the ladder; the
    sample's own minimum is used when omitted.  Non-finite values are ignored.
    """
    h = np.asarray(h_values, dtype=float)
    h = h[np.isfinite(h)]
    m = h.min() if shift_min is None else min(shift_min, h.min())
    s = h - m + 1.0
    return float(np.std(s) / np.mean(s))


# ---------------------------------------------------------------------------
# Acceptance probabilities (all in the log domain)
# ---------------------------------------------------------------------------


def _log_min1(x):
    return min(0.0, x) if not math.isnan(x) else -math.inf


def _log1m_exp(x):
    """``log(1 - exp(x))`` for ``x <= 0``."""
    if x >= 0.0:
        return -math.inf
    if x > -0.693:
        return math.log(-math.expm1(x))
    return math.log1p(-math.exp(x))


def log_local_accept(h_candidate, h_current, tau):
    if h_candidate == math.inf:
        return -math.inf
    return min(0.0, -(h_candidate - h_current) / tau)


def local_accept_prob(h_candidate, h_current, tau):
    return math.exp(log_local_accept(h_candidate, h_current, tau))


def log_global_accept(h_cand, h_curr, logp_cand, logp_curr, tau):
    if logp_cand == -math.inf or h_cand == math.inf:
        return -math.inf
    if logp_curr == -math.inf:
        return 0.0
    return _log_min1((h_curr - h_cand) / tau + logp_curr - logp_cand)


def global_accept_prob(h_cand, h_curr, logp_cand, logp_curr, tau):
    """Independence-sampler acceptance of a local candidate against ``p_hat``."""
    return math.exp(log_global_accept(h_cand, h_curr, logp_cand, logp_curr, tau))


def log_delayed_accept(h0, h1, h2, logp0, logp1, logp2, tau):
    """Log acceptance of the second-stage candidate ``z2`` from ``z0`` after rejecting ``z1``."""
    if h2 == math.inf:
        return -math.inf
    log_rej0 = _log1m_exp(log_global_accept(h1, h0, logp1, logp0, tau))
    if log_rej0 < math.log(1e-300):
        log.warning("first-stage rejection probability underflows; rejecting second stage")
        return -math.inf
    log_rej2 = _log1m_exp(log_global_accept(h1, h2, logp1, logp2, tau))
    if log_rej2 == -math.inf:
        return -math.inf
    return _log_min1(-(h2 - h0) / tau + log_rej2 - log_rej0)


def delayed_accept_prob(h0, h1, h2, logp0, logp1, logp2, tau):
    return math.exp(log_delayed_accept(h0, h1, h2, logp0, logp1, logp2, tau))


def delayed_accept_from_globals(h0, h2, tau, alpha_g_from_z0, alpha_g_from_z2):
    """Delayed-rejection probability from the two first-stage acceptance probabilities."""
    if 1.0 - alpha_g_from_z0 < 1e-300:
        log.warning("first-stage rejection probability underflows; rejecting second stage")
        return 0.0
    if alpha_g_from_z2 >= 1.0:
        return 0.0
    ratio = math.exp(-(h2 - h0) / tau) * (1.0 - alpha_g_from_z2) / (1.0 - alpha_g_from_z0)
    return min(1.0, ratio)


def global_proposal_logdensity(z, h_z, markers, marker_h, weights, tau, cov):
    """``log p_hat(z)``: the weighted local-proposal mixture thinned by local acceptance."""
    return _MarkerMixture(markers, marker_h, weights, tau, cov).logpdf(z, h_z)


# ---------------------------------------------------------------------------
# Frozen level kernel
# ---------------------------------------------------------------------------


class _MarkerMixture:
    def __init__(self, markers, marker_h, weights, tau, cov):
        markers = np.atleast_2d(np.asarray(markers, dtype=float))
        weights = np.asarray(weights, dtype=float)
        keep = weights > 0
        self.tau = float(tau)
        self.markers = markers[keep]
        self.marker_h = np.asarray(marker_h, dtype=float)[keep]
        self.logw = np.log(weights[keep])
        self.chol = np.linalg.cholesky(np.atleast_2d(cov))
        d = self.markers.shape[1]
        self._scaled = np.linalg.solve(self.chol, self.markers.T)
        self._lognorm = -0.5 * d * LOG_2PI - float(np.sum(np.log(np.diag(self.chol))))

    def logpdf(self, z, h_z):
        if h_z == math.inf:
            return -math.inf
        u = np.linalg.solve(self.chol, np.asarray(z, dtype=float))
        r = self._scaled - u[:, None]
        logq = self._lognorm - 0.5 * np.sum(r * r, axis=0)
        loga = np.minimum(0.0, -(h_z - self.marker_h) / self.tau)
        return float(logsumexp(self.logw + logq + loga))


def _accept(rng, log_prob):
    return rng.random() < math.exp(log_prob)


@dataclass
class ChainState:
    z: np.ndarray
    h: float
    logp: float


class LevelKernel:
    """The transition kernel of one annealing level, frozen for reuse and testing.

    Parameters
    ----------
    markers : (N, d) array
        Samples of the previous level.
    marker_h : (N,) array
        Objective values at the markers.
    weights : (N,) array
        Normalized importance weights of the markers.
    tau : float
        Temperature of this level.
    local_cov, dr_cov : (d, d) arrays
        Covariances of the local proposal and of the second-stage proposal.
    objective : callable
        ``z -> H(z)``; may return ``inf``.
    """

    def __init__(self, markers, marker_h, weights, tau, local_cov, dr_cov, objective):
        self.mixture = _MarkerMixture(markers, marker_h, weights, tau, local_cov)
        self.tau = float(tau)
        self.objective = objective
        w = np.asarray(weights, dtype=float)
        self._cdf = np.cumsum(w / w.sum())
        self._markers = np.atleast_2d(np.asarray(markers, dtype=float))
        self._marker_h = np.asarray(marker_h, dtype=float)
        self._local_chol = np.linalg.cholesky(np.atleast_2d(local_cov))
        self._dr_chol = np.linalg.cholesky(np.atleast_2d(dr_cov))

    def logpdf(self, z, h):
        return self.mixture.logpdf(z, h)

    def start(self, z, h=None):
        z = np.asarray(z, dtype=float)
        h = float(self.objective(z)) if h is None else float(h)
        return ChainState(z, h, self.logpdf(z, h))

    def _pick_marker(self, rng):
        j = int(np.searchsorted(self._cdf, rng.random() * self._cdf[-1], side="right"))
        return min(j, len(self._cdf) - 1)

    def step(self, state, rng):
        """One transition; returns the new state and the outcome label."""
        d = state.z.shape[0]
        j = self._pick_marker(rng)
        xi = self._markers[j] + self._local_chol @ rng.standard_normal(d)
        h_xi = float(self.objective(xi))
        if not _accept(rng, log_local_accept(h_xi, self._marker_h[j], self.tau)):
            return state, "local_reject"
        logp_xi = self.logpdf(xi, h_xi)
        if _accept(rng, log_global_accept(h_xi, state.h, logp_xi, state.logp, self.tau)):
            return ChainState(xi, h_xi, logp_xi), "global_accept"
        z2 = state.z + self._dr_chol @ rng.standard_normal(d)
        h2 = float(self.objective(z2))
        logp2 = self.logpdf(z2, h2)
        if _accept(rng, log_delayed_accept(state.h, h_xi, h2, state.logp, logp_xi, logp2, self.tau)):
            return ChainState(z2, h2, logp2), "dr_accept"
        return state, "dr_reject"


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def _chain_rng(seed, level, chain):
    return np.random.default_rng([seed, level, chain])


def _run_chain(kernel, start_z, start_h, length, rng):
    state = kernel.start(start_z, start_h)
    zs, hs = [], []
    counts = {"local_reject": 0, "global_accept": 0, "dr_accept": 0, "dr_reject": 0}
    for _ in range(length):
        state, outcome = kernel.step(state, rng)
        counts[outcome] += 1
        zs.append(state.z)
        hs.append(state.h)
    return zs, hs, counts


def run_level(level_prev, objective, cfg, tau, running_min=None):
    """Build annealing level ``k = level_prev.index + 1`` at temperature ``tau``."""
    k = level_prev.index + 1
    Z = level_prev.samples
    N = cfg.sample_count
    w = importance_weights(level_prev.h_values, tau, level_prev.tau)
    sigma = weighted_covariance(Z, w)
    spread = cfg.initial_spread * cfg.spread_decay**k
    kernel = LevelKernel(
        Z, level_prev.h_values, w, tau, spread * sigma, cfg.initial_spread * sigma, objective
    )
    lengths = _chain_rng(cfg.master_seed, k, 0).multinomial(N, w)
    jobs = [
        (Z[j], level_prev.h_values[j], int(m), _chain_rng(cfg.master_seed, k, j + 1))
        for j, m in enumerate(lengths)
        if m > 0
    ]

    def work(job):
        return _run_chain(kernel, *job)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            outputs = list(pool.map(work, jobs))
    else:
        outputs = [work(job) for job in jobs]

    samples = np.array([z for zs, _, _ in outputs for z in zs])
    h_values = np.array([h for _, hs, _ in outputs for h in hs])
    totals = {key: sum(c[key] for _, _, c in outputs) for key in outputs[0][2]}
    local_acc = N - totals["local_reject"]
    dr_tries = totals["dr_accept"] + totals["dr_reject"]
    rates = {
        "local": local_acc / N,
        "global": totals["global_accept"] / local_acc if local_acc else math.nan,
        "dr": totals["dr_accept"] / dr_tries if dr_tries else math.nan,
    }
    m = h_values.min() if running_min is None else min(running_min, h_values.min())
    return AnnealingLevel(
        index=k,
        tau=tau,
        samples=samples,
        h_values=h_values,
        cov_delta=coefficient_of_variation(h_values, m),
        spread=spread,
        norm_weights=w,
        proposal_cov=sigma,
        rates=rates,
    )


def anneal(objective, initial_samples, cfg, initial_tau=math.inf, on_level=None):
    """Run the annealing ladder from a level-0 population.

    ``initial_samples`` are assumed to be distributed as the tempered target at
    ``initial_tau`` (``inf`` for the uniform limit).  ``on_level`` receives one
    progress record per level.
    """
    Z0 = np.atleast_2d(np.asarray(initial_samples, dtype=float))
    if Z0.shape[0] != cfg.sample_count:
        raise InvalidArgumentError("initial population size must equal sample_count")
    H0 = np.array([float(objective(z)) for z in Z0])
    if not np.isfinite(H0).any():
        raise DegeneratePopulationError("all level-0 samples have infinite objective")
    running_min = float(H0[np.isfinite(H0)].min())
    level = AnnealingLevel(
        index=0,
        tau=initial_tau,
        samples=Z0,
        h_values=H0,
        cov_delta=coefficient_of_variation(H0),
        spread=cfg.initial_spread,
    )
    levels = [level]
    _emit(on_level, level)
    target = cfg.stop_ratio * level.cov_delta
    converged, reason = False, "max_levels"
    for _ in range(cfg.max_levels):
        tau = solve_temperature(level.h_values, level.tau, cfg.ess_gamma, cfg.tau_floor, cfg.mode)
        level = run_level(level, objective, cfg, tau, running_min)
        running_min = min(running_min, float(level.h_values.min()))
        levels.append(level)
        _emit(on_level, level)
        if level.cov_delta < target:
            converged, reason = True, "cov"
            break
        if cfg.mode == "sample" and tau <= 1.0:
            converged, reason = True, "tau_one"
            break
        if tau <= cfg.tau_floor:
            reason = "tau_floor"
            break
    return SamplerResult(
        levels=levels,
        final_samples=level.samples,
        h_values=level.h_values,
        converged=converged,
        stop_reason=reason,
    )


def _emit(callback, level):
    if callback is not None:
        callback(level.summary())
    log.info(
        "level %d tau=%.6g cov=%.4g rates=%s", level.index, level.tau, level.cov_delta, level.rates
    )


class GpObjective:
    """``z -> H(from_unconstrained(z) | D)`` with a pluggable log-prior."""

    def __init__(self, data, prior=log_prior_flat):
        self.data = data
        self.prior = prior

    def __call__(self, z):
        return neg_log_posterior(self.data, from_unconstrained(z), self.prior)


def run(data, cfg, prior=log_prior_flat, on_level=None):
    """Sample or optimize the correlation hyper-parameters of ``data``."""
    rng = _chain_rng(cfg.master_seed, 0, 0)
    initial = meta_prior_sample(rng, data.p, size=cfg.sample_count)
    t0 = time.perf_counter()
    result = anneal(GpObjective(data, prior), initial, cfg, on_level=on_level)
    log.info("annealing finished in %.1fs (%s)", time.perf_counter() - t0, result.stop_reason)
    return result
