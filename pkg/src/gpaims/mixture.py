"""Mixture-of-emulators predictions and validation diagnostics."""

import math

import numpy as np

from .gp import InvalidArgumentError, factorize
from .transforms import from_unconstrained

BAND = 1.96


class MixtureEmulator:
    """Weighted collection of Gaussian process emulators sharing one training set.

    Parameters
    ----------
    data : TrainingSet
    hyperparams : sequence of HyperParams
        One entry per component; repeated values are kept with their
        multiplicity (their factorization is computed once).
    weights : array_like, optional
        Component weights, normalized internally.  Uniform by default.
    include_nugget : bool
        Whether component predictive variances carry ``sigma2_hat * nugget``.
    """

    def __init__(self, data, hyperparams, weights=None, include_nugget=True):
        if len(hyperparams) == 0:
            raise InvalidArgumentError("a mixture needs at least one component")
        w = np.full(len(hyperparams), 1.0) if weights is None else np.asarray(weights, dtype=float)
        if w.shape != (len(hyperparams),) or np.any(w < 0) or not w.sum() > 0:
            raise InvalidArgumentError("weights must be non-negative, one per component")
        self.data = data
        self.include_nugget = include_nugget
        self.weights = w / w.sum()
        self.hyperparams = list(hyperparams)
        cache, index = {}, []
        for phi in self.hyperparams:
            key = (phi.lengths.tobytes(), phi.nugget)
            if key not in cache:
                cache[key] = len(cache)
                index.append(phi)
        self._factors = [factorize(data, phi) for phi in index]
        self._slot = np.array(
            [cache[(phi.lengths.tobytes(), phi.nugget)] for phi in self.hyperparams]
        )
        # aggregated weight per distinct component
        self._unique_weights = np.bincount(self._slot, weights=self.weights, minlength=len(index))

    @classmethod
    def from_result(cls, data, result, weighting="uniform", include_nugget=True):
        """Mixture over the final-level samples of a sampler run.

        ``weighting="importance"`` reweights the samples from the final
        temperature to the untempered posterior.
        """
        phis = [from_unconstrained(z) for z in result.final_samples]
        if weighting == "uniform":
            weights = None
        elif weighting == "importance":
            tau = result.levels[-1].tau
            h = result.h_values
            logw = -(h - h.min()) * (1.0 - 1.0 / tau)
            weights = np.exp(logw - logw.max())
        else:
            raise InvalidArgumentError(f"unknown weighting {weighting!r}")
        return cls(data, phis, weights, include_nugget)

    @property
    def components(self):
        return [
            (w, phi, self._factors[s]) for w, phi, s in zip(self.weights, self.hyperparams, self._slot)
        ]

    def component_predictions(self, Xs):
        """Means and variances of the distinct components, shape ``(K, m)`` each."""
        out = [f.predict(Xs, include_nugget=self.include_nugget) for f in self._factors]
        return np.array([m for m, _ in out]), np.array([v for _, v in out])

    def predict(self, Xs):
        """Mixture mean and variance at the rows of ``Xs``."""
        means, variances = self.component_predictions(Xs)
        w = self._unique_weights[:, None]
        mu = np.sum(w * means, axis=0)
        var = np.sum(w * ((means - mu) ** 2 + variances), axis=0)
        return mu, var

    def _pair(self, xs, ws):
        mom = np.array(
            [f.moments(xs, ws, include_nugget=self.include_nugget) for f in self._factors]
        )
        return mom[:, 0], mom[:, 1], mom[:, 2]

    def mean(self, xs):
        mx, _, _ = self._pair(xs, xs)
        return float(self._unique_weights @ mx)

    def cov(self, xs, ws):
        mx, mw, c = self._pair(xs, ws)
        w = self._unique_weights
        dx = mx - w @ mx
        dw = mw - w @ mw
        return float(w @ (dx * dw + c))


def mixture_mean(M, xs):
    return M.mean(xs)


def mixture_cov(M, xs, ws):
    return M.cov(xs, ws)


def standardized_residuals(mean, variance, actual):
    """``(y - mu) / sqrt(var)``; ``nan`` where the variance is not positive.

    Returns the residuals and the number of valid residuals inside +-1.96.
    """
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    actual = np.asarray(actual, dtype=float)
    r = np.full(mean.shape, np.nan)
    ok = variance > 0
    r[ok] = (actual[ok] - mean[ok]) / np.sqrt(variance[ok])
    within = int(np.sum(np.abs(r[ok]) <= BAND))
    return r, within


def emulator_residuals(emulator, test_inputs, test_outputs):
    """Standardized residuals of a mixture or of a single factorization."""
    mean, var = emulator.predict(test_inputs)
    return standardized_residuals(mean, var, test_outputs)


def rmse(predictions, actuals):
    predictions = np.asarray(predictions, dtype=float).ravel()
    actuals = np.asarray(actuals, dtype=float).ravel()
    if predictions.shape != actuals.shape or predictions.size == 0:
        raise InvalidArgumentError("rmse needs two non-empty vectors of equal length")
    return math.sqrt(float(np.mean((predictions - actuals) ** 2)))


def map_component(result):
    """Hyper-parameters of the final sample with the smallest objective (first on ties)."""
    if len(result.h_values) == 0:
        raise InvalidArgumentError("empty sample")
    return result.map_candidate
