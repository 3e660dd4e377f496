"""Gaussian process core: correlation, factorization and integrated posterior.

The correlation function is the squared exponential with a linear
length-scale in the denominator,

    k(x, x') = exp(-0.5 * sum_i (x_i - x'_i)**2 / phi_i),

and the correlation matrix carries a nugget on its diagonal,
``K_delta = K + phi_delta * I``.  The regression coefficients and the
signal variance are marginalized out, so every quantity here is a function
of the correlation hyper-parameters only.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular

NUGGET_LOWER = 1e-12


class InvalidArgumentError(ValueError):
    pass


class IllConditionedCovarianceError(np.linalg.LinAlgError):
    """Cholesky factorization of ``K_delta`` failed."""

    def __init__(self, phi, message="correlation matrix is not positive definite"):
        super().__init__(f"{message} (lengths={phi.lengths.tolist()}, nugget={phi.nugget:g})")
        self.phi = phi


class SingularDesignError(np.linalg.LinAlgError):
    """``H^T K^-1 H`` is rank deficient."""


def linear_basis(X):
    """Rows ``h(x)^T = (1, x_1, ..., x_p)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.hstack([np.ones((X.shape[0], 1)), X])


@dataclass(frozen=True)
class TrainingSet:
    """Design points ``X`` (n x p), outputs ``y`` (n,) and design matrix ``H`` (n x q)."""

    X: np.ndarray
    y: np.ndarray
    H: np.ndarray = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        H = linear_basis(X) if self.H is None else np.atleast_2d(np.asarray(self.H, dtype=float))
        if X.shape[0] != y.shape[0] or H.shape[0] != y.shape[0]:
            raise InvalidArgumentError("X, y and H must have the same number of rows")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y)) and np.all(np.isfinite(H))):
            raise InvalidArgumentError("training data must be finite")
        n, q = H.shape
        if n < q + 3:
            raise InvalidArgumentError(f"need n >= q + 3 training runs, got n={n}, q={q}")
        if len(np.unique(X, axis=0)) != n:
            raise InvalidArgumentError("design points must be pairwise distinct")
        if np.linalg.matrix_rank(H) < q:
            raise SingularDesignError("design matrix H does not have full column rank")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "H", H)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def q(self):
        return self.H.shape[1]

    def basis(self, Xs):
        """Regression basis at new inputs; only available for the default linear basis."""
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        if self.q != self.p + 1:
            raise InvalidArgumentError("custom design matrix: basis at new inputs is unknown")
        return linear_basis(Xs)


@dataclass(frozen=True)
class HyperParams:
    """Length-scales ``lengths`` (p,) and nugget ``nugget`` of the correlation function.

    A nugget of exactly zero is accepted so that interpolating emulators can be
    built; the prior support, and hence the sampler, is ``[1e-12, 1]``.
    """

    lengths: np.ndarray
    nugget: float = NUGGET_LOWER

    def __post_init__(self):
        lengths = np.atleast_1d(np.asarray(self.lengths, dtype=float))
        nugget = float(self.nugget)
        if lengths.ndim != 1 or not np.all(np.isfinite(lengths)) or np.any(lengths <= 0):
            raise InvalidArgumentError(f"length-scales must be positive and finite: {lengths}")
        if not (0.0 <= nugget <= 1.0):
            raise InvalidArgumentError(f"nugget must lie in [0, 1], got {nugget}")
        lengths.setflags(write=False)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "nugget", nugget)

    @property
    def p(self):
        return self.lengths.shape[0]


def _check_point(x, p):
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != p:
        raise InvalidArgumentError(f"expected a {p}-vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("input vector must be finite")
    return x


def correlation(x, x2, phi):
    """Squared-exponential correlation between two input configurations."""
    x = _check_point(x, phi.p)
    x2 = _check_point(x2, phi.p)
    return float(np.exp(-0.5 * np.sum((x - x2) ** 2 / phi.lengths)))


def cross_correlation(A, B, phi):
    """Correlation matrix between the rows of ``A`` (m x p) and ``B`` (n x p)."""
    A = np.atleast_2d(A) / np.sqrt(phi.lengths)
    B = np.atleast_2d(B) / np.sqrt(phi.lengths)
    d2 = np.sum((A[:, None, :] - B[None, :, :]) ** 2, axis=-1)
    return np.exp(-0.5 * d2)


def correlation_matrix(D, phi):
    """``K_delta = K + nugget * I`` over the design points; exactly symmetric."""
    if phi.p != D.p:
        raise InvalidArgumentError(f"phi has {phi.p} length-scales, data has {D.p} inputs")
    K = cross_correlation(D.X, D.X, phi)
    iu = np.triu_indices(D.n, 1)
    K[(iu[1], iu[0])] = K[iu]
    np.fill_diagonal(K, 1.0 + phi.nugget)
    return K


@dataclass(frozen=True)
class GpFactorization:
    """Cached factorization of ``K_delta`` for one hyper-parameter value.

    ``neg_log_post`` excludes the prior term; see :func:`neg_log_posterior`.
    """

    data: TrainingSet = field(repr=False)
    phi: HyperParams
    lower_factor: np.ndarray = field(repr=False)
    beta_hat: np.ndarray
    sigma2_hat: float
    log_det_K: float
    log_det_HtKinvH: float
    neg_log_post: float
    # L^-1 H and the Cholesky factor of H^T K^-1 H
    _G: np.ndarray = field(repr=False, default=None)
    _R: np.ndarray = field(repr=False, default=None)
    # K^-1 (y - H beta_hat)
    _alpha: np.ndarray = field(repr=False, default=None)

    def predict(self, Xs, include_nugget=True):
        """Predictive mean and variance at the rows of ``Xs``.

        The variance is ``sigma2_hat`` times the predictive correlation of a
        point with itself; ``include_nugget`` adds ``sigma2_hat * nugget`` for
        the stochastic-simulator reading of the nugget.
        """
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        if Xs.shape[1] != self.data.p:
            raise InvalidArgumentError(f"expected inputs with {self.data.p} columns")
        T = cross_correlation(Xs, self.data.X, self.phi)
        hs = self.data.basis(Xs)
        mean = hs @ self.beta_hat + T @ self._alpha
        V = solve_triangular(self.lower_factor, T.T, lower=True)
        r = hs.T - self._G.T @ V
        W = solve_triangular(self._R, r, lower=True)
        corr = 1.0 - np.sum(V * V, axis=0) + np.sum(W * W, axis=0)
        if include_nugget:
            corr = corr + self.phi.nugget
        var = self.sigma2_hat * corr
        return mean, _clamp_variance(var)

    def moments(self, xs, ws, include_nugget=True):
        """Predictive means at ``xs`` and ``ws`` and their covariance."""
        xs = _check_point(xs, self.data.p)
        ws = _check_point(ws, self.data.p)
        P = np.vstack([xs, ws])
        T = cross_correlation(P, self.data.X, self.phi)
        hs = self.data.basis(P)
        mu = hs @ self.beta_hat + T @ self._alpha
        V = solve_triangular(self.lower_factor, T.T, lower=True)
        W = solve_triangular(self._R, hs.T - self._G.T @ V, lower=True)
        k = correlation(xs, ws, self.phi)
        same = np.array_equal(xs, ws)
        if same and include_nugget:
            k += self.phi.nugget
        corr = k - V[:, 0] @ V[:, 1] + W[:, 0] @ W[:, 1]
        cov = self.sigma2_hat * corr
        if same:
            cov = max(cov, 0.0)
        return float(mu[0]), float(mu[1]), float(cov)


def _clamp_variance(var):
    # round-off can leave tiny negative values at design points
    return np.maximum(var, 0.0)


def factorize(D, phi):
    """Factorize ``K_delta`` and compute the GLS estimates and ``-log`` likelihood part.

    Raises
    ------
    IllConditionedCovarianceError
        If ``K_delta`` is not numerically positive definite.
    SingularDesignError
        If ``H^T K^-1 H`` cannot be factorized.
    """
    K = correlation_matrix(D, phi)
    try:
        L = cholesky(K, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise IllConditionedCovarianceError(phi) from None
    diagL = np.diag(L)
    if not np.all(diagL > 0):
        raise IllConditionedCovarianceError(phi)
    G = solve_triangular(L, D.H, lower=True, check_finite=False)
    u = solve_triangular(L, D.y, lower=True, check_finite=False)
    try:
        R = cholesky(G.T @ G, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise SingularDesignError("H^T K^-1 H is not positive definite") from None
    diagR = np.diag(R)
    if not np.all(diagR > 0):
        raise SingularDesignError("H^T K^-1 H is not positive definite")
    beta = solve_triangular(R, G.T @ u, lower=True, check_finite=False)
    beta = solve_triangular(R.T, beta, lower=False, check_finite=False)
    e = u - G @ beta
    n, q = D.n, D.q
    sigma2 = float(e @ e) / (n - q - 2)
    alpha = solve_triangular(L.T, e, lower=False, check_finite=False)
    log_det_K = 2.0 * float(np.sum(np.log(diagL)))
    log_det_HKH = 2.0 * float(np.sum(np.log(diagR)))
    if sigma2 > 0:
        nlp = 0.5 * (n - q) * np.log(sigma2) + 0.5 * log_det_K + 0.5 * log_det_HKH
    else:
        nlp = np.inf
    return GpFactorization(
        data=D,
        phi=phi,
        lower_factor=L,
        beta_hat=beta,
        sigma2_hat=sigma2,
        log_det_K=log_det_K,
        log_det_HtKinvH=log_det_HKH,
        neg_log_post=float(nlp),
        _G=G,
        _R=R,
        _alpha=alpha,
    )


def gls_estimates(D, phi):
    """Generalized least-squares ``beta_hat`` and the signal variance ``sigma2_hat``."""
    f = factorize(D, phi)
    return f.beta_hat, f.sigma2_hat


def neg_log_posterior(D, phi, prior=None):
    """Integrated negative log-posterior of the correlation hyper-parameters.

    Returns ``+inf`` when the covariance cannot be factorized, when the
    residual variance vanishes, or when ``phi`` lies outside the prior support.
    """
    if not np.all(np.isfinite(phi.lengths)) or not np.isfinite(phi.nugget):
        raise InvalidArgumentError("non-finite hyper-parameters")
    log_prior = 0.0 if prior is None else float(prior(phi))
    if log_prior == -np.inf:
        return np.inf
    try:
        f = factorize(D, phi)
    except (IllConditionedCovarianceError, SingularDesignError):
        return np.inf
    return f.neg_log_post - log_prior


def predictive_moments(D, phi, xs, ws, include_nugget=True):
    """``(mu(xs), mu(ws), cov(xs, ws))`` of the predictive Gaussian given ``phi``."""
    return factorize(D, phi).moments(xs, ws, include_nugget=include_nugget)
