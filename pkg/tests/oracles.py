"""Dense, from-scratch reference implementations used only by the tests.

Everything here uses explicit inverses and ``slogdet`` so that it shares no
code path with the factorization-based library routines.
"""

import numpy as np


def corr_dense(A, B, lengths):
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    out = np.empty((A.shape[0], B.shape[0]))
    for i, a in enumerate(A):
        for j, b in enumerate(B):
            out[i, j] = np.exp(-0.5 * sum((a[k] - b[k]) ** 2 / lengths[k] for k in range(len(a))))
    return out


def basis(X):
    X = np.atleast_2d(X)
    return np.hstack([np.ones((X.shape[0], 1)), X])


def gp_dense(X, y, lengths, nugget, H=None):
    """Return beta, sigma2, H-objective (flat prior) and the pieces for prediction."""
    H = basis(X) if H is None else H
    n, q = H.shape
    K = corr_dense(X, X, lengths) + nugget * np.eye(n)
    Ki = np.linalg.inv(K)
    A = H.T @ Ki @ H
    Ai = np.linalg.inv(A)
    beta = Ai @ H.T @ Ki @ y
    P = Ki - Ki @ H @ Ai @ H.T @ Ki
    sigma2 = float(y @ P @ y) / (n - q - 2)
    ld_K = np.linalg.slogdet(K)[1]
    ld_A = np.linalg.slogdet(A)[1]
    h = 0.5 * (n - q) * np.log(sigma2) + 0.5 * ld_K + 0.5 * ld_A
    return {"beta": beta, "sigma2": sigma2, "h": h, "Ki": Ki, "Ai": Ai, "H": H, "K": K}


def predict_dense(X, y, lengths, nugget, xs, ws, include_nugget=True):
    g = gp_dense(X, y, lengths, nugget)
    Ki, Ai, H, beta = g["Ki"], g["Ai"], g["H"], g["beta"]
    tx = corr_dense(xs, X, lengths)[0]
    tw = corr_dense(ws, X, lengths)[0]
    hx, hw = basis(xs)[0], basis(ws)[0]
    mx = hx @ beta + tx @ Ki @ (y - H @ beta)
    mw = hw @ beta + tw @ Ki @ (y - H @ beta)
    k = corr_dense(xs, ws, lengths)[0, 0]
    if include_nugget and np.array_equal(np.ravel(xs), np.ravel(ws)):
        k += nugget
    rx = hx - H.T @ Ki @ tx
    rw = hw - H.T @ Ki @ tw
    c = k - tx @ Ki @ tw + rx @ Ai @ rw
    return mx, mw, g["sigma2"] * c


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


def gp_mp(X, y, lengths, nugget, points=(), include_nugget=True, dps=40):
    """Dense explicit-inverse oracle in extended precision (mpmath).

    Returns beta, sigma2, the flat-prior objective and, for each ``(xs, ws)``
    in ``points``, the predictive moments.  Plain float64 inverses lose up to
    ``cond(K) * eps`` of accuracy, which swamps a 1e-8 comparison for
    cancellation-prone covariances.
    """
    import mpmath as mp

    with mp.workdps(dps):
        X = np.atleast_2d(X)
        n, p = X.shape
        L = [mp.mpf(float(v)) for v in lengths]
        nug = mp.mpf(float(nugget))

        def k(a, b):
            return mp.exp(-sum((mp.mpf(float(a[i])) - mp.mpf(float(b[i]))) ** 2 / L[i] for i in range(p)) / 2)

        def h(a):
            return mp.matrix([1] + [mp.mpf(float(v)) for v in a])

        K = mp.matrix(n, n)
        for i in range(n):
            for j in range(i, n):
                K[i, j] = K[j, i] = k(X[i], X[j])
            K[i, i] += nug
        H = mp.matrix(n, p + 1)
        for i in range(n):
            for j in range(p + 1):
                H[i, j] = 1 if j == 0 else mp.mpf(float(X[i, j - 1]))
        Y = mp.matrix([mp.mpf(float(v)) for v in y])
        Ki = K**-1
        A = H.T * Ki * H
        Ai = A**-1
        beta = Ai * H.T * Ki * Y
        r = Y - H * beta
        q = p + 1
        sigma2 = (r.T * Ki * r)[0] / (n - q - 2)
        obj = (n - q) / mp.mpf(2) * mp.log(sigma2) + mp.log(mp.det(K)) / 2 + mp.log(mp.det(A)) / 2
        moments = []
        for xs, ws in points:
            tx = mp.matrix([k(xs, X[i]) for i in range(n)])
            tw = mp.matrix([k(ws, X[i]) for i in range(n)])
            mx = (h(xs).T * beta)[0] + (tx.T * Ki * r)[0]
            mw = (h(ws).T * beta)[0] + (tw.T * Ki * r)[0]
            kk = k(xs, ws)
            if include_nugget and np.array_equal(np.ravel(xs), np.ravel(ws)):
                kk += nug
            rx = h(xs) - H.T * Ki * tx
            rw = h(ws) - H.T * Ki * tw
            c = kk - (tx.T * Ki * tw)[0] + (rx.T * Ai * rw)[0]
            moments.append((float(mx), float(mw), float(sigma2 * c)))
        return {
            "beta": np.array([float(b) for b in beta]),
            "sigma2": float(sigma2),
            "h": float(obj),
            "moments": moments,
        }
