"""Short-iterate Lanczos propagation of ``exp(-i tau H) v`` for Hermitian H."""
from __future__ import annotations

import numpy as np
from scipy.linalg import expm


class KrylovBreakdown(RuntimeError):
    pass


def _tridiag(a, b):
    T = np.diag(a).astype(complex)
    if len(a) > 1:
        T += np.diag(b[:-1], 1) + np.diag(b[:-1], -1)
    return T


def _estimate(a, b, beta0, h):
    """``exp(-i h T) e_1`` and the a posteriori error estimate."""
    E = expm(-1j * h * _tridiag(a, b))
    err = 0.0 if b[-1] == 0.0 else beta0 * b[-1] * abs(E[-1, 0])
    return E[:, 0], err


def lanczos(matvec, v, m, h=None, tol=None):
    """Lanczos with full reorthogonalization.

    Returns ``(V, alpha, beta, beta0)``: orthonormal basis rows ``V`` (k x n),
    tridiagonal diagonal/offdiagonal and the starting norm.  ``beta[-1]`` is
    the residual coupling h_{k+1,k} (zero on an invariant subspace).  When
    ``h`` and ``tol`` are given the iteration stops as soon as the error
    estimate for ``exp(-i h T)`` drops below ``tol``.
    """
    beta0 = np.linalg.norm(v)
    n = v.size
    V = np.zeros((m + 1, n), dtype=complex)
    V[0] = v.ravel() / beta0
    a = np.zeros(m)
    b = np.zeros(m)
    for j in range(m):
        w = matvec(V[j])
        a[j] = np.real(np.vdot(V[j], w))
        w = w - a[j] * V[j]
        if j > 0:
            w = w - b[j - 1] * V[j - 1]
        # two passes of classical Gram-Schmidt against the whole basis
        for _ in range(2):
            w = w - V[: j + 1].T @ (np.conj(V[: j + 1]) @ w)
        b[j] = np.linalg.norm(w)
        if b[j] <= 1e-13 * max(abs(a[j]), 1.0):
            b[j] = 0.0
            return V[: j + 1], a[: j + 1], b[: j + 1], beta0
        V[j + 1] = w / b[j]
        if h is not None and j >= 3 and j % 2 == 1 and _estimate(a[: j + 1], b[: j + 1], beta0, h)[1] <= tol:
            return V[: j + 1], a[: j + 1], b[: j + 1], beta0
    return V[:m], a, b, beta0


def expv(matvec, v, tau, m=20, tol=1e-10, min_step=1e-14):
    """``exp(-i tau H) v`` by Lanczos substeps with a posteriori error control.

    Each substep reuses one Krylov basis (dimension at most ``m``) while
    halving the step until the estimate
    ``beta0 * h_{k+1,k} * |e_k^T exp(-i h T) e_1|`` falls below ``tol``.
    Returns ``(w, n_substeps)``.
    """
    w = np.asarray(v, dtype=complex).ravel().copy()
    shape = np.shape(v)
    if tau == 0.0:
        return w.reshape(shape), 0
    sign = np.sign(tau)
    remaining = abs(tau)
    h_try = remaining
    count = 0
    while remaining > 0.0:
        h = min(h_try, remaining)
        V, a, b, beta0 = lanczos(matvec, w, m, sign * h, tol)
        halved = False
        while True:
            if b[-1] == 0.0:
                h = remaining
            e1, err = _estimate(a, b, beta0, sign * h)
            if err <= tol:
                break
            h *= 0.5
            halved = True
            if h < min_step * abs(tau):
                raise KrylovBreakdown("Krylov step collapsed; reduce dt or raise the subspace dimension")
        w = beta0 * (V.T @ e1)
        remaining -= h
        if remaining <= 1e-14 * abs(tau):
            remaining = 0.0
        count += 1
        h_try = h if halved else 1.5 * h
    return w.reshape(shape), count
