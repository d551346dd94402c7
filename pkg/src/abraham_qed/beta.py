"""Comparison functionals between a quantum state and a classical datum.

Collinear reduction throughout: the classical datum is given per particle by
scalars ``q_j`` and ``p_j`` along the coupled axis, and by the continuum
amplitudes ``alpha_i`` of the kept modes.  Weighted amplitudes
``sqrt(w_i) alpha_i`` are the discrete images used by the RDM.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from .fock import _lower, field_phi, particle_density, weyl_enlarged


class InternalError(RuntimeError):
    pass


BETA_COLUMNS = [
    "t", "beta_a", "beta_b", "beta_b_tilde", "beta_c",
    "rdm_distance", "rdm_bound", "leakage", "energy_q", "energy_c",
]


@dataclass
class BetaReport:
    t: float
    beta_a: float
    beta_b: float
    beta_b_tilde: float
    beta_c: float
    rdm_distance: float
    rdm_bound: float
    leakage: float
    energy_q: float
    energy_c: float

    def row(self):
        return [getattr(self, c) for c in BETA_COLUMNS]

    def as_dict(self):
        return asdict(self)

    @property
    def total(self):
        return self.beta_a + self.beta_b + self.beta_c


def _check_hbar(state, H):
    if abs(state.hbar - H.hbar) > 1e-15:
        raise ValueError(f"state hbar {state.hbar} does not match run hbar {H.hbar}")


def beta_a(state, grid, q):
    """``sum_j ||(x_j - q_j) psi||^2``."""
    q = np.atleast_1d(q)
    x = grid.x
    return float(sum(np.sum((x - q[j]) ** 2 * particle_density(state.psi, j)) for j in range(state.N)))


def classical_A(H, alpha, q):
    """Classical field component ``A^1_alpha(q_j)`` on the kept modes."""
    q = np.atleast_1d(np.asarray(q, dtype=float))
    m = H.modes
    conj_g = H.amp[None, :] * np.exp(1j * np.outer(q, m.k[:, H.axis]))
    return 2.0 * np.real(conj_g @ (np.sqrt(m.weights) * np.asarray(alpha, dtype=complex)))


def beta_b(state, H, q, p, alpha):
    """``sum_j ||(P_j - (p_j - A_alpha(q_j))) psi||^2``."""
    _check_hbar(state, H)
    pt = np.atleast_1d(p) - classical_A(H, alpha, q)
    total = 0.0
    for j in range(state.N):
        r = H.apply_P(state.psi, j) - pt[j] * state.psi
        total += float(np.vdot(r, r).real)
    return total


def beta_b_tilde(state, H, p):
    """``sum_j ||(-i hbar d_j - p_j) psi||^2``."""
    _check_hbar(state, H)
    p = np.atleast_1d(p)
    total = 0.0
    for j in range(state.N):
        r = H.apply_D(state.psi, j) - p[j] * state.psi
        total += float(np.vdot(r, r).real)
    return total


def beta_c(state, basis, modes, alpha):
    """Field fluctuation around ``alpha``, returned as ``(ladder, weyl)``.

    ``ladder = hbar sum_i ||(b_i - d_i) psi||^2`` is exact in the truncated
    space and is the primary value.  ``weyl = hbar <N>`` evaluated on
    ``W(-d) psi`` in an enlarged occupation space.
    """
    hbar = state.hbar
    d = modes.displacement(alpha, hbar)
    psi = state.psi
    lad = 0.0
    for i in range(basis.M):
        r = _lower(psi, basis, i) - d[i] * psi
        lad += float(np.vdot(r, r).real)
    big = weyl_enlarged(-d, psi, basis)
    nl = psi.ndim - 1
    prob = np.abs(big) ** 2
    wey = 0.0
    for i in range(basis.M):
        n = np.arange(big.shape[nl + i], dtype=float)
        shp = [1] * big.ndim
        shp[nl + i] = -1
        wey += float(np.sum(prob * n.reshape(shp)))
    return hbar * lad, hbar * wey


def one_photon_rdm(state, basis):
    """``gamma_ij = hbar <b_j psi, b_i psi>`` on the kept modes."""
    psi = state.psi
    low = np.stack([_lower(psi, basis, i).ravel() for i in range(basis.M)])
    gam = state.hbar * (np.conj(low) @ low.T).T
    herm = np.max(np.abs(gam - gam.conj().T)) if gam.size else 0.0
    if herm > 1e-10:
        raise InternalError(f"one-photon RDM not Hermitian ({herm:.2e})")
    return 0.5 * (gam + gam.conj().T)


def trace_norm(A):
    return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (A + A.conj().T)))))


def trace_distance(gamma, alpha_w):
    """``|| gamma - |alpha><alpha| ||_1`` with weighted amplitudes ``alpha_w``."""
    a = np.asarray(alpha_w, dtype=complex)
    return trace_norm(gamma - np.outer(a, np.conj(a)))


def rdm_bound(bc, alpha_norm):
    return 3.0 * bc + 6.0 * alpha_norm * np.sqrt(max(bc, 0.0))


# -- observables -------------------------------------------------------------------


@dataclass(frozen=True)
class LipschitzFunction:
    """A scalar function with a certified Lipschitz constant ``L``.

    ``affine=(a, b)`` marks ``f(y) = a y + b`` so field expectations can use
    the sesquilinear form directly.
    """

    func: Callable
    L: float
    affine: Optional[tuple] = None

    def __post_init__(self):
        if not (np.isfinite(self.L) and self.L >= 0):
            raise ValueError("Lipschitz constant must be finite and nonnegative")

    def __call__(self, y):
        return self.func(y)


def tanh_function():
    return LipschitzFunction(np.tanh, 1.0)


def _field_matrix(H, g):
    """Dense ``hbar^(1/2) Phi(g)`` on the Fock space."""
    F = H.basis.size
    eye = np.eye(F, dtype=complex)
    return np.sqrt(H.hbar) * field_phi(eye, H.basis, H.modes, g).T


def observable_error(state, H, q, p, alpha, which, f, j=0, g=None):
    """``(|<f(J)> - f(J_classical)|, L ||(J - J_classical) psi||)``.

    The second entry is the pointwise bound the error must respect.
    """
    if not isinstance(f, LipschitzFunction):
        raise TypeError("f must be a LipschitzFunction with a certified constant")
    _check_hbar(state, H)
    psi = state.psi
    if which == "position":
        x = H.grid.x
        rho = particle_density(psi, j)
        cl = float(np.atleast_1d(q)[j])
        val = float(np.sum(f(x) * rho))
        spread = np.sqrt(np.sum((x - cl) ** 2 * rho))
    elif which == "momentum":
        ph = np.fft.fft(psi, axis=j, norm="ortho")
        rho = particle_density(ph, j)
        kap = H.hbar * H.kappa
        cl = float(np.atleast_1d(p)[j])
        val = float(np.sum(f(kap) * rho))
        spread = np.sqrt(np.sum((kap - cl) ** 2 * rho))
    elif which == "field":
        if g is None:
            raise ValueError("field observable needs g")
        g = np.asarray(g, dtype=complex)
        cl = float(2.0 * np.real(np.sum(H.modes.weights * np.conj(g) * np.asarray(alpha))))
        Phi = _field_matrix(H, g)
        flat = psi.reshape(-1, H.basis.size)
        if f.affine is not None:
            a, b = f.affine
            val = float(a * np.real(np.vdot(flat, flat @ Phi.T)) + b)
        else:
            lam, U = np.linalg.eigh(Phi)
            w = np.sum(np.abs(flat @ np.conj(U)) ** 2, axis=0)
            val = float(np.sum(f(lam) * w))
        r = flat @ Phi.T - cl * flat
        spread = np.sqrt(float(np.vdot(r, r).real))
    else:
        raise ValueError(f"unknown observable {which!r}")
    return abs(val - float(f(cl))), f.L * float(spread)


# -- ensembles -----------------------------------------------------------------------


@dataclass
class EnsembleSpec:
    """Finite mixture: weights ``mu_s`` and classical data ``(q, p, alpha)``."""

    weights: np.ndarray
    members: list

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.weights) != len(self.members) or len(self.members) == 0:
            raise ValueError("one weight per ensemble member required")
        if np.any(self.weights <= 0):
            raise ValueError("ensemble weights must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("ensemble weights must sum to 1")


def ensemble_rdm(spec, gammas, alphas_w):
    """Averaged RDM, averaged classical projector and their trace distance."""
    if len(gammas) != len(spec.weights) or len(alphas_w) != len(spec.weights):
        raise ValueError("one RDM and one amplitude vector per member required")
    shapes = {np.shape(gm) for gm in gammas}
    if len(shapes) != 1:
        raise ValueError("ensemble members use different mode sets")
    Gam = sum(mu * gm for mu, gm in zip(spec.weights, gammas))
    target = sum(mu * np.outer(a, np.conj(a)) for mu, a in zip(spec.weights, alphas_w))
    return Gam, target, trace_norm(Gam - target)
