"""Collinear Pauli-Fierz model: particles on a 1D grid times a capped Fock space.

Conventions
-----------
* Each kept mode ``i`` is a wave-vector ``k_i`` with one polarization
  ``lam_i`` and a quadrature weight ``w_i``.  The discrete annihilator is
  ``b_i = sqrt(w_i) a(k_i, lam_i)`` so ``[b_i, b_j*] = delta_ij``.  A
  continuum amplitude ``alpha_i`` therefore appears as the displacement
  ``d_i = sqrt(w_i / hbar) alpha_i``.
* ``psi`` has shape ``(G,)*N + (F,)`` with ``F = (n_max+1)**M``.  The grid
  factor ``sqrt(h)`` is absorbed, so the plain l2 norm is the L2 norm.
* ``W(f) = exp(a*(f) - a(f))`` so that ``W(f)* a W(f) = a + f`` and
  ``W(f) Omega`` has mean annihilator ``f``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm
from scipy.stats import poisson

from .kernels import Cutoff, CoulombKernel, ModeField, ModeGrid, polarization_bases
from .krylov import expv

DIMENSION_CAP = 5_000_000


class LeakageError(RuntimeError):
    pass


class DimensionError(ValueError):
    pass


# -- Fock basis and ladders --------------------------------------------------


@dataclass(frozen=True)
class FockBasis:
    """Occupation tuples ``(n_1..n_M)`` with ``0 <= n_i <= n_max`` in C order."""

    M: int
    n_max: int

    def __post_init__(self):
        if self.M < 1 or self.n_max < 1:
            raise ValueError("need M >= 1 and n_max >= 1")

    @property
    def n1(self):
        return self.n_max + 1

    @property
    def size(self):
        return self.n1**self.M

    @property
    def tensor_shape(self):
        return (self.n1,) * self.M

    @cached_property
    def occupations(self):
        return np.indices(self.tensor_shape).reshape(self.M, -1).T

    def index(self, occ):
        return int(np.ravel_multi_index(tuple(occ), self.tensor_shape))

    def total_number(self):
        return self.occupations.sum(axis=1).astype(float)


def _single_mode_lowering(n1):
    return sp.diags(np.sqrt(np.arange(1, n1, dtype=float)), 1, shape=(n1, n1), format="csr")


@dataclass
class Ladders:
    a: list
    adag: list
    number: sp.csr_matrix
    H_f: sp.csr_matrix


def build_ladders(basis, omegas=None):
    """Per-mode truncated ladder matrices on the full Fock basis."""
    n1 = basis.n1
    low = _single_mode_lowering(n1)
    a, adag = [], []
    for i in range(basis.M):
        op = sp.kron(sp.kron(sp.identity(n1**i), low), sp.identity(n1 ** (basis.M - 1 - i)), format="csr")
        a.append(op)
        adag.append(op.T.conj().tocsr())
    occ = basis.occupations.astype(float)
    number = sp.diags(occ.sum(axis=1), format="csr")
    om = np.ones(basis.M) if omegas is None else np.asarray(omegas, dtype=float)
    H_f = sp.diags(occ @ om, format="csr")
    return Ladders(a, adag, number, H_f)


@lru_cache(maxsize=None)
def _ladder_factors(n1):
    return np.sqrt(np.arange(1, n1, dtype=float))[None, None, :, None]


def _lower(psi, basis, i):
    """Apply ``b_i`` to the last (Fock) axis of psi."""
    n1 = basis.n1
    x = psi.reshape(-1, n1**i, n1, n1 ** (basis.M - 1 - i))
    out = np.empty_like(x)
    out[:, :, :-1, :] = _ladder_factors(n1) * x[:, :, 1:, :]
    out[:, :, -1, :] = 0
    return out.reshape(psi.shape)


def _raise(psi, basis, i):
    """Apply ``b_i*`` to the last (Fock) axis of psi."""
    n1 = basis.n1
    x = psi.reshape(-1, n1**i, n1, n1 ** (basis.M - 1 - i))
    out = np.empty_like(x)
    out[:, :, 1:, :] = _ladder_factors(n1) * x[:, :, :-1, :]
    out[:, :, 0, :] = 0
    return out.reshape(psi.shape)


# -- kept modes and particle grid ---------------------------------------------


@dataclass
class ModeSet:
    """Kept field modes: wave-vectors, polarization index (0 or 1) and weights."""

    k: np.ndarray
    lam: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.k = np.atleast_2d(np.asarray(self.k, dtype=float))
        self.lam = np.asarray(self.lam, dtype=int).reshape(-1)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if not (len(self.k) == len(self.lam) == len(self.weights)):
            raise ValueError("k, lam and weights must have equal length")
        if np.any((self.lam < 0) | (self.lam > 1)):
            raise ValueError("polarization index must be 0 or 1")
        if np.any(self.weights <= 0):
            raise ValueError("mode weights must be positive")
        if np.any(np.linalg.norm(self.k, axis=1) == 0):
            raise ValueError("k = 0 is not a valid mode")

    @property
    def M(self):
        return len(self.k)

    @property
    def kabs(self):
        return np.linalg.norm(self.k, axis=1)

    @property
    def pol(self):
        return polarization_bases(self.k)[np.arange(self.M), self.lam]

    def grid(self, cutoff=None):
        """A ``ModeGrid`` with one node per kept mode and only ``lam_i`` active."""
        active = np.zeros((self.M, 2), dtype=bool)
        active[np.arange(self.M), self.lam] = True
        return ModeGrid(self.k, self.weights, active=active, cutoff=cutoff)

    def to_field(self, alpha, grid=None):
        grid = self.grid() if grid is None else grid
        amp = np.zeros((self.M, 2), dtype=complex)
        amp[np.arange(self.M), self.lam] = alpha
        return ModeField(amp, grid)

    def from_field(self, f):
        return np.asarray(f.amplitudes)[np.arange(self.M), self.lam]

    def displacement(self, alpha, hbar):
        """Discrete displacement ``sqrt(w/hbar) alpha``."""
        return np.sqrt(self.weights / hbar) * np.asarray(alpha, dtype=complex)

    def norm(self, alpha):
        """``||alpha||`` in the weighted l2 (continuum L2) sense."""
        return float(np.sqrt(np.sum(self.weights * np.abs(alpha) ** 2)))


@dataclass(frozen=True)
class ParticleGrid:
    """Uniform grid on ``[x_min, x_max]``; periodic excludes the right endpoint."""

    G: int
    x_min: float
    x_max: float
    periodic: bool = True

    def __post_init__(self):
        if self.G < 8:
            raise ValueError("particle grid needs G >= 8")
        if not self.x_max > self.x_min:
            raise ValueError("empty particle grid extent")

    @property
    def h(self):
        L = self.x_max - self.x_min
        return L / self.G if self.periodic else L / (self.G + 1)

    @property
    def x(self):
        off = 0 if self.periodic else 1
        return self.x_min + (np.arange(self.G) + off) * self.h

    @property
    def wavenumbers(self):
        kap = 2.0 * np.pi * np.fft.fftfreq(self.G, self.h)
        if self.G % 2 == 0:
            kap[self.G // 2] = 0.0
        return kap


# -- quantum state -----------------------------------------------------------


@dataclass
class QuantumState:
    psi: np.ndarray
    hbar: float
    leakage: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=complex)
        if not np.all(np.isfinite(self.psi)):
            raise ValueError("non-finite amplitude in quantum state")
        if self.hbar <= 0:
            raise ValueError("hbar must be positive")

    @property
    def N(self):
        return self.psi.ndim - 1

    def norm(self):
        return float(np.linalg.norm(self.psi))

    def normalized(self):
        return QuantumState(self.psi / self.norm(), self.hbar, self.leakage, self.t)

    def save(self, path, description=None):
        """Write ``path.npy`` plus a JSON sidecar ``path.json``."""
        path = Path(path)
        np.save(path.with_suffix(".npy"), self.psi)
        meta = {"shape": list(self.psi.shape), "hbar": self.hbar, "t": self.t, "leakage": self.leakage}
        meta.update(description or {})
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path):
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        psi = np.load(path.with_suffix(".npy"))
        return cls(psi, meta["hbar"], meta.get("leakage", 0.0), meta.get("t", 0.0))


# -- Weyl displacement ---------------------------------------------------------


def weyl_matrix(d, dim):
    """Single-mode ``exp(d b* - conj(d) b)`` truncated to ``dim`` levels."""
    low = np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1)
    return expm(d * low.T - np.conj(d) * low)


def _pad_for(d):
    a = abs(d)
    return int(np.ceil(30 + 4 * a * a + 8 * a))


def weyl_enlarged(f, fock, basis, pads=None):
    """Apply ``W(f)`` exactly (to rounding) in an enlarged occupation space.

    ``fock`` has shape ``lead + (F,)``.  Returns an array of shape
    ``lead + (n_big_1, ..., n_big_M)``.  The input is assumed to have
    support within ``basis``.
    """
    f = np.asarray(f, dtype=complex).reshape(-1)
    lead = fock.shape[:-1]
    x = fock.reshape(lead + basis.tensor_shape)
    nl = len(lead)
    for i, fi in enumerate(f):
        if fi == 0:
            continue
        n_in = x.shape[nl + i]
        pad = _pad_for(fi) if pads is None else pads[i]
        U = weyl_matrix(fi, n_in + pad)[:, :n_in]
        x = np.moveaxis(np.tensordot(x, U, axes=([nl + i], [1])), -1, nl + i)
    return x


def weyl_displace(f, state, basis, bound=1e-6):
    """``W(f) state`` truncated to the basis, renormalized.

    The truncation leakage ``1 - ||P W(f) psi|| / ||psi||`` is stored on the
    returned state.  Raises ``LeakageError`` when it exceeds ``bound``.
    """
    f = np.asarray(f, dtype=complex).reshape(-1)
    if len(f) != basis.M:
        raise ValueError("one displacement per mode required")
    psi = state.psi
    n0 = float(np.vdot(psi, psi).real)
    lead = psi.shape[:-1]
    nl = len(lead)
    x = psi.reshape(lead + basis.tensor_shape)
    n1 = basis.n1
    discarded = 0.0
    for i, fi in enumerate(f):
        if fi == 0:
            continue
        U = weyl_matrix(fi, n1 + _pad_for(fi))[:, :n1]
        y = np.moveaxis(np.tensordot(x, U, axes=([nl + i], [1])), -1, nl + i)
        tail = np.take(y, np.arange(n1, y.shape[nl + i]), axis=nl + i)
        discarded += float(np.vdot(tail, tail).real) / n0
        x = np.take(y, np.arange(n1), axis=nl + i)
    D = min(discarded, 1.0)
    leak = D / (1.0 + np.sqrt(1.0 - D))
    if leak > bound:
        raise LeakageError(f"Weyl truncation leakage {leak:.3e} exceeds {bound:.1e}; increase n_max")
    out = x.reshape(psi.shape)
    out = out / np.linalg.norm(out) * np.sqrt(n0)
    return QuantumState(out, state.hbar, state.leakage + leak, state.t)


def coherent_leakage(f, n_max):
    """Leakage of the truncated product coherent state (closed form)."""
    D = 0.0
    for fi in np.atleast_1d(f):
        D += poisson.sf(n_max, abs(fi) ** 2)
    return D / (1.0 + np.sqrt(1.0 - min(D, 1.0)))


# -- Hamiltonian ------------------------------------------------------------------


@dataclass(eq=False)
class HamiltonianRep:
    """Matrix-free Pauli-Fierz Hamiltonian in the collinear reduction.

    ``H = sum_j P_j^2 + sum_{j<k} V(x_j - x_k) + hbar H_f`` with
    ``P_j = -i hbar d_j - hbar^(1/2) A(x_j)``.
    """

    grid: ParticleGrid
    basis: FockBasis
    modes: ModeSet
    cutoff: Cutoff
    hbar: float
    N: int = 1
    V_on: bool = True
    coupling_on: bool = True
    derivative: str = "spectral"
    axis: int = 0
    _ladders: Optional[Ladders] = field(default=None, repr=False)

    def __post_init__(self):
        if self.N not in (1, 2):
            raise ValueError("N must be 1 or 2")
        if self.derivative not in ("spectral", "central"):
            raise ValueError("derivative must be 'spectral' or 'central'")
        if self.derivative == "spectral" and not self.grid.periodic:
            raise ValueError("spectral derivative requires a periodic grid")
        if self.modes.M != self.basis.M:
            raise ValueError("mode set and Fock basis disagree on M")
        size = self.grid.G**self.N * self.basis.size
        if size > DIMENSION_CAP:
            raise DimensionError(f"tensor size {size} exceeds cap {DIMENSION_CAP}")
        x = self.grid.x
        m = self.modes
        amp = np.sqrt(m.weights) * self.cutoff.profile(m.kabs) / np.sqrt(2.0 * m.kabs) * m.pol[:, self.axis]
        if not self.coupling_on:
            amp = np.zeros_like(amp)
        self.amp = amp
        # g[i, x] such that A(x) = sum_i conj(g_i) b_i + g_i b_i*
        self.g = amp[:, None] * np.exp(-1j * m.k[:, self.axis][:, None] * x[None, :])
        self.omega = m.kabs
        self.n_photons = self.basis.total_number()
        self.field_energy = self.basis.occupations @ self.omega
        self.kappa = self.grid.wavenumbers
        self.shape = (self.grid.G,) * self.N + (self.basis.size,)
        self.V = self._pair_potential()

    @property
    def dim(self):
        return int(np.prod(self.shape))

    def _pair_potential(self):
        if self.N < 2 or not self.V_on:
            return None
        x = self.grid.x
        V, _ = CoulombKernel(self.cutoff).radial(np.abs(x[:, None] - x[None, :]).ravel())
        return V.reshape(self.grid.G, self.grid.G)[..., None]

    @property
    def ladders(self):
        if self._ladders is None:
            self._ladders = build_ladders(self.basis, self.omega)
        return self._ladders

    # -- building blocks on shaped arrays --

    def _on_axis(self, coef, j):
        shp = [1] * (self.N + 1)
        shp[j] = -1
        return coef.reshape(shp)

    def apply_D(self, psi, j):
        """``-i hbar d/dx_j``."""
        if self.derivative == "spectral":
            ph = np.fft.fft(psi, axis=j)
            ph *= self._on_axis(self.hbar * self.kappa, j)
            return np.fft.ifft(ph, axis=j)
        h = self.grid.h
        fwd = np.roll(psi, -1, axis=j)
        bwd = np.roll(psi, 1, axis=j)
        if not self.grid.periodic:
            sl = [slice(None)] * psi.ndim
            sl[j] = -1
            fwd[tuple(sl)] = 0
            sl[j] = 0
            bwd[tuple(sl)] = 0
        return -1j * self.hbar * (fwd - bwd) / (2 * h)

    def apply_A(self, psi, j):
        out = np.zeros_like(psi)
        for i in range(self.basis.M):
            gi = self._on_axis(self.g[i], j)
            out += np.conj(gi) * _lower(psi, self.basis, i) + gi * _raise(psi, self.basis, i)
        return out

    def apply_E(self, psi, j):
        out = np.zeros_like(psi)
        for i in range(self.basis.M):
            gi = self._on_axis(self.g[i], j)
            out += 1j * self.omega[i] * (np.conj(gi) * _lower(psi, self.basis, i) - gi * _raise(psi, self.basis, i))
        return out

    def apply_P(self, psi, j):
        return self.apply_D(psi, j) - np.sqrt(self.hbar) * self.apply_A(psi, j)

    def apply(self, psi):
        out = np.zeros_like(psi)
        for j in range(self.N):
            out += self.apply_P(self.apply_P(psi, j), j)
        if self.V is not None:
            out += self.V * psi
        out += self.hbar * self.field_energy * psi
        return out

    def matvec(self, v):
        return self.apply(v.reshape(self.shape)).ravel()

    def energy(self, psi):
        """``<psi, H psi>`` as a sum of manifestly real parts."""
        e = 0.0
        for j in range(self.N):
            Pp = self.apply_P(psi, j)
            e += float(np.vdot(Pp, Pp).real)
        if self.V is not None:
            e += float(np.sum(self.V * np.abs(psi) ** 2))
        e += self.hbar * float(np.sum(self.field_energy * np.abs(psi) ** 2))
        return e

    # -- explicit matrices (small systems only) --

    def field_operator(self, kind, gi):
        """Sparse ``A(x_g)`` or ``E(x_g)`` on the Fock space at grid index ``gi``."""
        L = self.ladders
        out = sp.csr_matrix((self.basis.size, self.basis.size), dtype=complex)
        for i in range(self.basis.M):
            c = self.g[i, gi]
            if kind == "A":
                out = out + np.conj(c) * L.a[i] + c * L.adag[i]
            elif kind == "E":
                out = out + 1j * self.omega[i] * (np.conj(c) * L.a[i] - c * L.adag[i])
            else:
                raise ValueError("kind must be 'A' or 'E'")
        return out

    def to_sparse(self):
        """Assemble H explicitly as a sparse matrix (intended for small checks)."""
        G, F = self.grid.G, self.basis.size
        eye_G = sp.identity(G, format="csr")
        col = np.zeros((G, G), dtype=complex)
        for c in range(G):
            e = np.zeros((G,) + (1,) * (self.N - 1) + (1,), dtype=complex)
            e[c] = 1.0
            col[:, c] = self.apply_D(e, 0).reshape(G, -1)[:, 0]
        Dm = sp.csr_matrix(col)
        L = self.ladders
        blocks = []
        for j in range(self.N):
            def on(op_particle, op_fock, j=j):
                mats = [eye_G] * self.N
                mats[j] = op_particle
                out = mats[0]
                for m_ in mats[1:]:
                    out = sp.kron(out, m_, format="csr")
                return sp.kron(out, op_fock, format="csr")

            A = sp.csr_matrix((G**self.N * F, G**self.N * F), dtype=complex)
            for i in range(self.basis.M):
                A = A + on(sp.diags(np.conj(self.g[i])), L.a[i]) + on(sp.diags(self.g[i]), L.adag[i])
            P = on(Dm, sp.identity(F)) - np.sqrt(self.hbar) * A
            blocks.append(P @ P)
        H = blocks[0]
        for b in blocks[1:]:
            H = H + b
        if self.V is not None:
            H = H + sp.diags(np.repeat(self.V[..., 0].ravel(), F))
        H = H + self.hbar * sp.kron(sp.identity(G**self.N), L.H_f, format="csr")
        return H.tocsr()

    def hermiticity_error(self):
        H = self.to_sparse()
        diff = H - H.conj().T
        return float(np.max(np.abs(diff.data))) if diff.nnz else 0.0

    def faraday_11(self):
        """Coefficients of the collinear quantum Faraday component ``d_1 A^1 - d_1 A^1``."""
        dg = -1j * self.modes.k[:, self.axis][:, None] * self.g
        return dg - dg


def assemble_hamiltonian(grid, basis, cutoff, hbar, N=1, V_on=True, modes=None, **kw):
    if modes is None:
        raise ValueError("a ModeSet of kept modes is required")
    return HamiltonianRep(grid, basis, modes, cutoff, hbar, N, V_on, **kw)


# -- initial data and propagation -------------------------------------------


def gaussian_packet(grid, q, p, hbar):
    """``(pi hbar)^(-1/4) exp(-(x-q)^2/(2 hbar)) exp(i p (x-q)/hbar)`` sampled, times sqrt(h)."""
    x = grid.x
    psi = (np.pi * hbar) ** -0.25 * np.exp(-((x - q) ** 2) / (2 * hbar) + 1j * p * (x - q) / hbar)
    return psi * np.sqrt(grid.h)


def initial_state(q0, p0, alpha0, hbar, grid, basis, modes, bound=1e-6):
    """Gaussian product state tensored with ``W(hbar^(-1/2) alpha0) Omega``."""
    q0 = np.atleast_1d(np.asarray(q0, dtype=float))
    p0 = np.atleast_1d(np.asarray(p0, dtype=float))
    sx = np.sqrt(hbar / 2.0)
    sp_ = np.sqrt(hbar / 2.0)
    for q, p in zip(q0, p0):
        if q - 6 * sx < grid.x[0] or q + 6 * sx > grid.x[-1]:
            raise ValueError(f"wave packet at q={q} (sigma {sx:.3g}) does not fit the grid")
        if grid.periodic and abs(p) + 6 * sp_ > hbar * np.pi / grid.h:
            raise ValueError(f"momentum p={p} is not resolved by the grid spacing")
    psi = np.ones(())
    for q, p in zip(q0, p0):
        phi = gaussian_packet(grid, q, p, hbar)
        psi = np.multiply.outer(psi, phi / np.linalg.norm(phi))
    vac = np.zeros(basis.size, dtype=complex)
    vac[0] = 1.0
    st = QuantumState(np.multiply.outer(psi, vac), hbar)
    d = modes.displacement(alpha0, hbar)
    return weyl_displace(d, st, basis, bound=bound)


def propagate(state, H, t, dt=None, krylov_dim=20, tol=1e-10):
    """``exp(-i (t/hbar) H) psi`` by Krylov substeps of length at most dt."""
    if abs(H.hbar - state.hbar) > 1e-15:
        raise ValueError("state and Hamiltonian use different hbar")
    n = 1 if dt is None else max(1, int(np.ceil(abs(t) / dt - 1e-9)))
    step = t / n
    v = state.psi.ravel()
    for _ in range(n):
        v, _ = expv(H.matvec, v, step / H.hbar, m=krylov_dim, tol=tol)
    return QuantumState(v.reshape(state.psi.shape), state.hbar, state.leakage, state.t + t)


# -- expectations -------------------------------------------------------------


def particle_density(psi, j):
    """Marginal probability of particle j on the grid."""
    axes = tuple(a for a in range(psi.ndim) if a != j)
    return np.sum(np.abs(psi) ** 2, axis=axes)


def field_phi(psi, basis, modes, g):
    """``Phi(g) psi`` with ``Phi(g) = sum_i sqrt(w_i) (conj(g_i) b_i + g_i b_i*)``."""
    g = np.asarray(g, dtype=complex)
    out = np.zeros_like(psi)
    for i in range(basis.M):
        s = np.sqrt(modes.weights[i])
        out += s * (np.conj(g[i]) * _lower(psi, basis, i) + g[i] * _raise(psi, basis, i))
    return out


def expectations(state, H, which, g=None):
    """Expectation values; particle quantities are returned per particle."""
    psi = state.psi
    if which == "position":
        x = H.grid.x
        return np.array([np.sum(x * particle_density(psi, j)) for j in range(state.N)])
    if which == "momentum":
        return np.array([np.vdot(psi, H.apply_D(psi, j)).real for j in range(state.N)])
    if which == "kinetic momentum":
        return np.array([np.vdot(psi, H.apply_P(psi, j)).real for j in range(state.N)])
    if which == "number":
        return float(np.sum(H.n_photons * np.abs(psi) ** 2))
    if which == "field":
        if g is None:
            raise ValueError("field expectation needs a test function g")
        return float(np.vdot(psi, field_phi(psi, H.basis, H.modes, g)).real)
    raise ValueError(f"unknown observable {which!r}")
