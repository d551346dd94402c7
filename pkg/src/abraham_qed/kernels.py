"""Classical field kernels on a discrete wave-vector quadrature.

Everything here is a pure function of a :class:`ModeGrid`, a :class:`Cutoff`
and (where relevant) a :class:`ModeField`.  Units: c = e = 1, particle mass 1/2.

Amplitude arrays have shape ``(n_nodes, 2)`` (node, polarization); vector
valued mode functions have shape ``(n_nodes, 2, 3)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, special

TWO_PI_32 = (2.0 * np.pi) ** -1.5

# prefactor of the radial inverse Fourier transform of 4 pi |k|^-2 |F[kappa]|^2
_COULOMB_PREF = 16.0 * np.pi**2 * TWO_PI_32


class UnsupportedCutoff(ValueError):
    pass


class InadmissibleCutoff(ValueError):
    pass


# ---------------------------------------------------------------------------
# polarization and grids
# ---------------------------------------------------------------------------


def polarization_basis(k):
    """Return ``(eps1, eps2)`` completing ``k/|k|`` to a right-handed ONB.

    eps1 = z x k^ / |z x k^|, eps2 = k^ x eps1.  When k is (nearly) parallel
    to z, eps1 = x and eps2 = k^ x x.
    """
    k = np.asarray(k, dtype=float)
    nrm = np.linalg.norm(k)
    if nrm == 0.0:
        raise ValueError("polarization basis undefined at k = 0")
    khat = k / nrm
    e1 = np.array([-khat[1], khat[0], 0.0])
    s = np.linalg.norm(e1)
    if s < 1e-8:
        e1 = np.array([1.0, 0.0, 0.0])
    else:
        e1 = e1 / s
    e2 = np.cross(khat, e1)
    return e1, e2


def polarization_bases(nodes):
    """Vectorized :func:`polarization_basis`; returns shape ``(n, 2, 3)``."""
    nodes = np.asarray(nodes, dtype=float)
    nrm = np.linalg.norm(nodes, axis=1)
    if np.any(nrm == 0.0):
        raise ValueError("polarization basis undefined at k = 0")
    khat = nodes / nrm[:, None]
    e1 = np.stack([-khat[:, 1], khat[:, 0], np.zeros(len(khat))], axis=1)
    s = np.linalg.norm(e1, axis=1)
    degenerate = s < 1e-8
    e1[~degenerate] /= s[~degenerate, None]
    e1[degenerate] = (1.0, 0.0, 0.0)
    e2 = np.cross(khat, e1)
    return np.stack([e1, e2], axis=1)


@dataclass(eq=False)
class ModeGrid:
    """Finite quadrature of wave-vector space times two polarizations.

    ``active`` masks (node, polarization) pairs; inactive pairs carry no
    amplitude and do not couple.  ``cutoff`` optionally records the cutoff
    the grid was built for, so mismatched use can be detected.
    """

    nodes: np.ndarray
    weights: np.ndarray
    pol: np.ndarray = None
    active: np.ndarray = None
    cutoff: Optional["Cutoff"] = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(self.weights) != len(self.nodes):
            raise ValueError("one weight per node required")
        if np.any(self.weights <= 0):
            raise ValueError("quadrature weights must be positive")
        if np.any(np.linalg.norm(self.nodes, axis=1) == 0.0):
            raise ValueError("quadrature must exclude k = 0")
        if self.pol is None:
            self.pol = polarization_bases(self.nodes)
        if self.active is None:
            self.active = np.ones((len(self.nodes), 2), dtype=bool)
        self.active = np.asarray(self.active, dtype=bool)

    def __len__(self):
        return len(self.nodes)

    @property
    def kabs(self):
        return np.linalg.norm(self.nodes, axis=1)

    @property
    def shape(self):
        return (len(self.nodes), 2)

    def coupling(self, cutoff):
        """Cached per-cutoff coefficient ``w F / sqrt(2|k|)`` times polarization."""
        if self.cutoff is not None and cutoff != self.cutoff:
            raise ValueError("cutoff does not match the one this grid was built for")
        key = cutoff._key()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        kabs = self.kabs
        c = self.weights * cutoff.profile(kabs) / np.sqrt(2.0 * kabs)
        cpol = (c[:, None] * self.active)[:, :, None] * self.pol
        self._cache[key] = cpol
        return cpol


def spherical_grid(n_radial, n_theta, n_phi, k_max, cutoff=None):
    """Product rule: Gauss-Legendre in |k| on (0, k_max], Gauss-Legendre in
    cos(theta), uniform in phi.  ``n_phi`` must be even so that the node set
    is symmetric under k -> -k."""
    if n_phi % 2:
        raise ValueError("n_phi must be even")
    xr, wr = np.polynomial.legendre.leggauss(n_radial)
    r = 0.5 * k_max * (xr + 1.0)
    wr = 0.5 * k_max * wr * r**2
    mu, wmu = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    wphi = 2.0 * np.pi / n_phi
    R, MU, PHI = np.meshgrid(r, mu, phi, indexing="ij")
    W = wr[:, None, None] * wmu[None, :, None] * wphi * np.ones_like(PHI)
    st = np.sqrt(1.0 - MU**2)
    nodes = np.stack([R * st * np.cos(PHI), R * st * np.sin(PHI), R * MU], axis=-1)
    return ModeGrid(nodes.reshape(-1, 3), W.reshape(-1), cutoff=cutoff)


@dataclass(eq=False)
class ModeField:
    amplitudes: np.ndarray
    grid: ModeGrid

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != self.grid.shape:
            raise ValueError(
                f"amplitude shape {self.amplitudes.shape} != grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.amplitudes)):
            raise ValueError("non-finite mode amplitudes")

    @classmethod
    def zeros(cls, grid):
        return cls(np.zeros(grid.shape, dtype=complex), grid)

    def evolve_free(self, t):
        """Exact free evolution ``alpha -> exp(-i t |k|) alpha``."""
        return ModeField(np.exp(-1j * t * self.grid.kabs)[:, None] * self.amplitudes, self.grid)


# ---------------------------------------------------------------------------
# cutoffs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cutoff:
    """Radial profile of F[kappa].

    Families: ``sharp`` ((2 pi)^-3/2 on |k| <= scale), ``gaussian``
    ((2 pi)^-3/2 exp(-|k|^2 / (2 scale^2))), ``table`` (linear interpolation
    of ``table = (r, values)``, zero beyond the last radius) and ``custom``
    (``func`` of |k|).  ``radial=False`` marks a profile that cannot be
    handled by the radial machinery.
    """

    family: str = "sharp"
    scale: float = 1.0
    sigma: float = 0.5
    table: Optional[tuple] = None
    func: Optional[Callable] = None
    radial: bool = True
    support: Optional[float] = None

    def __post_init__(self):
        if self.family not in ("sharp", "gaussian", "table", "custom"):
            raise ValueError(f"unknown cutoff family {self.family!r}")
        if not 0.5 <= self.sigma <= 1.0:
            raise ValueError("sigma must lie in [1/2, 1]")
        if self.family == "table" and self.table is None:
            raise ValueError("table cutoff needs (r, values)")
        if self.family == "custom" and self.func is None:
            raise ValueError("custom cutoff needs func")

    def _key(self):
        return (self.family, self.scale, self.sigma, id(self.table), id(self.func), self.radial, self.support)

    def __eq__(self, other):
        return isinstance(other, Cutoff) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def profile(self, r):
        r = np.asarray(r, dtype=float)
        if self.family == "sharp":
            return np.where(r <= self.scale, TWO_PI_32, 0.0)
        if self.family == "gaussian":
            return TWO_PI_32 * np.exp(-(r**2) / (2.0 * self.scale**2))
        if self.family == "table":
            rr, vv = (np.asarray(a, dtype=float) for a in self.table)
            return np.interp(r, rr, vv, right=0.0)
        return np.asarray(self.func(r), dtype=float) * np.ones_like(r)

    def radius(self):
        """Radius beyond which |F|^2 is negligible (or exactly zero)."""
        if self.support is not None:
            return float(self.support)
        if self.family == "sharp":
            return float(self.scale)
        if self.family == "gaussian":
            # |F|^2 ~ exp(-r^2/scale^2) < 1e-19 beyond this radius
            return float(6.7 * self.scale)
        if self.family == "table":
            return float(np.max(self.table[0]))
        return np.inf

    def breakpoints(self):
        if self.family == "sharp":
            return [float(self.scale)]
        if self.family == "table":
            return [float(x) for x in np.asarray(self.table[0])]
        return []


def form_factor(x, grid, cutoff):
    """Vector-valued ``G_x(k_i, lam) = F(k_i)/sqrt(2|k_i|) eps_lam(k_i) exp(-i k_i.x)``.

    Returns shape ``(n_nodes, 2, 3)``.
    """
    x = np.asarray(x, dtype=float)
    cpol = grid.coupling(cutoff)
    phase = np.exp(-1j * grid.nodes @ x)
    return (cpol / grid.weights[:, None, None]) * phase[:, None, None]


def _field_vectors(alpha, cutoff):
    grid = alpha.grid
    cpol = grid.coupling(cutoff)
    return np.einsum("il,ilm->im", alpha.amplitudes, cpol)


def _phases(grid, x):
    x = np.asarray(x, dtype=float)
    return np.exp(1j * (x.reshape(-1, 3) @ grid.nodes.T))


def eval_A(alpha, x, cutoff):
    """Smeared vector potential at ``x`` (shape (3,) or (P, 3))."""
    x = np.asarray(x, dtype=float)
    vec = _field_vectors(alpha, cutoff)
    out = 2.0 * np.real(_phases(alpha.grid, x) @ vec)
    return out.reshape(x.shape)


def eval_E(alpha, x, cutoff):
    """Smeared electric field at ``x``."""
    x = np.asarray(x, dtype=float)
    vec = _field_vectors(alpha, cutoff) * alpha.grid.kabs[:, None]
    out = 2.0 * np.real(1j * (_phases(alpha.grid, x) @ vec))
    return out.reshape(x.shape)


def eval_grad_A(alpha, x, cutoff):
    """Jacobian ``D[l, m] = d_m A^l`` at a single point ``x``."""
    vec = _field_vectors(alpha, cutoff)
    ph = _phases(alpha.grid, x)[0]
    return 2.0 * np.real(1j * np.einsum("i,il,im->lm", ph, vec, alpha.grid.nodes))


def eval_faraday(alpha, x, cutoff):
    """Faraday tensor ``F^{lm} = d_m A^l - d_l A^m`` at ``x`` (3x3, antisymmetric)."""
    D = eval_grad_A(alpha, x, cutoff)
    return D - D.T


def norm_h_sigma(alpha, sigma, homogeneous=False):
    if not 0.0 <= sigma <= 1.0:
        raise ValueError("sigma must lie in [0, 1]")
    kabs = alpha.grid.kabs
    if homogeneous:
        wt = kabs ** (2.0 * sigma)
    else:
        wt = (1.0 + kabs**2) ** sigma
    s = np.sum(alpha.grid.weights * wt * np.sum(np.abs(alpha.amplitudes) ** 2, axis=1))
    return float(np.sqrt(s))


def inner(f, g):
    """Discrete h inner product ``<f, g> = sum_i w_i sum_lam conj(f) g``."""
    return complex(np.sum(f.grid.weights[:, None] * np.conj(f.amplitudes) * g.amplitudes))


# ---------------------------------------------------------------------------
# radial integrals, admissibility, Coulomb
# ---------------------------------------------------------------------------


def _radial_integral(fun, a, b, points=()):
    pts = [p for p in points if a < p < b]
    val, _ = integrate.quad(fun, a, b, points=pts or None, limit=400, epsabs=0.0, epsrel=1e-13)
    return val


def cutoff_norms(cutoff, sigma=None, n_doublings=40):
    """Return ``(||k^-1 F||^2, ||k^(3/2-sigma) F||^2, increments)``.

    Integrals over dyadic shells [R 2^n, R 2^(n+1)] plus the inner ball
    [0, R]; the per-shell increments drive the divergence test.
    """
    sigma = cutoff.sigma if sigma is None else sigma
    R0 = cutoff.scale if cutoff.family in ("sharp", "gaussian") else 1.0
    bp = cutoff.breakpoints()
    fns = (
        lambda r: 4.0 * np.pi * cutoff.profile(r) ** 2,
        lambda r: 4.0 * np.pi * r ** (5.0 - 2.0 * sigma) * cutoff.profile(r) ** 2,
    )
    totals, incs = [], []
    for fn in fns:
        shells = [_radial_integral(fn, 0.0, R0, bp)]
        a = R0
        for _ in range(n_doublings):
            shells.append(_radial_integral(fn, a, 2.0 * a, bp))
            a *= 2.0
        totals.append(float(sum(shells)))
        incs.append(np.array(shells))
    return totals[0], totals[1], incs


@dataclass
class AdmissibilityReport:
    norm_inv_k: float
    norm_weighted: float
    converged_inv_k: bool
    converged_weighted: bool
    sigma: float

    @property
    def passed(self):
        return (
            self.converged_inv_k
            and self.converged_weighted
            and 0.5 <= self.sigma <= 1.0
        )

    def as_dict(self):
        return {
            "norm_inv_k": self.norm_inv_k,
            "norm_weighted": self.norm_weighted,
            "converged_inv_k": self.converged_inv_k,
            "converged_weighted": self.converged_weighted,
            "sigma": self.sigma,
            "passed": self.passed,
        }


def _shells_converge(shells):
    tail = shells[-4:]
    total = np.sum(np.abs(shells))
    if total == 0.0:
        return True
    if np.all(np.abs(tail) <= 1e-14 * total):
        return True
    # ratio test on the last dyadic shells
    ratios = np.abs(tail[1:]) / np.maximum(np.abs(tail[:-1]), 1e-300)
    return bool(np.all(ratios < 0.9))


def check_admissibility(cutoff):
    """Estimate both cutoff norms and flag divergence under radial refinement."""
    if not cutoff.radial:
        raise UnsupportedCutoff("only radial cutoff profiles are supported")
    n1, n2, (s1, s2) = cutoff_norms(cutoff)
    c1, c2 = _shells_converge(s1), _shells_converge(s2)
    return AdmissibilityReport(
        norm_inv_k=float(np.sqrt(n1)) if c1 else np.inf,
        norm_weighted=float(np.sqrt(n2)) if c2 else np.inf,
        converged_inv_k=c1,
        converged_weighted=c2,
        sigma=cutoff.sigma,
    )


def _gl_panels(k_max, n_panels, order=16):
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, k_max, n_panels + 1)
    a, b = edges[:-1, None], edges[1:, None]
    k = (0.5 * (b - a) * (x + 1.0) + a).ravel()
    wk = (0.5 * (b - a) * w).ravel()
    return k, wk


class CoulombKernel:
    """Smeared Coulomb potential V = kappa * kappa * |.|^-1 via radial quadrature.

    V(r) = (2 pi)^-3/2 16 pi^2 int_0^K |F(k)|^2 j0(k r) dk and
    V'(r) = -(2 pi)^-3/2 16 pi^2 int_0^K |F(k)|^2 k j1(k r) dk.
    ``resolution`` multiplies the panel count (used by oracles).
    """

    def __init__(self, cutoff, resolution=1):
        if not cutoff.radial:
            raise UnsupportedCutoff("only radial cutoff profiles are supported")
        rep = check_admissibility(cutoff)
        if not rep.passed:
            raise InadmissibleCutoff(f"cutoff fails admissibility: {rep.as_dict()}")
        self.cutoff = cutoff
        self.k_max = cutoff.radius()
        if not np.isfinite(self.k_max):
            raise UnsupportedCutoff("custom cutoff needs an explicit support radius")
        self.resolution = resolution
        self._rules = {}

    def _rule(self, r_max):
        # panels sized so each carries at most ~half an oscillation of j0(k r)
        n = int(max(8, np.ceil(self.k_max * max(r_max, 1.0) / np.pi) * 2)) * self.resolution
        rule = self._rules.get(n)
        if rule is None:
            k, w = _gl_panels(self.k_max, n)
            w = w * self.cutoff.profile(k) ** 2 * _COULOMB_PREF
            rule = self._rules[n] = (k, w)
        return rule

    def radial(self, r):
        """Return ``(V(r), V'(r))`` for radii ``r >= 0``."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        k, w = self._rule(float(np.max(r)) if r.size else 1.0)
        kr = np.outer(r, k)
        V = special.spherical_jn(0, kr) @ w
        dV = -(special.spherical_jn(1, kr) @ (w * k))
        return V, dV

    def __call__(self, sep):
        """``(V, grad V)`` at separation vector(s) ``sep`` of shape (3,) or (P, 3)."""
        sep = np.asarray(sep, dtype=float)
        pts = sep.reshape(-1, 3)
        r = np.linalg.norm(pts, axis=1)
        V, dV = self.radial(r)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[:, None] > 0, pts / r[:, None], 0.0)
        grad = dV[:, None] * unit
        if sep.ndim == 1:
            return float(V[0]), grad[0]
        return V, grad

    def hessian_bound(self):
        """Rigorous ``sup ||hess V||_op`` bound from |j1(z)/z|, |j1'(z)| <= 1/3."""
        k, w = self._rule(1.0)
        return float(np.sum(w * k**2) / 3.0)

    def sup_bound(self):
        """The cutoff bound ``||k^-1 F||^2`` on sup |V|."""
        return float(cutoff_norms(self.cutoff)[0])


def coulomb(r, cutoff):
    """``(V, grad V)`` at separation ``r``; builds a fresh kernel (cache it for loops)."""
    return CoulombKernel(cutoff)(r)
