"""Newton-Maxwell (Abraham) dynamics on a discrete mode grid.

The state is ``u = (q, p, alpha)``: positions and canonical momenta of shape
``(N, 3)`` and complex mode amplitudes of shape ``(n_nodes, 2)``.  In the
collinear reduction (``axis`` set) particles move along one axis and only the
matching field component couples; transverse entries of q and p stay zero.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .kernels import CoulombKernel, ModeField, norm_h_sigma


class NumericalError(RuntimeError):
    def __init__(self, msg, last_good=None):
        super().__init__(msg)
        self.last_good = last_good


@dataclass
class ClassicalState:
    q: np.ndarray
    p: np.ndarray
    alpha: ModeField
    t: float = 0.0

    def __post_init__(self):
        self.q = np.atleast_2d(np.asarray(self.q, dtype=float))
        self.p = np.atleast_2d(np.asarray(self.p, dtype=float))
        if self.q.shape != self.p.shape or self.q.shape[1] != 3:
            raise ValueError("q and p must both have shape (N, 3)")

    @property
    def n_particles(self):
        return self.q.shape[0]

    def copy(self):
        return ClassicalState(self.q.copy(), self.p.copy(), ModeField(self.alpha.amplitudes.copy(), self.alpha.grid), self.t)

    def norm_X(self, sigma):
        """``||u||_{X^sigma}``."""
        s = np.sum(self.q**2) + np.sum(self.p**2) + norm_h_sigma(self.alpha, sigma) ** 2
        return float(np.sqrt(s))


@dataclass(eq=False)
class Model:
    """Static data of a Newton-Maxwell run.

    ``coupling_on=False`` zeroes the field-particle coupling (free particles
    and free field); ``coulomb_on=False`` drops the pair potential.
    """

    grid: object
    cutoff: object
    axis: Optional[int] = None
    coupling_on: bool = True
    coulomb_on: bool = True
    _coulomb: Optional[CoulombKernel] = field(default=None, repr=False)

    def __post_init__(self):
        cpol = self.grid.coupling(self.cutoff)
        if not self.coupling_on:
            cpol = np.zeros_like(cpol)
        if self.axis is not None:
            mask = np.zeros(3)
            mask[self.axis] = 1.0
            cpol = cpol * mask
        self.cpol = cpol
        self.kabs = self.grid.kabs
        self.nodes = self.grid.nodes
        self.weights = self.grid.weights

    @property
    def coulomb(self):
        if self._coulomb is None:
            self._coulomb = CoulombKernel(self.cutoff)
        return self._coulomb

    # -- field evaluations at particle positions, raw arrays ---------------

    def fields(self, q, alpha):
        """Return ``(A, D, ph)`` at positions q: A (N,3), D[j,l,m] = d_m A^l, phases (N,n)."""
        ph = np.exp(1j * (q @ self.nodes.T))
        vec = np.einsum("il,ilm->im", alpha, self.cpol)
        pv = ph[:, :, None] * vec[None]
        A = 2.0 * np.real(pv.sum(axis=1))
        D = 2.0 * np.real(1j * np.einsum("jil,im->jlm", pv, self.nodes))
        return A, D, ph

    def pair_forces(self, q):
        """Return ``(V_total, gradV)`` where gradV[j] = sum_{k != j} grad V(q_j - q_k)."""
        n = len(q)
        grad = np.zeros_like(q)
        if n < 2 or not self.coulomb_on:
            return 0.0, grad
        ii, jj = np.triu_indices(n, 1)
        V, g = self.coulomb(q[ii] - q[jj])
        np.add.at(grad, ii, g)
        np.add.at(grad, jj, -g)
        return float(np.sum(V)), grad

    def project(self, v):
        if self.axis is None:
            return v
        out = np.zeros_like(v)
        out[:, self.axis] = v[:, self.axis]
        return out


def _rest_flow(model, q, p, alpha):
    """Vector field of everything except the free field rotation."""
    A, D, ph = model.fields(q, alpha)
    pt = model.project(p - A)
    _, gradV = model.pair_forces(q)
    dq = 2.0 * pt
    dp = model.project(2.0 * np.einsum("jl,jlm->jm", pt, D) - gradV)
    # G_{q_j}(k, lam) . pt_j with G = cpol/w * conj(phase)
    src = np.einsum("ji,ilm,jm->il", np.conj(ph), model.cpol, pt) / model.weights[:, None]
    dalpha = 2j * src
    return dq, dp, dalpha


def rhs(model, u):
    """Time derivative ``(dq, dp, dalpha)`` of the full Newton-Maxwell system."""
    _check_finite(u.q, u.p, u.alpha.amplitudes, u)
    dq, dp, da = _rest_flow(model, u.q, u.p, u.alpha.amplitudes)
    da = da - 1j * model.kabs[:, None] * u.alpha.amplitudes
    return dq, dp, da


def _check_finite(q, p, a, last_good):
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p)) and np.all(np.isfinite(a))):
        raise NumericalError("non-finite entry in classical state", last_good)


def _rk4(f, h, q, p, a):
    k1 = f(q, p, a)
    k2 = f(q + 0.5 * h * k1[0], p + 0.5 * h * k1[1], a + 0.5 * h * k1[2])
    k3 = f(q + 0.5 * h * k2[0], p + 0.5 * h * k2[1], a + 0.5 * h * k2[2])
    k4 = f(q + h * k3[0], p + h * k3[1], a + h * k3[2])
    return (
        q + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
        p + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
        a + h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]),
    )


def _strang_raw(model, q, p, a, h):
    rot = np.exp(-0.5j * h * model.kabs)[:, None]
    a = rot * a
    q, p, a = _rk4(lambda q_, p_, a_: _rest_flow(model, q_, p_, a_), h, q, p, a)
    return q, p, rot * a


def _rk4_raw(model, q, p, a, h):
    def f(q_, p_, a_):
        dq, dp, da = _rest_flow(model, q_, p_, a_)
        return dq, dp, da - 1j * model.kabs[:, None] * a_

    return _rk4(f, h, q, p, a)


_SCHEMES = {"strang": _strang_raw, "rk4": _rk4_raw, "rk4-monolithic": _rk4_raw}


def step_strang(model, u, dt, backward=False):
    """One Strang step: exact half rotation, RK4 particle/source substep, half rotation.

    ``backward=True`` steps to ``t - dt``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    h = -dt if backward else dt
    q, p, a = _strang_raw(model, u.q, u.p, u.alpha.amplitudes, h)
    _check_finite(q, p, a, u)
    return ClassicalState(q, p, ModeField(a, u.alpha.grid), u.t + h)


def step_rk4(model, u, dt):
    if dt <= 0:
        raise ValueError("dt must be positive")
    q, p, a = _rk4_raw(model, u.q, u.p, u.alpha.amplitudes, dt)
    _check_finite(q, p, a, u)
    return ClassicalState(q, p, ModeField(a, u.alpha.grid), u.t + dt)


def kinetic_momentum(model, u):
    """``p_j - A(q_j)`` (projected on the axis in collinear runs)."""
    A, _, _ = model.fields(u.q, u.alpha.amplitudes)
    return model.project(u.p - A)


def energy(model, u):
    A, _, _ = model.fields(u.q, u.alpha.amplitudes)
    pt = model.project(u.p - A)
    V, _ = model.pair_forces(u.q)
    field_energy = np.sum(model.weights * model.kabs * np.sum(np.abs(u.alpha.amplitudes) ** 2, axis=1))
    return float(np.sum(pt**2) + V + field_energy)


def faraday_contraction(model, u):
    """``sum_{l,m} pt^m pt^l F^{lm}`` per particle; vanishes by antisymmetry."""
    A, D, _ = model.fields(u.q, u.alpha.amplitudes)
    pt = model.project(u.p - A)
    F = D - np.transpose(D, (0, 2, 1))
    return np.einsum("jm,jl,jlm->j", pt, pt, F)


# ---------------------------------------------------------------------------
# integration with monitors
# ---------------------------------------------------------------------------


@dataclass
class SolverConfig:
    dt: float = 1e-3
    t_end: float = 1.0
    scheme: str = "strang"
    axis: Optional[int] = None
    N: int = 1
    sigma: float = 0.5
    stride: int = 1

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        if self.scheme not in _SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")


@dataclass
class Trajectory:
    states: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    ptilde: list = field(default_factory=list)
    norm_h_sigma: list = field(default_factory=list)
    norm_hdot_half: list = field(default_factory=list)
    sup_p: list = field(default_factory=list)
    norm_X: list = field(default_factory=list)
    faraday: list = field(default_factory=list)
    monitors: dict = field(default_factory=dict)
    sigma: float = 0.5

    @property
    def times(self):
        return np.array([s.t for s in self.states])

    def energy_drift(self):
        E = np.asarray(self.energy)
        return float(np.max(np.abs(E - E[0])) / (abs(E[0]) + 1.0))

    def at(self, t, tol=1e-9):
        times = self.times
        i = int(np.argmin(np.abs(times - t)))
        if abs(times[i] - t) > tol:
            raise KeyError(f"no sample at t={t}")
        return self.states[i]

    def write_csv(self, path, header_note=""):
        n = self.states[0].n_particles
        cols = ["t"]
        for name in ("q", "p", "ptilde"):
            cols += [f"{name}{j + 1}_{c}" for j in range(n) for c in "xyz"]
        cols += ["energy", "norm_h_sigma", "norm_hdot_half"]
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema=1 units: c=e=1 mass=1/2 sigma={self.sigma} {header_note}\n")
            w = csv.writer(fh)
            w.writerow(cols)
            for s, E, pt, nh, nd in zip(
                self.states, self.energy, self.ptilde, self.norm_h_sigma, self.norm_hdot_half
            ):
                row = [s.t, *s.q.ravel(), *s.p.ravel(), *np.ravel(pt), E, nh, nd]
                w.writerow([repr(float(x)) for x in row])

    def summary(self):
        return {
            "t_end": float(self.states[-1].t),
            "samples": len(self.states),
            "energy_initial": self.energy[0],
            "energy_drift": self.energy_drift(),
            "max_faraday_contraction": float(np.max(np.abs(self.faraday))),
            "monitors": self.monitors,
        }

    def write_summary(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


def _record(traj, model, u, sigma):
    A, D, _ = model.fields(u.q, u.alpha.amplitudes)
    pt = model.project(u.p - A)
    F = D - np.transpose(D, (0, 2, 1))
    traj.states.append(u)
    traj.energy.append(energy(model, u))
    traj.ptilde.append(pt)
    traj.norm_h_sigma.append(norm_h_sigma(u.alpha, sigma))
    traj.norm_hdot_half.append(norm_h_sigma(u.alpha, 0.5, homogeneous=True))
    traj.sup_p.append(float(np.max(np.linalg.norm(u.p, axis=1))))
    traj.norm_X.append(u.norm_X(sigma))
    traj.faraday.append(float(np.max(np.abs(np.einsum("jm,jl,jlm->j", pt, pt, F)))))


def fit_envelopes(times, sup_p, hdot_half, norm_X, fraction=0.2, factor=2.0):
    """Least-squares envelope constants over the first ``fraction`` of the run.

    ``sup|p|`` and ``||alpha||_{hdot^1/2}`` are fitted by a constant,
    ``||u||_{X^sigma}`` by ``C (t + 1)``; a flag is raised when a sample
    exceeds ``factor`` times its envelope.
    """
    t = np.asarray(times)
    m = max(2, int(np.ceil(fraction * len(t))))
    out = {}
    for name, y in (("sup_p", sup_p), ("norm_hdot_half", hdot_half)):
        y = np.asarray(y)
        C = float(np.mean(y[:m]))
        out[name] = {"C": C, "max_ratio": float(np.max(y) / C) if C > 0 else 0.0,
                     "violated": bool(np.any(y > factor * C + 1e-300))}
    y = np.asarray(norm_X)
    s = t[:m] + 1.0
    C = float(np.dot(y[:m], s) / np.dot(s, s))
    ratio = y / (C * (t + 1.0)) if C > 0 else np.zeros_like(y)
    out["norm_X"] = {"C": C, "max_ratio": float(np.max(ratio)), "violated": bool(np.any(ratio > factor))}
    return out


def integrate(model, u0, config, sample_times=None):
    """Integrate from ``u0`` to ``config.t_end``.

    Samples every ``config.stride`` steps (always including both ends), or
    at ``sample_times`` if given (each must be a multiple of ``dt`` up to
    rounding).
    """
    step = _SCHEMES[config.scheme]
    n_steps = int(round(config.t_end / config.dt))
    if sample_times is not None:
        sample_idx = {int(round(t / config.dt)) for t in sample_times}
    else:
        sample_idx = set(range(0, n_steps + 1, config.stride)) | {n_steps}
    traj = Trajectory(sigma=config.sigma)
    q, p, a = u0.q.copy(), u0.p.copy(), u0.alpha.amplitudes.copy()
    grid = u0.alpha.grid
    t0 = u0.t
    if 0 in sample_idx:
        _record(traj, model, ClassicalState(q, p, ModeField(a, grid), t0), config.sigma)
    for n in range(1, n_steps + 1):
        qn, pn, an = step(model, q, p, a, config.dt)
        if not (np.all(np.isfinite(qn)) and np.all(np.isfinite(pn)) and np.all(np.isfinite(an))):
            last = ClassicalState(q, p, ModeField(a, grid), t0 + (n - 1) * config.dt)
            raise NumericalError(f"non-finite state at step {n}", last)
        q, p, a = qn, pn, an
        if n in sample_idx:
            _record(traj, model, ClassicalState(q.copy(), p.copy(), ModeField(a.copy(), grid), t0 + n * config.dt), config.sigma)
    if len(traj.states) >= 2:
        traj.monitors = fit_envelopes(traj.times - t0, traj.sup_p, traj.norm_hdot_half, traj.norm_X)
    return traj
