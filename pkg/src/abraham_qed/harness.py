"""Orchestration of classical runs, paired quantum-classical runs and sweeps."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import beta as B
from .classical import ClassicalState, Model, SolverConfig, faraday_contraction, integrate
from .fock import (
    FockBasis,
    ParticleGrid,
    assemble_hamiltonian,
    build_ladders,
    expectations,
    initial_state,
    propagate,
)
from .kernels import (
    CoulombKernel,
    ModeField,
    check_admissibility,
    eval_faraday,
    polarization_basis,
    spherical_grid,
)

SCHEMA_VERSION = 1
UNITS_NOTE = "units: c=e=1 mass=1/2"


# -- classical -----------------------------------------------------------------


def field_profile(grid, cfg):
    """Initial amplitudes on a spherical grid from a named profile."""
    k = grid.kabs
    amp = np.zeros(grid.shape, dtype=complex)
    if cfg.profile == "gaussian":
        env = np.exp(-(k**2) / cfg.width**2)
        amp[:, 0] = cfg.amplitude[0] * env
        amp[:, 1] = cfg.amplitude[1] * env
    elif cfg.profile == "reference":
        amp[:, 0] = 0.5 * np.exp(-(k**2))
        amp[:, 1] = 0.3j * np.exp(-(k**2)) * np.cos(grid.nodes[:, 0])
    return ModeField(amp * grid.active, grid)


def classical_setup(cfg, q0=None, p0=None, alpha=None):
    """Model and initial state; the kept modes are used when present."""
    if cfg.modes is not None and (cfg.grid is None or cfg.collinear):
        grid = cfg.modes.grid(cfg.cutoff)
        a = cfg.alpha_modes if alpha is None else alpha
        a0 = cfg.modes.to_field(a, grid)
    else:
        grid = spherical_grid(cfg.grid["n_radial"], cfg.grid["n_theta"], cfg.grid["n_phi"], cfg.grid["k_max"],
                              cutoff=cfg.cutoff)
        a0 = field_profile(grid, cfg)
    model = Model(grid, cfg.cutoff, axis=cfg.axis, coupling_on=cfg.coupling_on, coulomb_on=cfg.V_on)
    q = cfg.q0.copy() if q0 is None else _collinear(q0, cfg.N)
    p = cfg.p0.copy() if p0 is None else _collinear(p0, cfg.N)
    return model, ClassicalState(q, p, a0)


def _collinear(v, N):
    out = np.zeros((N, 3))
    out[:, 0] = np.atleast_1d(v)
    return out


def run_classical(cfg):
    model, u0 = classical_setup(cfg)
    sc = SolverConfig(cfg.dt, cfg.t_end, cfg.scheme, cfg.axis, cfg.N, cfg.cutoff.sigma, cfg.stride)
    return integrate(model, u0, sc)


# -- paired quantum-classical run ----------------------------------------------


@dataclass
class PairedRun:
    hbar: float
    reports: list = field(default_factory=list)
    tanh: list = field(default_factory=list)
    gammas: list = field(default_factory=list)
    alphas_w: list = field(default_factory=list)
    beta_c_weyl: list = field(default_factory=list)
    trace_gamma: list = field(default_factory=list)
    number: list = field(default_factory=list)
    min_eig: list = field(default_factory=list)
    violations: list = field(default_factory=list)

    @property
    def times(self):
        return np.array([r.t for r in self.reports])

    def total(self):
        return np.array([r.total for r in self.reports])

    def at(self, t, tol=1e-9):
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > tol:
            raise KeyError(f"no sample at t={t}")
        return i


def sample_times(cfg):
    n = int(round(cfg.t_end / cfg.sample_dt))
    return [round(k * cfg.sample_dt, 12) for k in range(n + 1)]


def cap_population(state, basis):
    """Probability at the occupation cap, summed over modes."""
    p = np.sum(np.abs(state.psi.reshape(-1, basis.size)) ** 2, axis=0)
    occ = basis.occupations
    return float(sum(p[occ[:, i] == basis.n_max].sum() for i in range(basis.M)))


def paired_run(cfg, hbar, member=None):
    """Propagate the quantum state and the classical comparator side by side."""
    if member is None:
        q0, p0, a0 = cfg.q0[:, 0], cfg.p0[:, 0], cfg.alpha_modes
    else:
        q0, p0, a0 = member
    modes = cfg.modes
    model, u0 = classical_setup(cfg, q0, p0, a0)
    times = sample_times(cfg)
    sc = SolverConfig(cfg.dt, cfg.t_end, cfg.scheme, 0, cfg.N, cfg.cutoff.sigma)
    traj = integrate(model, u0, sc, sample_times=times)

    grid = ParticleGrid(cfg.G, cfg.x_min, cfg.x_max, cfg.periodic)
    basis = FockBasis(modes.M, cfg.n_max)
    H = assemble_hamiltonian(grid, basis, cfg.cutoff, hbar, cfg.N, cfg.V_on, modes=modes,
                             coupling_on=cfg.coupling_on, derivative=cfg.derivative)
    st = initial_state(q0, p0, a0, hbar, grid, basis, modes, bound=cfg.leakage_bound)
    run = PairedRun(hbar)
    tanh = B.tanh_function()
    for k, t in enumerate(times):
        if k > 0:
            st = propagate(st, H, times[k] - times[k - 1], krylov_dim=cfg.krylov_dim, tol=cfg.krylov_tol)
        u = traj.states[k]
        q, p = u.q[:, 0], u.p[:, 0]
        al = modes.from_field(u.alpha)
        ba = B.beta_a(st, grid, q)
        bb = B.beta_b(st, H, q, p, al)
        bbt = B.beta_b_tilde(st, H, p)
        bc, bc_w = B.beta_c(st, basis, modes, al)
        gam = B.one_photon_rdm(st, basis)
        aw = np.sqrt(modes.weights) * al
        dist = B.trace_distance(gam, aw)
        bound = B.rdm_bound(bc, modes.norm(al))
        leak = st.leakage + cap_population(st, basis)
        rep = B.BetaReport(t, ba, bb, bbt, bc, dist, bound, leak, H.energy(st.psi), traj.energy[k])
        run.reports.append(rep)
        run.tanh.append(B.observable_error(st, H, q, p, al, "position", tanh))
        run.gammas.append(gam)
        run.alphas_w.append(aw)
        run.beta_c_weyl.append(bc_w)
        run.trace_gamma.append(float(np.trace(gam).real))
        run.number.append(expectations(st, H, "number"))
        run.min_eig.append(float(np.min(np.linalg.eigvalsh(gam))))
        run.violations += _spot_check(rep, bc_w, st.leakage)
    return run


def _spot_check(rep, bc_weyl, weyl_leak):
    bad = []
    for name in ("beta_a", "beta_b", "beta_b_tilde", "beta_c", "rdm_distance"):
        if getattr(rep, name) < -1e-12:
            bad.append(f"t={rep.t}: {name} negative")
    if rep.rdm_distance > rep.rdm_bound + 1e-10:
        bad.append(f"t={rep.t}: rdm distance above bound")
    if abs(rep.beta_c - bc_weyl) > 1e-10 + weyl_leak:
        bad.append(f"t={rep.t}: beta_c formulas disagree")
    return bad


def write_beta_csv(path, run, note=""):
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={SCHEMA_VERSION} {UNITS_NOTE} hbar={run.hbar!r} collinear axis=x {note}\n")
        w = csv.writer(fh)
        w.writerow(B.BETA_COLUMNS)
        for r in run.reports:
            w.writerow([repr(float(x)) for x in r.row()])


# -- rate study ------------------------------------------------------------------


def _job(args):
    cfg, hbar, member = args
    return paired_run(cfg, hbar, member)


def _map(jobs, workers):
    if workers <= 1:
        return [_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_job, jobs))


def fit_growth(hbars, runs):
    """Fit ``log(beta / (beta_0 + hbar)) = log C + c t^2`` over all samples."""
    T, Y = [], []
    for hb, run in zip(hbars, runs):
        tot = run.total()
        base = tot[0] + hb
        for t, b in zip(run.times, tot):
            T.append(t * t)
            Y.append(np.log(max(b, 1e-300) / base))
    T, Y = np.asarray(T), np.asarray(Y)
    A = np.stack([np.ones_like(T), T], axis=1)
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    res = Y - A @ coef
    return {"C": float(np.exp(coef[0])), "c": float(coef[1]),
            "rms_residual": float(np.sqrt(np.mean(res**2))), "max_residual": float(np.max(np.abs(res)))}


def _within_factor(values, factor):
    r = [values[i] / values[i + 1] for i in range(len(values) - 1)]
    return r, all(1.0 / factor <= x <= factor for x in r)


@dataclass
class RateStudyResult:
    hbars: list
    checkpoints: list
    runs: list
    ratio_table: dict
    successive_ratios: dict
    fit: dict
    observable: dict
    ensemble: dict
    verdict: str
    observable_verdict: str
    ensemble_verdict: str
    ensemble_runs: list = field(default_factory=list)

    def as_dict(self):
        return {
            "schema": SCHEMA_VERSION,
            "units": UNITS_NOTE,
            "hbar": self.hbars,
            "checkpoints": self.checkpoints,
            "beta_total": {repr(hb): [float(x) for x in run.total()] for hb, run in zip(self.hbars, self.runs)},
            "times": [float(t) for t in self.runs[0].times],
            "ratio_table": self.ratio_table,
            "successive_ratios": self.successive_ratios,
            "fit": self.fit,
            "observable": self.observable,
            "ensemble": self.ensemble,
            "verdict": self.verdict,
            "observable_verdict": self.observable_verdict,
            "ensemble_verdict": self.ensemble_verdict,
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, indent=2, sort_keys=True)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema={SCHEMA_VERSION} {UNITS_NOTE} rate study\n")
            w = csv.writer(fh)
            w.writerow(["hbar", *B.BETA_COLUMNS, "beta_total", "tanh_error", "tanh_bound"])
            for hb, run in zip(self.hbars, self.runs):
                for r, (e, b) in zip(run.reports, run.tanh):
                    w.writerow([repr(float(x)) for x in (hb, *r.row(), r.total, e, b)])


def _ensemble_table(cfg, hbars, eruns, checkpoints):
    spec = cfg.ensemble
    n = len(spec.weights)
    table = {"dist": {}, "member_average": {}, "below_average": True, "constant": {}}
    for a, hb in enumerate(hbars):
        members = eruns[a * n:(a + 1) * n]
        d, avg = [], []
        for k in range(len(members[0].reports)):
            _, _, dist = B.ensemble_rdm(spec, [m.gammas[k] for m in members], [m.alphas_w[k] for m in members])
            d.append(dist)
            avg.append(float(sum(mu * m.reports[k].rdm_distance for mu, m in zip(spec.weights, members))))
            if dist > avg[-1] + 1e-12:
                table["below_average"] = False
        table["dist"][repr(hb)] = d
        table["member_average"][repr(hb)] = avg
        times = members[0].times
        table["constant"][repr(hb)] = {
            repr(t): d[int(np.argmin(np.abs(times - t)))] / min(np.sqrt(hb), hb) for t in checkpoints}
    stable = {}
    ok = True
    for t in checkpoints:
        vals = [table["constant"][repr(hb)][repr(t)] for hb in hbars]
        r, good = _within_factor(vals, 2.0)
        stable[repr(t)] = r
        ok = ok and good
    table["constant_ratios"] = stable
    table["stable"] = ok
    return table, ("PASS" if ok and table["below_average"] else "FAIL")


def rate_study(cfg, workers=None):
    hbars = sorted(cfg.hbars, reverse=True)
    workers = cfg.workers if workers is None else workers
    jobs = [(cfg, hb, None) for hb in hbars]
    if cfg.ensemble is not None:
        jobs += [(cfg, hb, m) for hb in hbars for m in cfg.ensemble.members]
    results = _map(jobs, workers)
    runs, eruns = results[: len(hbars)], results[len(hbars):]
    cps = cfg.checkpoints
    ratio_table, succ = {}, {}
    ok = True
    obs, obs_ok = {"error": {}, "bound": {}, "ratios": {}}, True
    for t in cps:
        idx = [run.at(t) for run in runs]
        vals = [run.total()[i] / hb for run, i, hb in zip(runs, idx, hbars)]
        ratio_table[repr(t)] = vals
        r, good = _within_factor(vals, 2.0)
        succ[repr(t)] = r
        ok = ok and good
        errs = [run.tanh[i][0] for run, i in zip(runs, idx)]
        obs["error"][repr(t)] = errs
        obs["bound"][repr(t)] = [run.tanh[i][1] for run, i in zip(runs, idx)]
        r = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
        obs["ratios"][repr(t)] = r
        obs_ok = obs_ok and all(np.sqrt(2) / 2 <= x <= 2 * np.sqrt(2) for x in r)
    ens, ens_verdict = ({}, "SKIPPED")
    if cfg.ensemble is not None:
        ens, ens_verdict = _ensemble_table(cfg, hbars, eruns, cps)
    return RateStudyResult(
        hbars, cps, runs, ratio_table, succ, fit_growth(hbars, runs), obs, ens,
        "PASS" if ok else "FAIL", "PASS" if obs_ok else "FAIL", ens_verdict, eruns,
    )


# -- diagnostics -------------------------------------------------------------------


def run_diagnostics(cfg, seed=0):
    """Invariant suite; returns rows ``(name, passed, value, threshold)``."""
    rng = np.random.default_rng(seed)
    rows = []

    def add(name, value, thr):
        rows.append((name, bool(value <= thr), float(value), float(thr)))

    ks = rng.normal(size=(1000, 3))
    comp, gauge = 0.0, 0.0
    for k in ks:
        e = polarization_basis(k)
        kh = k / np.linalg.norm(k)
        comp = max(comp, np.max(np.abs(np.outer(e[0], e[0]) + np.outer(e[1], e[1]) + np.outer(kh, kh) - np.eye(3))))
        gauge = max(gauge, np.max(np.abs(e @ k)))
    add("completeness", comp, 1e-12)
    add("gauge k.eps", gauge, 1e-12)

    adm = check_admissibility(cfg.cutoff)
    rows.append(("cutoff admissible", adm.passed, adm.norm_inv_k, float("inf")))
    if not adm.passed:
        return rows
    add("grad V(0)", float(np.max(np.abs(CoulombKernel(cfg.cutoff)(np.zeros(3))[1]))), 1e-12)

    model, u0 = classical_setup(cfg)
    x = rng.normal(size=3)
    Fm = eval_faraday(u0.alpha, x, cfg.cutoff)
    add("Faraday antisymmetry", float(np.max(np.abs(Fm + Fm.T))), 0.0)
    sc = SolverConfig(cfg.dt, min(cfg.t_end, 0.5), cfg.scheme, cfg.axis, cfg.N, cfg.cutoff.sigma, cfg.stride)
    traj = integrate(model, u0, sc)
    add("classical energy drift", traj.energy_drift(), 1e-6)
    add("Faraday contraction", float(np.max(np.abs(faraday_contraction(model, traj.states[-1])))), 1e-10)

    if cfg.modes is None or not cfg.hbars:
        return rows
    basis = FockBasis(cfg.modes.M, cfg.n_max)
    L = build_ladders(basis)
    low = np.all(basis.occupations < cfg.n_max, axis=1)
    ccr = 0.0
    for i in range(basis.M):
        for j in range(basis.M):
            c = (L.a[i] @ L.adag[j] - L.adag[j] @ L.a[i]).toarray() - (i == j) * np.eye(basis.size)
            ccr = max(ccr, np.max(np.abs(c[:, low])))
            cc = (L.a[i] @ L.a[j] - L.a[j] @ L.a[i]).toarray()
            ccr = max(ccr, np.max(np.abs(cc)))
    add("CCR below cap", ccr, 1e-14)

    hb = cfg.hbars[-1]
    small = assemble_hamiltonian(ParticleGrid(16, cfg.x_min, cfg.x_max, cfg.periodic), FockBasis(cfg.modes.M, 3),
                                 cfg.cutoff, hb, cfg.N, cfg.V_on, modes=cfg.modes, derivative=cfg.derivative)
    add("Hermiticity", small.hermiticity_error(), 1e-12)

    grid = ParticleGrid(cfg.G, cfg.x_min, cfg.x_max, cfg.periodic)
    H = assemble_hamiltonian(grid, basis, cfg.cutoff, hb, cfg.N, cfg.V_on, modes=cfg.modes,
                             coupling_on=cfg.coupling_on, derivative=cfg.derivative)
    st = initial_state(cfg.q0[:, 0], cfg.p0[:, 0], cfg.alpha_modes, hb, grid, basis, cfg.modes,
                       bound=cfg.leakage_bound)
    E0 = H.energy(st.psi)
    st = propagate(st, H, 0.2, krylov_dim=cfg.krylov_dim, tol=cfg.krylov_tol)
    add("quantum norm", abs(st.norm() - 1.0), 1e-10)
    add("quantum energy", abs(H.energy(st.psi) - E0) / abs(E0), 1e-8)
    al = cfg.alpha_modes
    bc, bcw = B.beta_c(st, basis, cfg.modes, al)
    add("beta_c two formulas", abs(bc - bcw), 1e-10 + st.leakage)
    gam = B.one_photon_rdm(st, basis)
    add("Tr gamma = hbar <N>", abs(np.trace(gam).real - hb * expectations(st, H, "number")), 1e-12)
    add("gamma PSD", max(0.0, -float(np.min(np.linalg.eigvalsh(gam)))), 1e-10)
    d = B.trace_distance(gam, np.sqrt(cfg.modes.weights) * al)
    add("RDM bound slack", d - B.rdm_bound(bc, cfg.modes.norm(al)), 1e-10)
    return rows
