import numpy as np
import pytest

from abraham_qed.beta import (
    BETA_COLUMNS,
    BetaReport,
    EnsembleSpec,
    LipschitzFunction,
    beta_a,
    beta_b,
    beta_b_tilde,
    beta_c,
    ensemble_rdm,
    observable_error,
    one_photon_rdm,
    rdm_bound,
    tanh_function,
    trace_distance,
)
from abraham_qed.fock import (
    FockBasis,
    ModeSet,
    ParticleGrid,
    QuantumState,
    assemble_hamiltonian,
    initial_state,
    propagate,
)
from abraham_qed.kernels import Cutoff

SHARP = Cutoff("sharp", 1.0, 0.5)
MODES = ModeSet([[0.48, 0, 0.64], [-0.5, 0, 0.5]], [1, 1], [10.0, 10.0])
GRID = ParticleGrid(96, -4.5, 5.5)
BASIS = FockBasis(2, 8)
ALPHA = np.array([0.05, 0.05j])


def setup(hbar=0.2, alpha=ALPHA, coupling_on=True):
    H = assemble_hamiltonian(GRID, BASIS, SHARP, hbar, modes=MODES, coupling_on=coupling_on)
    st = initial_state([0.5], [0.4], alpha, hbar, GRID, BASIS, MODES)
    return H, st


def random_state(hbar, seed):
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=(GRID.G, BASIS.size)) + 1j * rng.normal(size=(GRID.G, BASIS.size))
    psi *= np.exp(-np.arange(BASIS.size) / 4.0)[None, :]
    return QuantumState(psi / np.linalg.norm(psi), hbar)


def test_beta_a_gaussian_and_parallel_axis():
    for hb in (0.4, 0.1):
        H, st = setup(hb)
        assert abs(beta_a(st, GRID, 0.5) - hb / 2) < 1e-12
        assert abs(beta_a(st, GRID, 0.8) - (hb / 2 + 0.09)) < 1e-10


def test_beta_b_reduces_to_tilde_without_coupling():
    H, st = setup(coupling_on=False)
    st = propagate(st, H, 0.3)
    assert abs(beta_b(st, H, 0.5, 0.4, ALPHA) - beta_b_tilde(st, H, 0.4)) < 1e-14
    assert abs(beta_b_tilde(setup()[1], H, 0.4) - 0.1) < 1e-10


def test_beta_b_vacuum_oracle():
    hb = 0.2
    H, st = setup(hb, alpha=[0, 0])
    F = SHARP.profile(MODES.kabs)
    vac = np.sum(MODES.weights * (F * MODES.pol[:, 0]) ** 2 / (2 * MODES.kabs))
    assert np.isclose(beta_b(st, H, 0.5, 0.4, [0, 0]), hb / 2 + hb * vac, rtol=1e-10)


def test_beta_b_rejects_mismatched_hbar():
    H, _ = setup(0.2)
    _, st = setup(0.4)
    with pytest.raises(ValueError):
        beta_b(st, H, 0.5, 0.4, ALPHA)


def test_beta_c_formulas_and_oracles():
    hb = 0.2
    _, vac = setup(hb, alpha=[0, 0])
    lad, wey = beta_c(vac, BASIS, MODES, [0, 0])
    assert lad == 0 and abs(wey) < 1e-15
    lad, wey = beta_c(vac, BASIS, MODES, ALPHA)
    oracle = np.sum(MODES.weights * np.abs(ALPHA) ** 2)
    assert np.isclose(lad, oracle, rtol=1e-12) and np.isclose(wey, oracle, rtol=1e-10)
    _, coh = setup(hb)
    lad, wey = beta_c(coh, BASIS, MODES, ALPHA)
    assert lad < 1e-12 and abs(lad - wey) < 1e-14
    other = np.array([0.02, -0.01])
    lad, wey = beta_c(coh, BASIS, MODES, other)
    assert np.isclose(lad, np.sum(MODES.weights * np.abs(ALPHA - other) ** 2), rtol=1e-8)
    assert abs(lad - wey) < 1e-12
    for seed in range(3):
        st = random_state(hb, seed)
        lad, wey = beta_c(st, BASIS, MODES, ALPHA)
        assert abs(lad - wey) <= 1e-12 * max(lad, 1)


def test_rdm_properties_and_bound():
    hb = 0.2
    _, coh = setup(hb)
    aw = np.sqrt(MODES.weights) * ALPHA
    gam = one_photon_rdm(coh, BASIS)
    assert trace_distance(gam, aw) < 1e-8
    for seed in range(4):
        st = random_state(hb, seed)
        gam = one_photon_rdm(st, BASIS)
        N = np.sum(np.abs(st.psi) ** 2 * BASIS.total_number()[None, :])
        assert np.isclose(np.trace(gam).real, hb * N, rtol=1e-12)
        assert np.min(np.linalg.eigvalsh(gam)) > -1e-14
        bc = beta_c(st, BASIS, MODES, ALPHA)[0]
        assert trace_distance(gam, aw) <= rdm_bound(bc, np.linalg.norm(aw))


def test_observable_errors_respect_lipschitz_bounds():
    H, st = setup(0.2)
    st = propagate(st, H, 0.2)
    f = tanh_function()
    affine = LipschitzFunction(lambda y: 2 * y + 1, 2.0, affine=(2.0, 1.0))
    g = np.array([0.3 + 0.1j, -0.2j])
    for which in ("position", "momentum", "field"):
        for fn in (f, affine):
            err, bound = observable_error(st, H, 0.7, 0.4, ALPHA, which, fn, g=g)
            assert err <= bound + 1e-12
    with pytest.raises(TypeError):
        observable_error(st, H, 0.5, 0.4, ALPHA, "position", np.tanh)
    with pytest.raises(ValueError):
        LipschitzFunction(np.tanh, np.inf)


def test_field_observable_affine_matches_spectral():
    H, st = setup(0.2)
    g = np.array([0.3 + 0.1j, -0.2j])
    a = observable_error(st, H, 0.5, 0.4, ALPHA, "field", LipschitzFunction(lambda y: 2 * y + 1, 2.0, (2.0, 1.0)), g=g)
    b = observable_error(st, H, 0.5, 0.4, ALPHA, "field", LipschitzFunction(lambda y: 2 * y + 1, 2.0), g=g)
    assert np.allclose(a, b, atol=1e-12)


def test_ensemble_rdm_convexity_and_validation():
    hb = 0.2
    alphas = [ALPHA, np.array([0.04, -0.03j])]
    gammas, aws = [], []
    for s, al in enumerate(alphas):
        gammas.append(one_photon_rdm(random_state(hb, 10 + s), BASIS))
        aws.append(np.sqrt(MODES.weights) * al)
    spec = EnsembleSpec([0.3, 0.7], [(0.5, 0.4, alphas[0]), (0.3, 0.3, alphas[1])])
    Gam, target, dist = ensemble_rdm(spec, gammas, aws)
    assert np.allclose(Gam, 0.3 * gammas[0] + 0.7 * gammas[1])
    assert dist <= sum(mu * trace_distance(gm, a) for mu, gm, a in zip(spec.weights, gammas, aws)) + 1e-14
    with pytest.raises(ValueError):
        EnsembleSpec([0.5, 0.6], [0, 1])
    with pytest.raises(ValueError):
        EnsembleSpec([1.0], [])
    with pytest.raises(ValueError):
        ensemble_rdm(spec, gammas[:1], aws)


def test_report_layout():
    r = BetaReport(*range(len(BETA_COLUMNS)))
    assert r.row() == list(range(len(BETA_COLUMNS)))
    assert r.total == r.beta_a + r.beta_b + r.beta_c
    assert list(r.as_dict()) == BETA_COLUMNS


def test_truncation_refinement_changes_beta_c_little():
    vals = []
    for n in (6, 8):
        b = FockBasis(2, n)
        H = assemble_hamiltonian(GRID, b, SHARP, 0.2, modes=MODES)
        st = initial_state([0.5], [0.4], ALPHA, 0.2, GRID, b, MODES)
        st = propagate(st, H, 0.5, 0.05)
        vals.append(beta_c(st, b, MODES, ALPHA)[0])
    assert abs(vals[0] - vals[1]) < 1e-3 * vals[1]
