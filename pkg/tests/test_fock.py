import numpy as np
import pytest
from scipy.linalg import expm
from scipy.stats import poisson

from abraham_qed.fock import (
    DimensionError,
    FockBasis,
    LeakageError,
    ModeSet,
    ParticleGrid,
    QuantumState,
    _lower,
    _raise,
    assemble_hamiltonian,
    build_ladders,
    coherent_leakage,
    expectations,
    field_phi,
    initial_state,
    propagate,
    weyl_displace,
    weyl_matrix,
)
from abraham_qed.kernels import Cutoff
from abraham_qed.krylov import expv

SHARP = Cutoff("sharp", 1.0, 0.5)
MODES = ModeSet([[0.48, 0, 0.64], [-0.5, 0, 0.5]], [1, 1], [10.0, 10.0])


def vacuum_state(G, basis, hbar=0.2):
    psi = np.zeros((G, basis.size), dtype=complex)
    psi[:, 0] = 1 / np.sqrt(G)
    return QuantumState(psi, hbar)


def test_basis_enumeration():
    b = FockBasis(3, 2)
    occ = b.occupations
    assert b.size == 27 == len(occ)
    assert len({tuple(o) for o in occ}) == 27
    assert all(b.index(o) == i for i, o in enumerate(occ))
    assert list(occ[1]) == [0, 0, 1]


def test_ladders_ccr_vacuum_and_number():
    b = FockBasis(2, 5)
    L = build_ladders(b, omegas=[0.7, 1.3])
    below = np.all(b.occupations < b.n_max, axis=1)
    for i in range(2):
        for j in range(2):
            c = (L.a[i] @ L.adag[j] - L.adag[j] @ L.a[i]).toarray()
            target = np.eye(b.size) if i == j else 0
            assert np.max(np.abs((c - target)[:, below])) < 1e-14
            assert np.max(np.abs((L.a[i] @ L.a[j] - L.a[j] @ L.a[i]).toarray())) == 0
        vac = np.zeros(b.size)
        vac[0] = 1
        assert np.all(L.a[i] @ vac == 0)
    assert np.array_equal(L.number.diagonal(), b.occupations.sum(axis=1))
    assert np.allclose(L.H_f.diagonal(), b.occupations @ [0.7, 1.3])
    N = sum(ad @ a for a, ad in zip(L.a, L.adag))
    assert np.allclose(N.toarray(), L.number.toarray())


def test_shaped_ladders_match_matrices():
    b = FockBasis(3, 3)
    L = build_ladders(b)
    psi = np.random.default_rng(0).normal(size=(5, b.size)) + 0j
    for i in range(3):
        assert np.allclose(_lower(psi, b, i), (L.a[i] @ psi.T).T)
        assert np.allclose(_raise(psi, b, i), (L.adag[i] @ psi.T).T)


def test_weyl_identity_and_unitarity():
    b = FockBasis(2, 4)
    st = vacuum_state(8, b)
    out = weyl_displace([0, 0], st, b)
    assert np.array_equal(out.psi, st.psi) and out.leakage == 0
    U = weyl_matrix(0.7 - 0.4j, 60)
    assert np.allclose(U.conj().T @ U, np.eye(60), atol=1e-12)


@pytest.mark.parametrize("mu", [0.3, 1.0, 2.0])
def test_weyl_photon_statistics_match_truncated_poisson(mu):
    b = FockBasis(2, 8)
    f = np.sqrt(mu / 2) * np.array([1.0, 1j])
    out = weyl_displace(f, vacuum_state(4, b), b, bound=1.0)
    p = np.sum(np.abs(out.psi) ** 2, axis=0)
    one = poisson.pmf(np.arange(9), mu / 2)
    oracle = np.outer(one, one).ravel()
    oracle /= oracle.sum()
    assert np.max(np.abs(p - oracle)) < 1e-14 + out.leakage
    assert abs(out.leakage - coherent_leakage(f, 8)) < 1e-11
    n_mean = p @ b.total_number()
    assert abs(n_mean - mu) <= 2 * (b.n_max + 1 + 2 * mu) * out.leakage + 1e-13


def test_leakage_monotone_and_bound():
    f = [1.1, 0.6j]
    leaks = [weyl_displace(f, vacuum_state(2, FockBasis(2, n)), FockBasis(2, n), bound=1.0).leakage for n in range(2, 14)]
    assert all(x >= y for x, y in zip(leaks, leaks[1:]))
    with pytest.raises(LeakageError):
        weyl_displace([2.0, 0], vacuum_state(2, FockBasis(2, 4)), FockBasis(2, 4))


def test_shifting_property():
    dim = 80
    f = 0.9 - 0.5j
    W = weyl_matrix(f, dim)
    a = np.diag(np.sqrt(np.arange(1, dim)), 1)
    S = W.conj().T @ a @ W - a - f * np.eye(dim)
    for n in range(4):
        e = np.zeros(dim)
        e[n] = 1
        assert np.linalg.norm(S @ e) < 1e-12


def test_hamiltonian_hermitian_and_matrix_free_consistent():
    for deriv, periodic in (("spectral", True), ("central", True), ("central", False)):
        H = assemble_hamiltonian(ParticleGrid(10, -2, 2, periodic), FockBasis(2, 3), SHARP, 0.3, modes=MODES,
                                 derivative=deriv)
        assert H.hermiticity_error() <= 1e-12
        v = np.random.default_rng(1).normal(size=H.dim) + 1j * np.random.default_rng(2).normal(size=H.dim)
        assert np.allclose(H.to_sparse() @ v, H.matvec(v), atol=1e-13)
    H2 = assemble_hamiltonian(ParticleGrid(8, -3, 3), FockBasis(2, 2), Cutoff("gaussian", 1.0, 0.5), 0.3, N=2,
                              modes=MODES)
    assert H2.hermiticity_error() <= 1e-12
    v = np.random.default_rng(3).normal(size=H2.dim) + 0j
    assert np.allclose(H2.to_sparse() @ v, H2.matvec(v), atol=1e-13)


def test_coupling_off_is_tensor_sum():
    grid, b = ParticleGrid(12, -2, 2), FockBasis(2, 3)
    H = assemble_hamiltonian(grid, b, SHARP, 0.3, modes=MODES, coupling_on=False)
    D = H.to_sparse().toarray()
    Dp = np.stack([H.apply_D(np.eye(12, dtype=complex)[:, c][:, None], 0)[:, 0] for c in range(12)], axis=1)
    L = build_ladders(b, MODES.kabs)
    ref = np.kron(Dp @ Dp, np.eye(b.size)) + 0.3 * np.kron(np.eye(12), L.H_f.toarray())
    assert np.allclose(D, ref, atol=1e-13)


def test_vacuum_field_fluctuations():
    grid, b = ParticleGrid(16, -3, 3), FockBasis(2, 3)
    H = assemble_hamiltonian(grid, b, SHARP, 0.2, modes=MODES)
    L = build_ladders(b)
    eps = MODES.pol[:, 0]
    F = SHARP.profile(MODES.kabs)
    oracle = np.sum(MODES.weights * (F * eps) ** 2 / (2 * MODES.kabs))
    for gi in (0, 5, 11):
        A = H.field_operator("A", gi).toarray()
        assert np.isclose((A @ A)[0, 0].real, oracle, rtol=1e-13)
        assert A[0, 0] == 0
        E = H.field_operator("E", gi).toarray()
        Hf = np.diag(b.occupations @ MODES.kabs)
        assert np.allclose(E, -1j * (Hf @ A - A @ Hf), atol=1e-14)
    assert np.all(H.faraday_11() == 0)


def test_dimension_cap():
    with pytest.raises(DimensionError):
        assemble_hamiltonian(ParticleGrid(1024, -5, 5), FockBasis(2, 8), SHARP, 0.1, N=2, modes=MODES)


def test_initial_state_moments():
    grid, b = ParticleGrid(128, -4.5, 5.5), FockBasis(2, 8)
    for hb in (0.4, 0.05):
        H = assemble_hamiltonian(grid, b, SHARP, hb, modes=MODES)
        st = initial_state([0.5], [0.4], [0.05, 0.05j], hb, grid, b, MODES)
        assert abs(st.norm() - 1) < 1e-14
        assert abs(expectations(st, H, "position")[0] - 0.5) < 1e-8
        assert abs(expectations(st, H, "momentum")[0] - 0.4) < 1e-8
        rho = np.sum(np.abs(st.psi) ** 2, axis=1)
        assert abs(np.sum((grid.x - 0.5) ** 2 * rho) - hb / 2) < 1e-8
        r = H.apply_D(st.psi, 0) - 0.4 * st.psi
        assert abs(np.vdot(r, r).real - hb / 2) < 1e-8
        d = MODES.displacement([0.05, 0.05j], hb)
        assert np.isclose(expectations(st, H, "number"), np.sum(np.abs(d) ** 2), atol=1e-6)
        g = np.array([0.3 + 0.1j, -0.2j])
        val = np.sqrt(hb) * expectations(st, H, "field", g=g)
        assert np.isclose(val, 2 * np.real(np.sum(MODES.weights * np.conj(g) * [0.05, 0.05j])), atol=1e-6)


def test_initial_state_rejects_bad_grids():
    b = FockBasis(1, 4)
    m = ModeSet([[0, 0, 1.0]], [0], [1.0])
    with pytest.raises(ValueError):
        initial_state([4.0], [0.0], [0], 0.4, ParticleGrid(64, -5, 5), b, m)
    with pytest.raises(ValueError):
        initial_state([0.0], [3.0], [0], 0.1, ParticleGrid(16, -5, 5), b, m)


def test_vacuum_field_expectation_zero():
    grid, b = ParticleGrid(16, -3, 3), FockBasis(2, 3)
    H = assemble_hamiltonian(grid, b, SHARP, 0.2, modes=MODES)
    st = vacuum_state(16, b)
    for j in range(1):
        assert np.allclose(np.vdot(st.psi, H.apply_A(st.psi, j)), 0)
    assert expectations(st, H, "field", g=[1.0, 1.0j]) == 0


def test_krylov_matches_dense_exponential():
    rng = np.random.default_rng(5)
    A = rng.normal(size=(60, 60)) + 1j * rng.normal(size=(60, 60))
    Hm = (A + A.conj().T) / 2
    v = rng.normal(size=60) + 0j
    for tau in (0.1, 2.0, -1.5):
        w, n = expv(lambda x: Hm @ x, v, tau, m=12, tol=1e-12)
        assert np.allclose(w, expm(-1j * tau * Hm) @ v, atol=1e-9)
    # invariant subspace: exact in one substep
    Dg = np.diag(np.arange(5.0))
    w, n = expv(lambda x: Dg @ x, np.eye(5)[0] + np.eye(5)[2], 3.0)
    assert n == 1 and np.allclose(w, np.exp(-3j * np.diag(Dg)) * (np.eye(5)[0] + np.eye(5)[2]))


def test_propagate_against_dense_and_reversibility():
    grid, b = ParticleGrid(24, -4, 4), FockBasis(2, 2)
    H = assemble_hamiltonian(grid, b, SHARP, 0.3, modes=MODES)
    st = initial_state([0.0], [0.2], [0.03, 0.0], 0.3, grid, b, MODES, bound=1e-3)
    out = propagate(st, H, 0.7, 0.1)
    ref = expm(-1j * 0.7 / 0.3 * H.to_sparse().toarray()) @ st.psi.ravel()
    assert np.allclose(out.psi.ravel(), ref, atol=1e-9)
    back = propagate(out, H, -0.7, 0.1)
    assert np.allclose(back.psi, st.psi, atol=1e-9)


def test_unitarity_over_many_steps():
    m = ModeSet([[0.48, 0, 0.64]], [1], [10.0])
    grid, b = ParticleGrid(24, -4, 4), FockBasis(1, 3)
    H = assemble_hamiltonian(grid, b, SHARP, 0.3, modes=m)
    st = initial_state([0.0], [0.3], [0.05], 0.3, grid, b, m)
    E0 = H.energy(st.psi)
    for _ in range(10_000):
        st = propagate(st, H, 1e-3)
    assert abs(st.norm() - 1) <= 1e-10
    assert abs(H.energy(st.psi) - E0) <= 1e-8 * abs(E0)


def test_snapshot_round_trip(tmp_path):
    b = FockBasis(2, 2)
    st = vacuum_state(8, b)
    st.save(tmp_path / "snap", {"basis": {"M": 2, "n_max": 2}})
    back = QuantumState.load(tmp_path / "snap")
    assert np.array_equal(back.psi, st.psi) and back.hbar == st.hbar
    assert (tmp_path / "snap.json").exists() and (tmp_path / "snap.npy").exists()


def test_field_phi_is_hermitian():
    b = FockBasis(2, 3)
    eye = np.eye(b.size, dtype=complex)
    Phi = field_phi(eye, b, MODES, [0.2 - 0.1j, 0.4]).T
    assert np.allclose(Phi, Phi.conj().T)
