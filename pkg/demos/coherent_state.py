"""Coherent states in a truncated Fock space.

Shows photon statistics against the Poisson law, how truncation leakage
falls with the occupation cap, and that free evolution keeps a coherent
state coherent with a rotating amplitude.
"""
import numpy as np
from scipy.stats import poisson

from abraham_qed.beta import beta_c, one_photon_rdm, trace_distance
from abraham_qed.fock import (
    FockBasis,
    ModeSet,
    ParticleGrid,
    QuantumState,
    assemble_hamiltonian,
    coherent_leakage,
    initial_state,
    propagate,
    weyl_displace,
)
from abraham_qed.kernels import Cutoff

f = np.array([1.0, 0.5j])
basis = FockBasis(2, 8)
vac = np.zeros((1, basis.size), dtype=complex)
vac[0, 0] = 1.0
out = weyl_displace(f, QuantumState(vac, 1.0), basis, bound=1.0)
p = np.abs(out.psi[0].reshape(9, 9)) ** 2
print("n   P(n1=n) numeric   Poisson")
for n in range(6):
    print(f"{n}   {p[n].sum():.10f}     {poisson.pmf(n, abs(f[0]) ** 2):.10f}")
print(f"leakage at n_max=8: {out.leakage:.3e}")

print("n_max  leakage for ||f||^2 = 2 (even split)")
for n in (6, 8, 10, 12):
    print(f"{n:5d}  {coherent_leakage([1.0, 1.0j], n):.3e}")

hbar = 0.2
modes = ModeSet([[0.48, 0, 0.64], [-0.5, 0, 0.5]], [1, 1], [10.0, 10.0])
grid = ParticleGrid(64, -4.5, 5.5)
H = assemble_hamiltonian(grid, basis, Cutoff("sharp", 1.0, 0.5), hbar, modes=modes, coupling_on=False)
alpha = np.array([0.05, 0.05j])
st = initial_state([0.5], [0.4], alpha, hbar, grid, basis, modes)
print("t    beta_c(rotating alpha)   RDM distance")
for t in (0.0, 1.0, 2.0):
    s = propagate(st, H, t) if t else st
    a_t = np.exp(-1j * t * modes.kabs) * alpha
    d = trace_distance(one_photon_rdm(s, basis), np.sqrt(modes.weights) * a_t)
    print(f"{t:.1f}  {beta_c(s, basis, modes, a_t)[0]:.3e}                {d:.3e}")
