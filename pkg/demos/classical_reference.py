"""Classical reference run: energy drift, Faraday contraction and norm envelopes.

Run from the repository root:  python demos/classical_reference.py
"""
from pathlib import Path

import numpy as np

from abraham_qed.config import load_config
from abraham_qed.harness import run_classical

cfg = load_config(Path(__file__).resolve().parent.parent / "configs" / "reference_classical.ini")
cfg.t_end = 2.0

finals = {}
for dt in (2e-3, 1e-3):
    cfg.dt, cfg.stride = dt, int(round(0.05 / dt))
    traj = run_classical(cfg)
    finals[dt] = traj.states[-1]
    print(f"dt={dt:g}: energy drift {traj.energy_drift():.2e}, "
          f"max |p~ p~ F| {np.max(np.abs(traj.faraday)):.1e}, "
          f"norm_X envelope C {traj.monitors['norm_X']['C']:.4f}")

print("t     q_x        p_x        ||u||_X")
for t in (0.0, 0.5, 1.0, 1.5, 2.0):
    i = int(np.argmin(np.abs(traj.times - t)))
    u = traj.states[i]
    print(f"{t:.1f}  {u.q[0, 0]: .6f}  {u.p[0, 0]: .6f}  {traj.norm_X[i]:.6f}")

dq = np.abs(finals[2e-3].q - finals[1e-3].q).max()
print(f"position change under dt halving: {dq:.2e} (second order scheme)")
