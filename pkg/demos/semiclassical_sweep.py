"""Semiclassical comparison: beta(t)/hbar across an hbar sweep.

A reduced version of the desk rate study (no ensemble, two hbar values,
shorter run) that finishes in a few seconds.
"""
from pathlib import Path

from abraham_qed.config import load_config
from abraham_qed.harness import paired_run

cfg = load_config(Path(__file__).resolve().parent.parent / "configs" / "desk.ini")
cfg.t_end = 0.5
cfg.checkpoints = [0.5]

for hb in (0.2, 0.1):
    run = paired_run(cfg, hb)
    print(f"hbar={hb}")
    print("   t     beta_a    beta_b    beta_c    total/hbar  rdm dist  rdm bound  tanh err")
    for r, (err, _) in zip(run.reports[::2], run.tanh[::2]):
        print(f"  {r.t:.2f}  {r.beta_a:.3e} {r.beta_b:.3e} {r.beta_c:.3e}  {r.total / hb:8.4f}  "
              f"{r.rdm_distance:.2e}  {r.rdm_bound:.2e}   {err:.2e}")
