"""Command line entry point ``abraham-qed``.

Exit codes: 0 pass, 1 admissibility or verdict failure, 2 configuration
error, 3 numerical failure (a diagnostic dump is written to the output
directory).
"""
from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from . import harness
from .classical import NumericalError
from .config import ConfigError, load_config
from .fock import DimensionError, LeakageError
from .kernels import InadmissibleCutoff, UnsupportedCutoff, check_admissibility
from .krylov import KrylovBreakdown

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _out_dir(args, cfg):
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)


def cmd_check_cutoff(cfg, out, args):
    rep = check_admissibility(cfg.cutoff)
    d = rep.as_dict()
    d["passed"] = rep.passed
    _dump_json(out / "admissibility.json", d)
    print(json.dumps(d, indent=2, sort_keys=True))
    return EXIT_PASS if rep.passed else EXIT_FAIL


def _require_admissible(cfg):
    rep = check_admissibility(cfg.cutoff)
    if not rep.passed:
        raise InadmissibleCutoff(f"cutoff is not admissible: {rep.as_dict()}")


def cmd_simulate_classical(cfg, out, args):
    _require_admissible(cfg)
    traj = harness.run_classical(cfg)
    traj.write_csv(out / "trajectory.csv", header_note=f"seed={args.seed}")
    summ = traj.summary()
    summ.update({"schema": harness.SCHEMA_VERSION, "units": harness.UNITS_NOTE, "seed": args.seed})
    _dump_json(out / "summary.json", summ)
    print(f"energy drift {summ['energy_drift']:.3e}  max Faraday contraction {summ['max_faraday_contraction']:.3e}")
    return EXIT_PASS


def cmd_simulate_quantum(cfg, out, args):
    _require_admissible(cfg)
    if cfg.modes is None or not cfg.hbars:
        raise ConfigError("simulate-quantum needs [modes] and [quantum] sections", None, cfg.path)
    summary = {"schema": harness.SCHEMA_VERSION, "units": harness.UNITS_NOTE, "seed": args.seed, "runs": {}}
    ok = True
    for hb in cfg.hbars:
        run = harness.paired_run(cfg, hb)
        harness.write_beta_csv(out / f"beta_hbar{hb!r}.csv", run)
        last = run.reports[-1]
        summary["runs"][repr(hb)] = {"final": last.as_dict(), "violations": run.violations}
        ok = ok and not run.violations
        print(f"hbar={hb}: beta total at t={last.t} is {last.total:.4e}, violations {len(run.violations)}")
    _dump_json(out / "summary.json", summary)
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_rate_study(cfg, out, args):
    _require_admissible(cfg)
    if cfg.modes is None or len(cfg.hbars) < 2:
        raise ConfigError("rate-study needs [modes] and at least two hbar values", None, cfg.path)
    res = harness.rate_study(cfg, workers=args.workers)
    res.write_json(out / "rate_study.json")
    res.write_csv(out / "rate_study.csv")
    print(f"{'t*':>6} " + " ".join(f"{'hbar=' + repr(h):>12}" for h in res.hbars))
    for t, vals in res.ratio_table.items():
        print(f"{t:>6} " + " ".join(f"{v:12.5f}" for v in vals))
    print(f"fit C={res.fit['C']:.4g} c={res.fit['c']:.4g} rms residual {res.fit['rms_residual']:.3g}")
    print(f"beta ratios: {res.verdict}  tanh observable: {res.observable_verdict}  ensemble: {res.ensemble_verdict}")
    return EXIT_PASS if res.verdict == "PASS" else EXIT_FAIL


def cmd_diagnostics(cfg, out, args):
    rows = harness.run_diagnostics(cfg, seed=args.seed)
    width = max(len(r[0]) for r in rows)
    for name, ok, val, thr in rows:
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {val:.3e}  (<= {thr:.1e})")
    _dump_json(out / "diagnostics.json", [dict(name=n, passed=o, value=v, threshold=t) for n, o, v, t in rows])
    return EXIT_PASS if all(r[1] for r in rows) else EXIT_FAIL


COMMANDS = {
    "check-cutoff": cmd_check_cutoff,
    "simulate-classical": cmd_simulate_classical,
    "simulate-quantum": cmd_simulate_quantum,
    "rate-study": cmd_rate_study,
    "diagnostics": cmd_diagnostics,
}


def _u64(s):
    v = int(s)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser():
    ap = argparse.ArgumentParser(prog="abraham-qed", description="Classical and quantum Abraham model runs.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="INI run configuration")
    ap.add_argument("--out", help="output directory (overrides [run] out)")
    ap.add_argument("--seed", type=_u64, default=None, help="seed for randomized checks")
    ap.add_argument("--workers", type=int, default=None, help="parallel sweep members")
    return ap


def _diagnostic_dump(out, exc):
    info = {"error": type(exc).__name__, "message": str(exc), "traceback": traceback.format_exc()}
    last = getattr(exc, "last_good", None)
    if last is not None:
        info["last_good"] = {"t": last.t, "q": np.asarray(last.q).tolist(), "p": np.asarray(last.p).tolist()}
    try:
        _dump_json(out / "failure.json", info)
    except OSError:
        pass


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is None:
        args.seed = cfg.seed
    out = _out_dir(args, cfg)
    try:
        return COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InadmissibleCutoff, UnsupportedCutoff) as exc:
        print(f"cutoff rejected: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (NumericalError, KrylovBreakdown, LeakageError, DimensionError, FloatingPointError) as exc:
        _diagnostic_dump(out, exc)
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
