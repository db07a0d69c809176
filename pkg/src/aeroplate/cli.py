"""
Command line entry point.

    aeroplate run <config>            run the experiment named by ``kind``
    aeroplate stationary <config>     equilibrium search for a config
    aeroplate suite invariants        quick invariant checks
    aeroplate possio --check          finite Hilbert transform checks

Exit codes: 0 success, 1 configuration error, 2 numerical failure.  A
``manifest.json`` is written in the output directory on every exit path.
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import logging
import os
import sys
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__, analysis, dynamics, grid, suite
from .config import ExperimentConfig, parse_config, validate
from .errors import AeroplateError, ConfigError

log = logging.getLogger("aeroplate")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


@dataclass
class RunManifest:
    config_hash: str
    version: str
    wall_time: float = 0.0
    outputs: list = field(default_factory=list)
    status: str = "running"
    exit_code: int = EXIT_OK
    error: str | None = None
    summary: dict = field(default_factory=dict)
    config: dict | None = None

    def write(self, out_dir) -> str:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "manifest.json")
        with open(path, "w") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2, sort_keys=True, default=float)
        return path


def _json(out_dir, name, obj, man: RunManifest):
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=float)
    man.outputs.append(name)


# ---------------------------------------------------------------------------
# experiment kinds
# ---------------------------------------------------------------------------

def _simulate(cfg: ExperimentConfig, out_dir, man: RunManifest, params=None, initial=None, tag=""):
    p = params or cfg.params()
    st = initial or cfg.initial_state()
    eta = cfg.prehistory(st, p.delay.t_star)
    o = cfg["outputs"]
    snap_dir = os.path.join(out_dir, f"snapshots{tag}") if o["snapshot_every"] else None
    traj, led = dynamics.run(st, eta, p, keep_every=o["keep_every"],
                             snapshot_every=o["snapshot_every"] or None, snapshot_dir=snap_dir)
    name = o["ledger"] if not tag else o["ledger"].replace(".csv", f"{tag}.csv")
    led.to_csv(os.path.join(out_dir, name))
    man.outputs.append(name)
    for label, f in (("u", traj.final.u), ("v", traj.final.v)):
        fname = f"final_{label}{tag}.txt"
        grid.write_field(os.path.join(out_dir, fname), f)
        man.outputs.append(fname)
    if snap_dir:
        man.outputs.extend(os.path.join(f"snapshots{tag}", n) for n in sorted(os.listdir(snap_dir)))
    return traj, led


def _equilibria(cfg: ExperimentConfig, out_dir, man: RunManifest, params=None):
    s = cfg["stationary"]
    sp = analysis.StationaryProblem(params or cfg.params(), s["newton_tol"], s["max_iter"],
                                    s["continuation_steps"])
    eqs = analysis.find_equilibria(sp, s["restarts"], seed=cfg["outputs"]["seed"],
                                   amplitude=s["restart_amplitude"])
    if len(eqs) == 0:
        raise analysis.EmptySet("no Newton start converged")
    eqs.save(os.path.join(out_dir, "equilibria"))
    man.outputs.append("equilibria/manifest.json")
    man.outputs.extend(f"equilibria/eq_{i:03d}.txt" for i in range(len(eqs)))
    man.summary["n_equilibria"] = len(eqs)
    man.summary["residuals"] = eqs.residuals
    return eqs


def run_simulate(cfg, out_dir, man):
    _, led = _simulate(cfg, out_dir, man)
    man.summary["final_fullE"] = led.rows[-1][3]
    man.summary["steps"] = len(led) - 1


def run_stationary(cfg, out_dir, man):
    _equilibria(cfg, out_dir, man)


def run_equilibrium_convergence(cfg, out_dir, man):
    p = cfg.params()
    eqs = _equilibria(cfg, out_dir, man, p)
    traj, led = _simulate(cfg, out_dir, man, params=p)
    d = p.domain
    v0 = np.sqrt(np.sum(traj.v[0] ** 2) * d.cell_area)
    vT = np.sqrt(np.sum(traj.v[-1] ** 2) * d.cell_area)
    diss = led.column("diss")
    tail = diss[-1] - diss[int(0.9 * (len(diss) - 1))]
    man.summary.update({
        "velocity_ratio": vT / v0 if v0 > 0 else float("nan"),
        "distance_to_equilibria": analysis.distance_to_equilibria(traj.final, eqs),
        "dissipation_tail_fraction": tail / diss[-1] if diss[-1] > 0 else 0.0,
    })


def run_dissipativity(cfg, out_dir, man):
    p = cfg.params()
    base = cfg.initial_state()
    r = np.sqrt(cfg["experiment"]["energy_ratio"])
    hi = dynamics.PlateState(0.0, base.u * r, base.v * r)
    eta_hi = cfg.prehistory(hi, p.delay.t_star)
    lp = dynamics.choose_lyapunov_params(hi, dynamics.make_history(p.domain, eta_hi, p), p)
    reports = {}
    for tag, st in (("_low", base), ("_high", hi)):
        eta = cfg.prehistory(st, p.delay.t_star)
        traj, led = dynamics.run(st, eta, p, lyapunov=lp, keep_every=cfg["outputs"]["keep_every"])
        name = cfg["outputs"]["ledger"].replace(".csv", f"{tag}.csv")
        led.to_csv(os.path.join(out_dir, name))
        man.outputs.append(name)
        reports[tag[1:]] = dataclasses.asdict(dynamics.dissipativity_report(led, lp))
    lo, hi_ = reports["low"]["terminal_level"], reports["high"]["terminal_level"]
    reports["terminal_relative_gap"] = abs(lo - hi_) / max(abs(lo), abs(hi_), 1e-300)
    reports["nu"], reports["mu"] = lp.nu, lp.mu
    _json(out_dir, "dissipativity.json", reports, man)
    man.summary["terminal_relative_gap"] = reports["terminal_relative_gap"]


def run_possio_check(cfg, out_dir, man):
    from .possio import write_possio_csv
    checks, sample = suite.possio_check(cfg["experiment"]["possio_n"])
    write_possio_csv(os.path.join(out_dir, "possio.csv"), sample)
    man.outputs.append("possio.csv")
    _report(checks, out_dir, man, "possio_report.json")


def run_invariant_suite(cfg, out_dir, man):
    _report(suite.invariant_suite(cfg["outputs"]["seed"]), out_dir, man, "invariants.json")


def _report(checks, out_dir, man, name):
    _json(out_dir, name, [c.as_dict() for c in checks], man)
    man.summary["passed"] = sum(c.passed for c in checks)
    man.summary["failed"] = [c.name for c in checks if not c.passed]
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  value={c.value:.3e}  threshold={c.threshold:.1e}")
    if man.summary["failed"]:
        raise _ChecksFailed(", ".join(man.summary["failed"]))


class _ChecksFailed(AeroplateError):
    pass


RUNNERS = {
    "simulate": run_simulate,
    "stationary": run_stationary,
    "equilibrium-convergence": run_equilibrium_convergence,
    "dissipativity": run_dissipativity,
    "possio-check": run_possio_check,
    "invariant-suite": run_invariant_suite,
}


def run_experiment(cfg: ExperimentConfig, out_dir: str = "out") -> RunManifest:
    """Run one configured experiment; the manifest is written whatever happens."""
    man = RunManifest(cfg.hash(), __version__, config=cfg.data)
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    try:
        RUNNERS[cfg.kind](cfg, out_dir, man)
        man.status = "ok"
    except ConfigError as exc:
        man.status, man.exit_code, man.error = "config-error", EXIT_CONFIG, str(exc)
    except (AeroplateError, FloatingPointError, np.linalg.LinAlgError) as exc:
        man.status, man.exit_code = "numerical-failure", EXIT_NUMERICAL
        man.error = f"{type(exc).__name__}: {exc}"
        log.debug("%s", traceback.format_exc())
    finally:
        man.wall_time = time.perf_counter() - t0
        man.write(out_dir)
    return man


def _sweep_configs(cfg: ExperimentConfig):
    sweep = cfg["sweep"]
    if not sweep:
        return [("", cfg)]
    keys = sorted(sweep)
    out = []
    for i, combo in enumerate(itertools.product(*(sweep[k] for k in keys))):
        out.append((f"run_{i:03d}", cfg.with_overrides(dict(zip(keys, combo)))))
    return out


def run_with_sweep(cfg: ExperimentConfig, out_dir: str, jobs: int = 1) -> int:
    """Run ``cfg`` (or each point of its sweep, ``jobs`` at a time); returns the worst exit code."""
    runs = _sweep_configs(cfg)
    if len(runs) == 1:
        return run_experiment(runs[0][1], out_dir).exit_code
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        mans = list(pool.map(lambda r: run_experiment(r[1], os.path.join(out_dir, r[0])), runs))
    index = [{"dir": name, "config_hash": m.config_hash, "status": m.status}
             for (name, _), m in zip(runs, mans)]
    with open(os.path.join(out_dir, "sweep.json"), "w") as fh:
        json.dump(index, fh, indent=2)
    return max(m.exit_code for m in mans)


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

def _load(path, seed, kind=None) -> ExperimentConfig:
    cfg = parse_config(path)
    data = dict(cfg.data)
    if seed is not None:
        data["outputs"] = dict(data["outputs"], seed=seed)
    if kind is not None:
        data["kind"] = kind
    return validate(data)


def _config_failure(out_dir, exc: ConfigError) -> int:
    man = RunManifest("", __version__, status="config-error", exit_code=EXIT_CONFIG, error=str(exc))
    man.write(out_dir)
    print(f"configuration error: {exc}", file=sys.stderr)
    return EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aeroplate", description="Delayed von Karman plate laboratory")
    ap.add_argument("--out-dir", default="out", help="output directory (default: out)")
    ap.add_argument("--jobs", type=int, default=1, help="parallel runs for parameter sweeps")
    ap.add_argument("--seed", type=int, default=None, help="override outputs.seed")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment named in a config (or replay a manifest)")
    r.add_argument("config")
    s = sub.add_parser("stationary", help="compute equilibria for a config")
    s.add_argument("config")
    q = sub.add_parser("suite", help="run a check suite")
    q.add_argument("which", choices=["invariants"])
    p = sub.add_parser("possio", help="finite Hilbert transform checks and CSV export")
    p.add_argument("--check", action="store_true", help="run the analytic and roundtrip checks")
    p.add_argument("-n", type=int, default=256, help="number of Chebyshev nodes")
    return ap


def main(argv=None) -> int:
    # flags are accepted before or after the subcommand
    argv = list(sys.argv[1:] if argv is None else argv)
    glob, rest = [], []
    it = iter(argv)
    for a in it:
        if a in ("--out-dir", "--jobs", "--seed"):
            glob += [a, next(it, "")]
        elif a.startswith(("--out-dir=", "--jobs=", "--seed=")) or a in ("-v", "--verbose"):
            glob.append(a)
        else:
            rest.append(a)
    args = build_parser().parse_args(glob + rest)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = args.out_dir
    try:
        if args.command == "run":
            cfg = _load(args.config, args.seed)
        elif args.command == "stationary":
            cfg = _load(args.config, args.seed, kind="stationary")
        elif args.command == "suite":
            cfg = validate({"kind": "invariant-suite", "outputs": {"seed": args.seed or 0}})
        else:
            if not args.check:
                cfg = validate({"kind": "possio-check", "experiment": {"possio_n": args.n}})
                from .possio import write_possio_csv
                _, sample = suite.possio_check(args.n)
                os.makedirs(out, exist_ok=True)
                write_possio_csv(os.path.join(out, "possio.csv"), sample)
                man = RunManifest(cfg.hash(), __version__, outputs=["possio.csv"], status="ok", config=cfg.data)
                man.write(out)
                return EXIT_OK
            cfg = validate({"kind": "possio-check", "experiment": {"possio_n": args.n}})
    except ConfigError as exc:
        return _config_failure(out, exc)
    except OSError as exc:
        return _config_failure(out, ConfigError([str(exc)]))
    code = run_with_sweep(cfg, out, args.jobs)
    if code == EXIT_NUMERICAL:
        path = os.path.join(out, "manifest.json")
        err = None
        if os.path.exists(path):
            with open(path) as fh:
                err = json.load(fh).get("error")
        print(f"numerical failure: {err}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
