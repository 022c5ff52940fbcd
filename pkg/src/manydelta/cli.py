"""Command-line experiment runner.

Every subcommand resolves a config (defaults, then ``--config``, then flag
overrides), runs, writes a JSON report plus optional CSV/JSONL artifacts,
and exits 0 when all tolerances pass, 1 when a tolerance fails, 2 on an
invalid config and 3 on a numerical failure.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import localtime, mc, measures, ntc, sde, specfun
from .model import ConfigError, Edge, SingularStateError, parse_model_json, separations
from .sde import NumericalBlowupError, SimConfig, write_paths_jsonl

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULT_MODEL = {
    "n": 3,
    "beta": {"2-1": 1.0, "3-1": 1.0, "3-2": 1.0},
    "w": {"2-1": 1.0, "3-1": 1.0, "3-2": 1.0},
    "z0": [[0.0, 0.0], [0.7, 0.0], [0.35, 0.6]],
}

# Task blocks per subcommand; keys not listed here are rejected.
TASKS = {
    "specfun-table": {"xmin": 1e-6, "xmax": 50.0, "points": 200},
    "simulate": {"kind": "many_delta", "edge": "2-1", "stride": 0},
    "check-ito": {"edge": "2-1", "horizon": 0.1, "eps_reg": 0.05, "eps": 1e-4,
                  "tolerance": 0.05, "max_ratio": 0.8},
    "check-rn": {"edge": "2-1", "horizon": 0.1, "eps_reg": 0.05, "eps": 1e-4,
                 "tolerance": 0.05, "max_ratio": 0.8},
    "check-identities": {"stop_radius": 0.1, "t_cap": 0.25, "tolerance": mc.DEFAULT_Z},
    "estimate-mass": {"tolerance": mc.DEFAULT_Z},
    "check-martingale": {"edge": "2-1", "t": 0.25, "stop_radius": 0.05, "eps": 1e-6,
                         "tolerance": mc.DEFAULT_Z},
    "check-ntc": {"kind": "many_delta", "edge": "2-1", "thresholds": [1e-2, 1e-3, 1e-4],
                  "j_level": 2, "tolerance": 0.01},
    "check-comparison": {"kind": "brownian", "edge": "2-1", "pairs": ["2-1", "3-1"],
                         "alpha": 0.0, "k": 10, "m": 100, "clock": "sampled",
                         "tolerance": 0.01},
    "check-limits": {"beta": 1.0, "eps_ladder": [1e-2, 1e-4, 1e-6], "upper": 1.0,
                     "tolerance": 0.03, "vanishing_target": 1e-2},
}

MC_DEFAULTS = {
    "simulate": {"paths": 10, "seed": 0},
    "check-ito": {"paths": 100, "seed": 11},
    "check-rn": {"paths": 100, "seed": 11},
    "check-identities": {"paths": 100000, "seed": 5},
    "estimate-mass": {"paths": 10000, "seed": 8},
    "check-martingale": {"paths": 10000, "seed": 9},
    "check-ntc": {"paths": 1000, "seed": 10},
    "check-comparison": {"paths": 100, "seed": 3},
}

SIM_DEFAULTS = {
    "check-ito": {"dt_max": 1e-4},
    "check-rn": {"dt_max": 1e-4},
    "check-identities": {"dt_min": 1e-7},
    "estimate-mass": {"dt_min": 1e-7, "contact_threshold": 1e-2, "radius_floor": 1e-4},
    "check-martingale": {"dt_min": 1e-6, "contact_threshold": 1e-2, "radius_floor": 1e-4},
    "check-ntc": {"dt_min": 1e-6, "contact_threshold": 1e-2, "radius_floor": 1e-4,
                  "dt_scale": 0.1},
}


def git_blob_hash(data: bytes) -> str:
    """Content hash in the same form git uses for blobs."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _canonical(doc) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


def _merge_block(base: dict, override: dict, name: str) -> dict:
    if not isinstance(override, dict):
        raise ConfigError(f"{name} must be an object")
    unknown = set(override) - set(base)
    if unknown:
        raise ConfigError(f"unknown {name} keys: {sorted(unknown)}")
    out = dict(base)
    out.update(override)
    return out


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then command-line overrides."""
    doc = {"model": copy.deepcopy(DEFAULT_MODEL),
           "sim": {**SimConfig().to_dict(), **SIM_DEFAULTS.get(command, {})},
           "mc": {"paths": 1000, "seed": 0, "workers": mc.default_workers(),
                  **MC_DEFAULTS.get(command, {})},
           "task": copy.deepcopy(TASKS[command])}
    if args.config:
        try:
            user = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(user) - set(doc)
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        if "model" in user:
            doc["model"] = user["model"]
        for key in ("sim", "mc", "task"):
            if key in user:
                doc[key] = _merge_block(doc[key], user[key], key)
    overrides = {"paths": ("mc", "paths"), "seed": ("mc", "seed"), "workers": ("mc", "workers"),
                 "dt": ("sim", "dt_max"), "delta_contact": ("sim", "contact_threshold"),
                 "eps": ("task", "eps"), "tolerance": ("task", "tolerance"),
                 "xmin": ("task", "xmin"), "xmax": ("task", "xmax"),
                 "points": ("task", "points")}
    for flag, (block, key) in overrides.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if key not in doc[block]:
            raise ConfigError(f"--{flag.replace('_', '-')} does not apply to {command}")
        doc[block][key] = value
    if args.dt is not None and doc["sim"]["dt_min"] > args.dt:
        doc["sim"]["dt_min"] = args.dt
    return doc


class Run:
    """Parsed objects built from a resolved config."""

    def __init__(self, doc: dict):
        self.doc = doc
        self.params, self.z0 = parse_model_json(doc["model"])
        self.sim = SimConfig.from_dict(doc["sim"])
        self.paths = int(doc["mc"]["paths"])
        self.seed = int(doc["mc"]["seed"])
        self.workers = int(doc["mc"]["workers"])
        if self.paths < 1 or self.workers < 1:
            raise ConfigError("paths and workers must be positive")
        self.task = doc["task"]
        if "edge" in self.task:
            self.edge()

    def edge(self, key: str = "edge") -> Edge:
        try:
            return Edge.parse(self.task[key])
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"task {key} must look like '2-1'") from exc


def _estimate_report(result: mc.EstimatorResult, tolerance: float, passed: bool) -> dict:
    return {"estimate": result.mean, "stderr": result.stderr, "n": result.n,
            "tolerance": tolerance, "pass": bool(passed)}


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def cmd_specfun_table(run: Run) -> tuple[dict, dict]:
    t = run.task
    if not (0.0 < t["xmin"] < t["xmax"]) or int(t["points"]) < 2:
        raise ConfigError("need 0 < xmin < xmax and points >= 2")
    xs = np.geomspace(t["xmin"], t["xmax"], int(t["points"]))
    k0, k1 = specfun.k0(xs), specfun.k1(xs)
    kh1 = specfun.khat(1, xs)
    ratio = specfun.ratio_khat1_k0(xs)
    rows = [[repr(float(v)) for v in row] for row in zip(xs, k0, k1, kh1, ratio)]
    finite = bool(np.all(np.isfinite([k0, k1, kh1, ratio])))
    report = {"points": len(xs), "pass": finite}
    return report, {"specfun.csv": _csv_text(["x", "K0", "K1", "K1hat", "K1hat_over_K0"], rows)}


def cmd_simulate(run: Run) -> tuple[dict, dict]:
    kind = run.task["kind"]
    records = []
    for index in range(run.paths):
        gen = mc.stream(run.seed, index)
        if kind == "many_delta":
            rec = sde.simulate_many_delta(run.z0, run.params, run.sim, gen)
        elif kind == "one_delta":
            rec = sde.simulate_one_delta(run.z0, run.params, run.edge(), run.sim, gen)
        elif kind == "brownian":
            rec = sde.brownian_particles(run.z0, run.params, run.sim, gen)
        else:
            raise ConfigError("kind must be many_delta, one_delta or brownian")
        records.append(rec)
    buf = io.StringIO()
    write_paths_jsonl(records, buf, stride=int(run.task["stride"]))
    statuses = {}
    for rec in records:
        statuses[rec.status] = statuses.get(rec.status, 0) + 1
    report = {"n": len(records), "status_counts": dict(sorted(statuses.items())), "pass": True}
    return report, {"paths.jsonl": buf.getvalue()}


def _ladder(run: Run) -> measures.ResidualLadder:
    t = run.task
    return measures.coupled_residuals(run.z0.positions, run.params, run.edge(), t["horizon"],
                                      run.sim.dt_max, run.paths, run.seed, t["eps_reg"],
                                      t["eps"])


def _ladder_report(ladder: measures.ResidualLadder, names, t) -> dict:
    medians = {k: ladder.coarse[k] for k in names}
    ratios = {k: ladder.ratio(k) for k in names}
    ok = all(v <= t["tolerance"] for v in medians.values())
    if t["max_ratio"] is not None:
        ok = ok and all(v <= t["max_ratio"] for v in ratios.values())
    return {"estimate": max(medians.values()), "stderr": None, "n": ladder.segments,
            "tolerance": t["tolerance"], "pass": bool(ok), "medians": medians,
            "halving_ratio": ratios, "ladder": ladder.to_dict()}


def cmd_check_ito(run: Run) -> tuple[dict, dict]:
    return _ladder_report(_ladder(run), ("ito_one_delta", "ito_many"), run.task), {}


def cmd_check_rn(run: Run) -> tuple[dict, dict]:
    t = dict(run.task, max_ratio=None)
    report = _ladder_report(_ladder(run), ("rn",), t)
    report["midpoint_median"] = report["ladder"]["coarse"]["rn_midpoint"]
    return report, {}


def radial_gaussian(positions) -> float:
    """exp(-sum of squared pair radii), bounded and continuous."""
    return float(np.exp(-np.sum(np.abs(separations(positions)) ** 2)))


def cmd_check_identities(run: Run) -> tuple[dict, dict]:
    t = run.task
    args = (run.z0.positions, run.params, radial_gaussian, t["stop_radius"], t["t_cap"],
            run.paths, run.seed, run.sim, run.workers)
    girsanov = measures.girsanov_bm_estimator(*args)
    direct = measures.direct_many_delta_estimator(*args)
    passed, score = mc.agreement_test(girsanov, direct, t["tolerance"])
    gap = mc.EstimatorResult(girsanov.mean - direct.mean,
                             math.hypot(girsanov.stderr, direct.stderr), run.paths)
    report = _estimate_report(gap, t["tolerance"], passed)
    report.update({"z_score": score, "girsanov": girsanov.to_dict(), "direct": direct.to_dict()})
    return report, {}


def cmd_estimate_mass(run: Run) -> tuple[dict, dict]:
    tol = run.task["tolerance"]
    res = measures.weighted_average_mass(run.z0.positions, run.params, run.sim, run.paths,
                                         run.seed, run.workers)
    passed = abs(res.mean - 1.0) <= tol * res.stderr or (res.stderr == 0.0
                                                          and abs(res.mean - 1.0) <= 1e-12)
    return _estimate_report(res, tol, passed), {}


def cmd_check_martingale(run: Run) -> tuple[dict, dict]:
    t = run.task
    rep = measures.stopped_martingale_test(run.z0.positions, run.params, run.edge(), t["t"],
                                           t["stop_radius"], t["eps"], run.paths, run.seed,
                                           run.sim, run.workers)
    s, u = rep.stopped, rep.unstopped
    stopped_ok = abs(s.mean - 1.0) <= t["tolerance"] * s.stderr or (s.stderr == 0.0
                                                                    and s.mean == 1.0)
    free_ok = u.mean <= 1.0 + t["tolerance"] * u.stderr
    report = _estimate_report(s, t["tolerance"], stopped_ok and free_ok)
    report.update({"stopped": s.to_dict(), "unstopped": u.to_dict(),
                   "stopped_pass": bool(stopped_ok), "unstopped_pass": bool(free_ok)})
    return report, {}


def cmd_check_ntc(run: Run) -> tuple[dict, dict]:
    t = run.task
    thresholds = [float(x) for x in t["thresholds"]]
    if sorted(thresholds, reverse=True) != thresholds:
        raise ConfigError("thresholds must be listed from largest to smallest")
    edge = run.edge() if t["kind"] == "one_delta" else None
    res = ntc.nsc_violation_fractions(run.z0.positions, run.params, run.sim, thresholds,
                                      run.paths, run.seed, t["kind"], edge, int(t["j_level"]),
                                      run.workers)
    fractions = [r.mean for r in res]
    monotone = all(b <= a for a, b in zip(fractions, fractions[1:]))
    passed = monotone and fractions[-1] <= t["tolerance"]
    report = {"estimate": fractions[-1], "stderr": res[-1].stderr, "n": run.paths,
              "tolerance": t["tolerance"], "pass": bool(passed), "monotone": monotone,
              "fractions": dict(zip(map(repr, thresholds), fractions))}
    rows = [[repr(th), repr(f), run.paths] for th, f in zip(thresholds, fractions)]
    return report, {"ntc.csv": _csv_text(["threshold", "violation_fraction", "n_paths"], rows)}


def cmd_check_comparison(run: Run) -> tuple[dict, dict]:
    t = run.task
    pairs = []
    for key in t["pairs"]:
        try:
            pairs.append(Edge.parse(key))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad pair {key!r}") from exc
    edge = run.edge() if t["kind"] == "one_delta" else None
    reports = ntc.bessel_comparison_study(run.z0.positions, run.params, run.sim, pairs,
                                          t["alpha"], int(t["k"]), int(t["m"]), run.paths,
                                          run.seed, t["kind"], edge, t["clock"], run.workers)
    fractions = np.array([r.fraction_dominated for r in reports])
    mean = float(fractions.mean())
    se = float(fractions.std(ddof=1) / math.sqrt(len(fractions))) if len(fractions) > 1 else 0.0
    report = {"estimate": mean, "stderr": se, "n": len(reports), "tolerance": t["tolerance"],
              "pass": bool(mean >= 1.0 - t["tolerance"]),
              "dimension": ntc.dimension_d(len(pairs), t["alpha"]).d}
    lines = "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in reports)
    return report, {"comparison.jsonl": lines}


def cmd_check_limits(run: Run) -> tuple[dict, dict]:
    t = run.task
    ladder = [float(e) for e in t["eps_ladder"]]
    rows = []
    kernel = [localtime.kernel_limit_quadrature(localtime.bump,
                                                localtime.KernelParams(t["beta"], e),
                                                t["upper"]) for e in ladder]
    for e, v in zip(ladder, kernel):
        rows.append(["kernel_limit", repr(e), repr(v), "2.0", repr(abs(v - 2.0) / 2.0)])
    vanish = {}
    for variant in ("first", "second"):
        vals = [localtime.vanishing_integral_oct(variant, t["upper"], e) for e in ladder]
        vanish[variant] = vals
        for e, v in zip(ladder, vals):
            rows.append([f"vanishing_{variant}", repr(e), repr(v), "0.0", repr(v)])
    kernel_gap = abs(kernel[-1] - 2.0) / 2.0
    kernel_monotone = all(abs(b - 2.0) <= abs(a - 2.0) for a, b in zip(kernel, kernel[1:]))
    vanish_monotone = all(all(b <= a for a, b in zip(v, v[1:])) for v in vanish.values())
    vanish_final = max(v[-1] for v in vanish.values())
    passed = (kernel_monotone and kernel_gap <= t["tolerance"] and vanish_monotone
              and vanish_final <= t["vanishing_target"])
    report = {"estimate": kernel[-1], "stderr": None, "n": len(ladder),
              "tolerance": t["tolerance"], "pass": bool(passed),
              "kernel_limit": {"values": kernel, "final_gap": kernel_gap,
                               "monotone": kernel_monotone},
              "vanishing": {"values": vanish, "final_max": vanish_final,
                            "monotone": vanish_monotone}}
    csv_text = _csv_text(["identity", "eps", "value", "target", "relative_gap"], rows)
    return report, {"limits.csv": csv_text}


COMMANDS = {
    "specfun-table": (cmd_specfun_table, "tabulate K0, K1, K1hat and K1hat/K0 as CSV"),
    "simulate": (cmd_simulate, "simulate paths and write them as JSON lines"),
    "check-ito": (cmd_check_ito, "Ito formula residuals on coupled dt, dt/2 grids"),
    "check-rn": (cmd_check_rn, "log-ratio decomposition residuals on coupled grids"),
    "check-identities": (cmd_check_identities, "weighted Brownian vs direct many-delta estimator"),
    "check-ntc": (cmd_check_ntc, "pair-sum violation fractions along a threshold ladder"),
    "check-comparison": (cmd_check_comparison, "pathwise lower Bessel comparison"),
    "check-limits": (cmd_check_limits, "kernel-limit and vanishing-integral quadrature ladders"),
    "estimate-mass": (cmd_estimate_mass, "total mass of the weighted one-delta average"),
    "check-martingale": (cmd_check_martingale, "mean of the stopped exponential functional"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="manydelta", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, helptext) in COMMANDS.items():
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="JSON file with model, sim, mc and task blocks")
        p.add_argument("--out", help="directory for the report and artifacts")
        p.add_argument("--paths", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int, help="worker processes (default: DCS_WORKERS or 1)")
        p.add_argument("--dt", type=float, help="maximum time step")
        p.add_argument("--delta-contact", type=float, dest="delta_contact",
                       help="contact detection radius")
        p.add_argument("--eps", type=float, help="kernel width where the task uses one")
        p.add_argument("--tolerance", type=float)
        if name == "specfun-table":
            p.add_argument("--xmin", type=float)
            p.add_argument("--xmax", type=float)
            p.add_argument("--points", type=int)
    return parser


def _emit(command: str, doc: dict, report: dict, artifacts: dict, out: str | None) -> None:
    # results do not depend on the worker count, so it is left out of the record
    recorded = copy.deepcopy(doc)
    recorded["mc"].pop("workers", None)
    full = {"command": command, "config": recorded,
            "input_hash": git_blob_hash(_canonical(recorded)), **report}
    text = json.dumps(full, indent=2, sort_keys=True, allow_nan=True) + "\n"
    if out:
        target = Path(out)
        target.mkdir(parents=True, exist_ok=True)
        (target / f"{command}.json").write_text(text)
        for name, body in artifacts.items():
            (target / name).write_text(body)
    else:
        sys.stdout.write(text)
        for body in artifacts.values():
            sys.stdout.write(body)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler, _ = COMMANDS[args.command]
    try:
        doc = resolve_config(args.command, args)
        run = Run(doc)
    except (ConfigError, specfun.DomainError, TypeError, ValueError, KeyError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report, artifacts = handler(run)
    except (ConfigError, specfun.DomainError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalBlowupError, SingularStateError, mc.PathFailure,
            localtime.QuadratureError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    _emit(args.command, doc, report, artifacts, args.out)
    return EXIT_OK if report["pass"] else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
