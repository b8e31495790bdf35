"""Command-line entry point: ``edgesched <command> ...``.

Commands
--------
solve            solve a configuration and write a JSON artifact
policy-map       CSV rows of a solved policy on a slice of the state space
check            structural checks on a solved artifact (exit 1 on violation)
sweep            Monte Carlo sweep over the link success probability
reproduce-paper  the benchmark experiment bundle at reduced AoI caps

Exit status: 0 success, 1 check violations, 2 configuration or usage
errors, 3 state budget exceeded, 4 solver did not converge.
"""

from __future__ import annotations

import argparse
import gzip
import json
import os
import sys
import time

import numpy as np

from . import checks
from .configio import config_from_dict, config_to_dict, load_config
from .mdp import IterationLimitError, SolveResult
from .plant import ConfigError, benchmark_config
from .preempt import (EMPTY, PreemptModel, TaskSlot, export_preempt_policy_csv,
                      solve_preempt_optimal)
from .sched import (ContractError, SchedModel, ServerPipeline, StateBudgetError, action_from_id,
                    export_policy_csv, solve_optimal)
from .sim import (POLICY_NAMES, PREEMPT_POLICY_NAMES, PreemptTablePolicy, TablePolicy,
                  make_policy, sweep_p, write_sweep_csv)

SCHEMA = "edgesched-solved/1"
EXIT_OK, EXIT_VIOLATION, EXIT_USAGE, EXIT_BUDGET, EXIT_SOLVER = 0, 1, 2, 3, 4

POLICY_ALIASES = {"opt": "optimal", "subopt": "suboptimal", "nopreempt": "no-preempt"}


class UsageError(ValueError):
    """Bad command-line input that argparse cannot catch."""


# -- artifacts ---------------------------------------------------------------


def _open(path, mode):
    return gzip.open(path, mode + "t") if str(path).endswith(".gz") else open(path, mode)


def save_artifact(path, kind: str, config, result: SolveResult, options: dict):
    payload = {
        "schema": SCHEMA,
        "model": kind,
        "options": options,
        "config": config_to_dict(config),
        "avg_cost": result.avg_cost,
        "iterations": result.iterations,
        "residual": result.residual,
        "policy": [int(a) for a in result.policy],
        "value": [float(v) for v in result.value],
    }
    with _open(path, "w") as fh:
        json.dump(payload, fh, separators=(",", ":"))


class Artifact:
    """A loaded solve: config, rebuilt model and the stored solution."""

    def __init__(self, path):
        try:
            with _open(path, "r") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read artifact {path}: {exc}") from None
        if not isinstance(data, dict) or data.get("schema") != SCHEMA:
            raise UsageError(f"{path}: not a {SCHEMA} artifact")
        self.kind = data["model"]
        self.options = data["options"]
        self.config = config_from_dict(data["config"])
        if self.kind == "sched":
            self.model = SchedModel(self.config, max_states=len(data["policy"]),
                                    allow_idle=self.options.get("allow_idle", True))
        elif self.kind == "preempt":
            self.model = PreemptModel(self.config, max_states=len(data["policy"]),
                                      allow_preempt=self.options.get("allow_preempt", True))
        else:
            raise UsageError(f"{path}: unknown model kind {self.kind!r}")
        self.policy = np.array(data["policy"], dtype=np.int64)
        self.value = np.array(data["value"], dtype=float)
        if len(self.policy) != self.model.num_states:
            raise UsageError(f"{path}: artifact has {len(self.policy)} states, "
                             f"model has {self.model.num_states}")
        self.avg_cost = data["avg_cost"]
        self.iterations = data["iterations"]

    def as_policy(self):
        if self.kind == "sched":
            return TablePolicy(self.model, self.policy)
        return PreemptTablePolicy(self.model, self.policy)


# -- helpers -----------------------------------------------------------------


def _config_with_cap(path, tau_cap):
    config = load_config(path)
    return config.replace(aoi_cap=tau_cap) if tau_cap else config


def _parse_task(text: str, fields: int, what: str) -> tuple:
    try:
        parts = tuple(int(x) for x in text.split(":"))
    except ValueError:
        raise UsageError(f"{what} must look like " + ":".join("kde"[:fields])) from None
    if len(parts) != fields:
        raise UsageError(f"{what} needs {fields} colon-separated integers, got {text!r}")
    return parts


def parse_slice(text: str | None) -> dict:
    """``key=value`` pairs separated by commas, e.g. ``remote=1:4,edge=idle,sum=45``."""
    out = {}
    if not text:
        return out
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise UsageError(f"slice item {item!r} is not key=value")
        key, val = (x.strip() for x in item.split("=", 1))
        out[key] = val
    return out


SCHED_SLICE_KEYS = {"remote", "edge", "sum"}
PREEMPT_SLICE_KEYS = {"running", "parked", "out", "arrivals", "sum"}


def _pipe_filter(spec: str, template: ServerPipeline):
    if spec == "any":
        return None
    if spec == "idle":
        return ServerPipeline(template.up, 0, 0, template.down)
    k, d = _parse_task(spec, 2, "pipeline slice")
    return ServerPipeline(template.up, k, d, template.down)


def _tau_filters(fields: dict, n: int, allowed: set) -> dict:
    taus = {}
    for key, val in fields.items():
        if key in allowed:
            continue
        if key.startswith("tau_") and key[4:].isdigit() and 1 <= int(key[4:]) <= n:
            taus[int(key[4:]) - 1] = int(val)
            continue
        raise UsageError(f"unknown slice field {key!r}; expected one of "
                         f"{sorted(allowed) + [f'tau_1..tau_{n}']}")
    return taus


def slice_indices(art: Artifact, text: str | None) -> np.ndarray:
    fields = parse_slice(text)
    model = art.model
    if art.kind == "sched":
        taus = _tau_filters(fields, model.n, SCHED_SLICE_KEYS)
        idle = model.pipes[model.idle_pipe]
        remote = _pipe_filter(fields.get("remote", "idle" if "edge" not in fields else "any"),
                              idle[0])
        edge = _pipe_filter(fields.get("edge", "idle" if "remote" not in fields else "any"),
                            idle[1])
        cs = [c for c, (r, e) in enumerate(model.pipes)
              if (remote is None or r == remote) and (edge is None or e == edge)]
        n_cfg = model.n_pipes
    else:
        taus = _tau_filters(fields, model.n, PREEMPT_SLICE_KEYS)
        running = TaskSlot(*_parse_task(fields["running"], 2, "running"), 0) \
            if fields.get("running", "idle") != "idle" else EMPTY
        parked = TaskSlot(*_parse_task(fields["parked"], 3, "parked")) \
            if fields.get("parked", "idle") != "idle" else EMPTY
        out = _parse_task(fields["out"], 2, "out") if fields.get("out", "idle") != "idle" \
            else (0, 0)
        arrivals = None
        if "arrivals" in fields:
            arrivals = tuple(ch == "1" for ch in fields["arrivals"])
            if len(arrivals) != model.n or set(fields["arrivals"]) - {"0", "1"}:
                raise UsageError(f"arrivals must be {model.n} digits of 0/1")
        m = (running, parked, *out)
        cs = [i for i, (mm, arr) in enumerate(model.configs)
              if mm == m and (arrivals is None or arr == arrivals)]
        n_cfg = model.n_configs
    grid = model.aoi_grid()
    keep = np.ones(len(grid), dtype=bool)
    if "sum" in fields:
        keep &= grid.sum(axis=1) == int(fields["sum"])
    for k, t in taus.items():
        keep &= grid[:, k] == t
    g = np.flatnonzero(keep)
    if not cs or not len(g):
        return np.zeros(0, dtype=np.int64)
    return (g[:, None] * n_cfg + np.array(cs, dtype=np.int64)[None, :]).ravel()


def parse_p_grid(text: str) -> list:
    """``0.8:0.05:1.0`` (inclusive range) or a comma list."""
    try:
        if ":" in text:
            lo, step, hi = (float(x) for x in text.split(":"))
            if step <= 0:
                raise UsageError("p step must be positive")
            count = int(round((hi - lo) / step)) + 1
            return [round(lo + i * step, 10) for i in range(count)]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        if isinstance(exc, UsageError):
            raise
        raise UsageError(f"cannot parse p grid {text!r}") from None


def _policy_names(text: str) -> list:
    names = []
    for raw in text.split(","):
        name = POLICY_ALIASES.get(raw.strip(), raw.strip())
        if name not in POLICY_NAMES + PREEMPT_POLICY_NAMES:
            raise UsageError(f"unknown policy {raw!r}; choose from "
                             f"{list(POLICY_NAMES + PREEMPT_POLICY_NAMES)}")
        names.append(name)
    if len({n in PREEMPT_POLICY_NAMES for n in names}) > 1:
        raise UsageError("cannot mix preemption and two-server policies in one sweep")
    return names


# -- commands ----------------------------------------------------------------


def cmd_solve(args) -> int:
    config = _config_with_cap(args.config, args.tau_cap)
    t0 = time.perf_counter()
    if args.model == "sched":
        model, result = solve_optimal(config, tol=args.tol, max_sweeps=args.max_sweeps,
                                      max_states=args.max_states, allow_idle=not args.no_idle)
        options = {"allow_idle": not args.no_idle}
    else:
        model = PreemptModel(config, args.max_states, allow_preempt=not args.no_preempt)
        model, result = solve_preempt_optimal(config, tol=args.tol, max_sweeps=args.max_sweeps,
                                              max_states=args.max_states, model=model)
        options = {"allow_preempt": not args.no_preempt}
    options.update(tol=args.tol, tau_cap=args.tau_cap)
    save_artifact(args.out, args.model, config, result, options)
    print(f"theta {result.avg_cost!r}")
    print(f"iterations {result.iterations}")
    print(f"states {model.num_states}")
    if args.verbose:
        print(f"elapsed {time.perf_counter() - t0:.2f}s", file=sys.stderr)
    return EXIT_OK


def cmd_policy_map(args) -> int:
    art = Artifact(args.artifact)
    idx = slice_indices(art, args.slice)
    export = export_policy_csv if art.kind == "sched" else export_preempt_policy_csv
    export(args.out if args.out else sys.stdout, art.model, art.policy, idx)
    return EXIT_OK


def cmd_check(args) -> int:
    art = Artifact(args.artifact)
    wanted = args.checks.split(",") if args.checks else \
        (["monotonicity", "threshold"] if art.kind == "sched" else ["consistency"])
    sched_checks = {"monotonicity", "threshold"}
    reports = []
    for name in wanted:
        if name in sched_checks and art.kind != "sched":
            raise UsageError(f"check {name!r} needs a sched artifact, got {art.kind}")
        if name == "consistency" and art.kind != "preempt":
            raise UsageError(f"check 'consistency' needs a preempt artifact, got {art.kind}")
        if name == "monotonicity":
            reports.append(checks.check_monotonicity(art.value, art.model))
        elif name == "threshold":
            reports.append(checks.check_threshold_shift(art.policy, art.model))
        elif name == "consistency":
            reports.append(checks.check_consistency(art.policy, art.model))
        else:
            raise UsageError(f"unknown check {name!r}")
    for r in reports:
        print(r.to_json() if args.json else r.to_text())
    return EXIT_OK if all(r.passed for r in reports) else EXIT_VIOLATION


def _ordering_summary(rows) -> list:
    lines = []
    for p in sorted({r.p for r in rows}):
        at = sorted((r for r in rows if r.p == p), key=lambda r: (r.avg_mse, r.policy))
        lines.append(f"p={p:g}: " + " < ".join(f"{r.policy} ({r.avg_mse:.4g})" for r in at))
    return lines


def cmd_sweep(args) -> int:
    config = _config_with_cap(args.config, args.tau_cap)
    names = _policy_names(args.policies)
    grid = parse_p_grid(args.p)
    reuse = Artifact(args.artifact) if args.artifact else None
    factories = {}
    for name in names:
        def factory(cfg, name=name):
            solved = {"optimal": "sched", "preempt": "preempt"}.get(name)
            if reuse is not None and reuse.kind == solved and reuse.config.p == cfg.p:
                return reuse.as_policy()
            return make_policy(name, cfg, tol=args.tol)
        factories[name] = factory
    rows = sweep_p(factories, config, grid, horizon=args.horizon, seed=args.seed,
                   replications=args.replications, tol=args.tol)
    write_sweep_csv(args.out if args.out else sys.stdout, rows)
    for line in _ordering_summary(rows):
        print(line, file=sys.stderr if not args.out else sys.stdout)
    return EXIT_OK


def cmd_reproduce(args) -> int:
    """Benchmark bundle: policy slices, structure checks and p sweeps."""
    os.makedirs(args.out_dir, exist_ok=True)
    cap, horizon, reps = args.tau_cap, args.horizon, args.replications
    grid = parse_p_grid(args.p)
    summary = {}

    def path(name):
        return os.path.join(args.out_dir, name)

    def say(msg):
        print(msg, flush=True)

    # idle-server policy maps for {1,4} and {1,2}
    for ids in ((1, 4), (1, 2)):
        tag = "".join(map(str, ids))
        cfg = benchmark_config(ids, p=0.9, aoi_cap=cap)
        model, res = solve_optimal(cfg, tol=args.tol)
        save_artifact(path(f"solved_{tag}.json.gz"), "sched", cfg, res,
                      {"allow_idle": True, "tol": args.tol, "tau_cap": cap})
        with open(path(f"policy_idle_{tag}.csv"), "w", newline="") as fh:
            export_policy_csv(fh, model, res.policy, model.slice_indices())
        idle = sorted({tuple(action_from_id(a, model.n)) for a in
                       res.policy[model.slice_indices()]})
        mono = checks.check_monotonicity(res.value, model)
        shift = checks.check_threshold_shift(res.policy, model)
        summary[f"processes_{tag}"] = {"theta": res.avg_cost, "idle_actions": idle,
                                       "monotonicity_violations": mono.violations,
                                       "threshold_shift_violations": shift.violations}
        say(f"{{{','.join(map(str, ids))}}}: theta {res.avg_cost:.6g}, idle actions {idle}, "
            f"monotonicity {mono.violations}, threshold shift {shift.violations}")

    # performance sweep on {1,2}
    cfg = benchmark_config((1, 2), p=0.9, aoi_cap=cap)
    rows = sweep_p(list(POLICY_NAMES), cfg, grid, horizon=horizon, seed=args.seed,
                   replications=reps, tol=args.tol)
    write_sweep_csv(path("sweep_12.csv"), rows)
    for line in _ordering_summary(rows):
        say(line)

    # preemption on {1,2}
    pcap = min(cap, args.preempt_cap)
    pcfg = benchmark_config((1, 2), p=0.9, aoi_cap=pcap)
    pmodel, pres = solve_preempt_optimal(pcfg, tol=args.tol)
    save_artifact(path("solved_preempt_12.json.gz"), "preempt", pcfg, pres,
                  {"allow_preempt": True, "tol": args.tol, "tau_cap": pcap})
    cons = checks.check_consistency(pres.policy, pmodel)
    summary["preempt_12"] = {"theta": pres.avg_cost, "consistency_violations": cons.violations,
                             "consistency_success_only": cons.details["success_only_violations"]}
    say(f"preempt {{1,2}}: theta {pres.avg_cost:.6g}, consistency {cons.violations}")
    prows = sweep_p(list(PREEMPT_POLICY_NAMES), pcfg, grid, horizon=horizon, seed=args.seed,
                    replications=reps, tol=args.tol)
    write_sweep_csv(path("sweep_preempt_12.csv"), prows)
    for line in _ordering_summary(prows):
        say(line)

    with open(path("summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    return EXIT_OK


# -- argument parsing --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="edgesched", description=__doc__.split("\n\n")[0],
                                 formatter_class=argparse.RawDescriptionHelpFormatter,
                                 epilog=__doc__.split("\n\n", 1)[1])
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve a configuration and write an artifact")
    s.add_argument("config", help="YAML system configuration")
    s.add_argument("-o", "--out", required=True, help="artifact path (.json or .json.gz)")
    s.add_argument("--model", choices=("sched", "preempt"), default="sched")
    s.add_argument("--tol", type=float, default=1e-7, help="span stopping tolerance")
    s.add_argument("--tau-cap", type=int, default=None, help="override every process AoI cap")
    s.add_argument("--max-states", type=int, default=2_000_000, help="state budget")
    s.add_argument("--max-sweeps", type=int, default=100_000, help="solver sweep limit")
    s.add_argument("--no-idle", action="store_true",
                   help="sched: only actions that fill every free server")
    s.add_argument("--no-preempt", action="store_true",
                   help="preempt: forbid interrupting a running task")
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_solve)

    m = sub.add_parser("policy-map", help="CSV of a solved policy on a state slice")
    m.add_argument("artifact")
    m.add_argument("--slice", default=None,
                   help="comma-separated key=value filters. sched keys: remote, edge "
                        "(idle | any | k:d, compute unit busy with process k, d slots left), "
                        "sum, tau_K. preempt keys: running (k:d), parked (k:d:e), out (k:e), "
                        "arrivals (e.g. 10), sum, tau_K. Default: idle servers")
    m.add_argument("-o", "--out", default=None, help="CSV path (default stdout)")
    m.set_defaults(func=cmd_policy_map)

    c = sub.add_parser("check", help="structural checks; exit 1 on any violation")
    c.add_argument("artifact")
    c.add_argument("--checks", default=None,
                   help="comma list of monotonicity, threshold, consistency "
                        "(default: all applicable)")
    c.add_argument("--json", action="store_true", help="JSON reports")
    c.set_defaults(func=cmd_check)

    w = sub.add_parser("sweep", help="Monte Carlo sweep over p")
    w.add_argument("config")
    w.add_argument("--policies", default="optimal,suboptimal,greedy,static",
                   help="comma list of " + ", ".join(POLICY_NAMES + PREEMPT_POLICY_NAMES))
    w.add_argument("--p", default="0.8:0.05:1.0", help="lo:step:hi or comma list")
    w.add_argument("--horizon", type=int, default=40_000)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--replications", type=int, default=10)
    w.add_argument("--tol", type=float, default=1e-7)
    w.add_argument("--tau-cap", type=int, default=None)
    w.add_argument("--artifact", default=None,
                   help="reuse this solved policy at its own p instead of re-solving")
    w.add_argument("-o", "--out", default=None, help="CSV path (default stdout)")
    w.set_defaults(func=cmd_sweep)

    r = sub.add_parser("reproduce-paper", help="run the benchmark bundle at reduced caps")
    r.add_argument("--out-dir", default="results")
    r.add_argument("--tau-cap", type=int, default=30)
    r.add_argument("--preempt-cap", type=int, default=20)
    r.add_argument("--p", default="0.8:0.05:1.0")
    r.add_argument("--horizon", type=int, default=40_000)
    r.add_argument("--replications", type=int, default=10)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--tol", type=float, default=1e-7)
    r.set_defaults(func=cmd_reproduce)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StateBudgetError as exc:
        print(f"error: {exc}; lower --tau-cap or raise --max-states", file=sys.stderr)
        return EXIT_BUDGET
    except IterationLimitError as exc:
        print(f"error: solver did not converge: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, ContractError, UsageError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
