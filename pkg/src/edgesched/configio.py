"""YAML system configuration files.

Schema (every key except ``processes`` is optional)::

    success_prob: 0.9          # link success probability p in (0, 1]
    aoi_cap: 45                # default AoI cap for every process
    delays:                    # slots; defaults shown
      remote_up: 1
      remote_down: 1
      edge_up: 0
      edge_down: 0
    processes:                 # ids are assigned 1..N in list order
      - dynamics: [[1.02, 1], [0, 1]]   # row-major square matrix
        noise_cov: [[1, 0], [0, 1]]     # default: identity
        remote_proc_slots: 2            # default: state dimension
        edge_proc_slots: 4              # default: twice the dimension
        aoi_cap: 45                     # default: top-level aoi_cap
      - benchmark: 4                    # one of the built-in processes 1..4

Errors are reported as ``ConfigError`` with the file name and line.
"""

from __future__ import annotations

import os

import numpy as np
import yaml

from .plant import (BENCHMARK_DYNAMICS, ChannelSpec, ConfigError, ProcessSpec, SystemConfig)

TOP_KEYS = {"success_prob", "aoi_cap", "delays", "processes"}
DELAY_KEYS = {"remote_up", "remote_down", "edge_up", "edge_down"}
PROCESS_KEYS = {"dynamics", "noise_cov", "remote_proc_slots", "edge_proc_slots", "aoi_cap",
                "benchmark"}


class _Node:
    """Parsed value plus the line it came from."""

    __slots__ = ("value", "line")

    def __init__(self, value, line):
        self.value = value
        self.line = line


def _wrap(node):
    line = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            out[k.value] = _wrap(v)
        return _Node(out, line)
    if isinstance(node, yaml.SequenceNode):
        return _Node([_wrap(v) for v in node.value], line)
    return _Node(yaml.constructor.SafeConstructor().construct_object(node), line)


class _Reader:
    def __init__(self, source: str):
        self.source = source

    def fail(self, line, message):
        raise ConfigError(f"{self.source}:{line}: {message}")

    def mapping(self, node, allowed, what):
        if not isinstance(node.value, dict):
            self.fail(node.line, f"{what} must be a mapping")
        for key, val in node.value.items():
            if key not in allowed:
                self.fail(val.line, f"unknown key {key!r} in {what}; expected one of {sorted(allowed)}")
        return node.value

    def integer(self, node, what, minimum=0):
        v = node.value
        if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
            self.fail(node.line, f"{what} must be an integer >= {minimum}, got {v!r}")
        return v

    def number(self, node, what):
        v = node.value
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(node.line, f"{what} must be a number, got {v!r}")
        return float(v)

    def matrix(self, node, what):
        rows = node.value
        if not isinstance(rows, list) or not rows:
            self.fail(node.line, f"{what} must be a non-empty list of rows")
        out = []
        for row in rows:
            if not isinstance(row.value, list):
                self.fail(row.line, f"{what}: each row must be a list of numbers")
            out.append([self.number(x, what) for x in row.value])
        if any(len(r) != len(out) for r in out):
            self.fail(node.line, f"{what} must be square, got rows of lengths "
                                 f"{[len(r) for r in out]}")
        return np.array(out, dtype=float)


def parse_config(text: str, source: str = "<config>") -> SystemConfig:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else "?"
        raise ConfigError(f"{source}:{line}: YAML syntax error: "
                          f"{getattr(exc, 'problem', exc)}") from None
    if root is None:
        raise ConfigError(f"{source}:1: empty configuration")
    r = _Reader(source)
    top = r.mapping(_wrap(root), TOP_KEYS, "configuration")
    default_cap = r.integer(top["aoi_cap"], "aoi_cap", 1) if "aoi_cap" in top else 45
    delays = {}
    if "delays" in top:
        for key, val in r.mapping(top["delays"], DELAY_KEYS, "delays").items():
            delays[f"{key}_delay"] = r.integer(val, f"delays.{key}")
    if "processes" not in top:
        r.fail(1, "missing 'processes'")
    plist = top["processes"]
    if not isinstance(plist.value, list) or not plist.value:
        r.fail(plist.line, "processes must be a non-empty list")
    procs = []
    for new_id, pnode in enumerate(plist.value, start=1):
        fields = r.mapping(pnode, PROCESS_KEYS, f"process {new_id}")
        cap = r.integer(fields["aoi_cap"], "aoi_cap", 1) if "aoi_cap" in fields else default_cap
        kw = {}
        for key in ("remote_proc_slots", "edge_proc_slots"):
            if key in fields:
                kw[key] = r.integer(fields[key], key, 1)
        if "benchmark" in fields:
            which = r.integer(fields["benchmark"], "benchmark", 1)
            if which not in BENCHMARK_DYNAMICS:
                r.fail(fields["benchmark"].line, f"benchmark must be one of {sorted(BENCHMARK_DYNAMICS)}")
            if "dynamics" in fields:
                r.fail(fields["dynamics"].line, "give either benchmark or dynamics, not both")
            A = np.array(BENCHMARK_DYNAMICS[which], dtype=float)
        elif "dynamics" in fields:
            A = r.matrix(fields["dynamics"], "dynamics")
        else:
            r.fail(pnode.line, f"process {new_id} needs 'dynamics' or 'benchmark'")
        R = r.matrix(fields["noise_cov"], "noise_cov") if "noise_cov" in fields \
            else np.eye(A.shape[0])
        try:
            procs.append(ProcessSpec(new_id, A, R, aoi_cap=cap, **kw))
        except ConfigError as exc:
            r.fail(pnode.line, str(exc))
    p = r.number(top["success_prob"], "success_prob") if "success_prob" in top else 0.9
    try:
        return SystemConfig(tuple(procs), channel=ChannelSpec(p), **delays)
    except ConfigError as exc:
        line = top["success_prob"].line if "success probability" in str(exc) else 1
        r.fail(line, str(exc))


def load_config(path) -> SystemConfig:
    with open(path) as fh:
        return parse_config(fh.read(), os.fspath(path))


def config_to_dict(config: SystemConfig) -> dict:
    """Plain-data form accepted back by :func:`config_from_dict`."""
    return {
        "success_prob": config.p,
        "delays": {"remote_up": config.remote_up_delay, "remote_down": config.remote_down_delay,
                   "edge_up": config.edge_up_delay, "edge_down": config.edge_down_delay},
        "processes": [{"dynamics": p.dynamics.tolist(), "noise_cov": p.noise_cov.tolist(),
                       "remote_proc_slots": p.remote_proc_slots,
                       "edge_proc_slots": p.edge_proc_slots, "aoi_cap": p.aoi_cap}
                      for p in config.processes],
    }


def config_from_dict(data: dict) -> SystemConfig:
    return parse_config(yaml.safe_dump(data), "<dict>")


def dump_config(config: SystemConfig) -> str:
    return yaml.safe_dump(config_to_dict(config), sort_keys=False, default_flow_style=None)
