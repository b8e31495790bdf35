"""Linear plant model, AoI-to-MSE mapping and system configuration."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

REMOTE = "remote"
EDGE = "edge"
SERVERS = (REMOTE, EDGE)


class ConfigError(ValueError):
    """Invalid process or system configuration."""


def _as_square(matrix, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(matrix, dtype=float))
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ConfigError(f"{name} must be a square matrix, got shape {arr.shape}")
    return arr


def spectral_radius(matrix) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(matrix)))))


@dataclass(frozen=True, eq=False)
class ProcessSpec:
    """One physical process: dynamics, noise and per-server processing slots.

    ``remote_proc_slots`` and ``edge_proc_slots`` default to ``dim`` and
    ``2 * dim``, the convention of the reference parameter table.
    """

    id: int
    dynamics: np.ndarray
    noise_cov: np.ndarray
    remote_proc_slots: int = 0
    edge_proc_slots: int = 0
    aoi_cap: int = 45

    def __post_init__(self):
        A = _as_square(self.dynamics, "dynamics")
        R = _as_square(self.noise_cov, "noise_cov")
        if A.shape != R.shape:
            raise ConfigError(
                f"process {self.id}: dynamics {A.shape} and noise_cov {R.shape} differ"
            )
        if self.id < 1:
            raise ConfigError(f"process id must be >= 1, got {self.id}")
        if spectral_radius(A) <= 1.0:
            raise ConfigError(
                f"process {self.id}: spectral radius {spectral_radius(A):.6g} <= 1; "
                "the open-loop plant must be unstable"
            )
        if not np.allclose(R, R.T, atol=1e-12):
            raise ConfigError(f"process {self.id}: noise_cov is not symmetric")
        if np.min(np.linalg.eigvalsh(R)) < -1e-9:
            raise ConfigError(f"process {self.id}: noise_cov is not positive semi-definite")
        A.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "dynamics", A)
        object.__setattr__(self, "noise_cov", R)
        n = A.shape[0]
        if not self.remote_proc_slots:
            object.__setattr__(self, "remote_proc_slots", n)
        if not self.edge_proc_slots:
            object.__setattr__(self, "edge_proc_slots", 2 * n)
        for name in ("remote_proc_slots", "edge_proc_slots", "aoi_cap"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"process {self.id}: {name} must be a positive integer")
            object.__setattr__(self, name, int(value))

    @property
    def dim(self) -> int:
        return self.dynamics.shape[0]

    def proc_slots(self, server: str) -> int:
        if server == REMOTE:
            return self.remote_proc_slots
        if server == EDGE:
            return self.edge_proc_slots
        raise ValueError(f"unknown server {server!r}")

    def with_cap(self, aoi_cap: int) -> "ProcessSpec":
        return ProcessSpec(self.id, self.dynamics, self.noise_cov,
                           self.remote_proc_slots, self.edge_proc_slots, aoi_cap)

    def __repr__(self):
        return (f"ProcessSpec(id={self.id}, dim={self.dim}, T_r={self.remote_proc_slots}, "
                f"T_e={self.edge_proc_slots}, aoi_cap={self.aoi_cap})")


@dataclass(frozen=True)
class ChannelSpec:
    success_prob: float = 0.9

    def __post_init__(self):
        p = float(self.success_prob)
        if not (0.0 < p <= 1.0):
            raise ConfigError(f"success probability must lie in (0, 1], got {p}")
        object.__setattr__(self, "success_prob", p)


@dataclass(frozen=True)
class SystemConfig:
    """Processes plus link delays (slots) for the two servers.

    Delay defaults follow the reference parameter table: one slot each way to
    the remote server, zero to the edge server.
    """

    processes: tuple
    remote_up_delay: int = 1
    remote_down_delay: int = 1
    edge_up_delay: int = 0
    edge_down_delay: int = 0
    channel: ChannelSpec = field(default_factory=ChannelSpec)

    def __post_init__(self):
        procs = tuple(self.processes)
        object.__setattr__(self, "processes", procs)
        if not procs:
            raise ConfigError("at least one process is required")
        ids = [p.id for p in procs]
        if ids != list(range(1, len(procs) + 1)):
            raise ConfigError(f"process ids must be 1..N without gaps, got {ids}")
        for name in ("remote_up_delay", "remote_down_delay", "edge_up_delay", "edge_down_delay"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise ConfigError(f"{name} must be a non-negative integer, got {value}")
            object.__setattr__(self, name, int(value))
        if not isinstance(self.channel, ChannelSpec):
            object.__setattr__(self, "channel", ChannelSpec(self.channel))
        for proc in procs:
            longest = max(loop_delay(proc, s, self) for s in SERVERS)
            if proc.aoi_cap < longest:
                raise ConfigError(
                    f"process {proc.id}: aoi_cap {proc.aoi_cap} is below its "
                    f"largest loop delay {longest}"
                )

    @property
    def n_processes(self) -> int:
        return len(self.processes)

    @property
    def p(self) -> float:
        return self.channel.success_prob

    def process(self, k: int) -> ProcessSpec:
        return self.processes[k - 1]

    def up_delay(self, server: str) -> int:
        return self.remote_up_delay if server == REMOTE else self.edge_up_delay

    def down_delay(self, server: str) -> int:
        return self.remote_down_delay if server == REMOTE else self.edge_down_delay

    def caps(self) -> tuple:
        return tuple(p.aoi_cap for p in self.processes)

    def replace(self, **changes) -> "SystemConfig":
        fields = dict(
            processes=self.processes,
            remote_up_delay=self.remote_up_delay,
            remote_down_delay=self.remote_down_delay,
            edge_up_delay=self.edge_up_delay,
            edge_down_delay=self.edge_down_delay,
            channel=self.channel,
        )
        if "p" in changes:
            changes["channel"] = ChannelSpec(changes.pop("p"))
        if "aoi_cap" in changes:
            cap = changes.pop("aoi_cap")
            caps = cap if isinstance(cap, Sequence) else [cap] * len(self.processes)
            changes["processes"] = tuple(
                proc.with_cap(c) for proc, c in zip(changes.get("processes", self.processes), caps)
            )
        fields.update(changes)
        return SystemConfig(**fields)

    def select(self, ids: Sequence[int]) -> "SystemConfig":
        """Sub-system made of the given processes, renumbered 1..len(ids)."""
        procs = []
        for new_id, k in enumerate(ids, start=1):
            old = self.process(k)
            procs.append(ProcessSpec(new_id, old.dynamics, old.noise_cov,
                                     old.remote_proc_slots, old.edge_proc_slots, old.aoi_cap))
        return self.replace(processes=tuple(procs))


@functools.lru_cache(maxsize=None)
def mse_table(spec: ProcessSpec) -> np.ndarray:
    """``table[tau - 1]`` is the MSE at AoI ``tau`` for ``tau = 1..aoi_cap``.

    Built with the running sum ``S(tau + 1) = S(tau) + A^tau R (A^T)^tau``.
    """
    A, R = spec.dynamics, spec.noise_cov
    out = np.empty(spec.aoi_cap)
    power = np.eye(spec.dim)
    total = 0.0
    for i in range(spec.aoi_cap):
        total += float(np.trace(power @ R @ power.T))
        out[i] = total
        power = A @ power
    out.setflags(write=False)
    return out


def mse_of_age(spec: ProcessSpec, tau: int) -> float:
    if int(tau) != tau or not (1 <= tau <= spec.aoi_cap):
        raise ValueError(f"tau must be an integer in [1, {spec.aoi_cap}], got {tau}")
    return float(mse_table(spec)[int(tau) - 1])


def processing_slots(length_elems: int, bits_per_elem: int, cycles_per_bit: int,
                     cpu_hz: float, slot_seconds: float) -> int:
    """Slots needed to process one status update of ``length_elems`` elements."""
    values = (length_elems, bits_per_elem, cycles_per_bit, cpu_hz, slot_seconds)
    if any(v <= 0 for v in values):
        raise ValueError(f"all inputs must be strictly positive, got {values}")
    cycles = length_elems * bits_per_elem * cycles_per_bit
    # exact rational ceiling when the denominator is integral
    denom = cpu_hz * slot_seconds
    if float(denom).is_integer():
        return -(-cycles // int(denom))
    return math.ceil(cycles / denom)


def loop_delay(spec: ProcessSpec, server: str, config: "SystemConfig") -> int:
    """Slots from sampling to command delivery when served by ``server``."""
    return config.up_delay(server) + spec.proc_slots(server) + config.down_delay(server)


def _vector(x, n: int, name: str) -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.shape != (n,):
        raise ValueError(f"{name} must have dimension {n}, got shape {v.shape}")
    return v


def plant_step(spec: ProcessSpec, x, u, noise_draw) -> np.ndarray:
    """``A x + u + z`` (the input matrix is the identity)."""
    n = spec.dim
    return spec.dynamics @ _vector(x, n, "x") + _vector(u, n, "u") + _vector(noise_draw, n, "noise_draw")


@functools.lru_cache(maxsize=256)
def _power(spec: ProcessSpec, k: int) -> np.ndarray:
    return np.linalg.matrix_power(spec.dynamics, k)


def estimate_state(spec: ProcessSpec, x_stale, tau: int) -> np.ndarray:
    """Open-loop prediction ``A^tau x_stale``."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    return _power(spec, int(tau)) @ _vector(x_stale, spec.dim, "x_stale")


def control_command(spec: ProcessSpec, x_est) -> np.ndarray:
    """Deadbeat command ``-A x_est``."""
    return -spec.dynamics @ _vector(x_est, spec.dim, "x_est")


BENCHMARK_DYNAMICS = {
    1: [[1.02, 1, 0, 1],
        [0, 1, 0.2, 0],
        [0, 0, 1, 0],
        [0, 0, 0, 1.01]],
    2: [[1, 1, 0],
        [0, 1.02, 0],
        [0, 0, 1]],
    3: [[1.02, 1],
        [0, 1]],
    4: [[1.02]],
}


def benchmark_processes(ids: Sequence[int] = (1, 2, 3, 4), aoi_cap: int = 45) -> tuple:
    """The four benchmark processes (identity noise), renumbered 1..len(ids)."""
    procs = []
    for new_id, k in enumerate(ids, start=1):
        A = np.array(BENCHMARK_DYNAMICS[k], dtype=float)
        procs.append(ProcessSpec(new_id, A, np.eye(A.shape[0]), aoi_cap=aoi_cap))
    return tuple(procs)


def benchmark_config(ids: Sequence[int] = (1, 2, 3, 4), p: float = 0.9, aoi_cap: int = 45,
                     **delays) -> SystemConfig:
    return SystemConfig(benchmark_processes(ids, aoi_cap), channel=ChannelSpec(p), **delays)
