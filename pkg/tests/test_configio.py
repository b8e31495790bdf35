from pathlib import Path

import numpy as np
import pytest

from edgesched.configio import config_from_dict, config_to_dict, dump_config, load_config, \
    parse_config
from edgesched.plant import ConfigError, benchmark_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_shipped_configs_load():
    cfg = load_config(CONFIGS / "procs_12.yaml")
    ref = benchmark_config((1, 2), p=0.9, aoi_cap=45)
    assert cfg.caps() == ref.caps()
    for a, b in zip(cfg.processes, ref.processes):
        assert np.array_equal(a.dynamics, b.dynamics)
        assert (a.remote_proc_slots, a.edge_proc_slots) == (b.remote_proc_slots, b.edge_proc_slots)


def test_defaults_and_overrides():
    cfg = parse_config("""
success_prob: 0.8
aoi_cap: 12
delays: {remote_up: 2, remote_down: 2, edge_up: 1, edge_down: 1}
processes:
  - dynamics: [[1.1, 0.0], [0.0, 1.3]]
    edge_proc_slots: 3
    aoi_cap: 20
""")
    proc = cfg.processes[0]
    assert cfg.p == 0.8 and cfg.remote_up_delay == 2 and cfg.edge_down_delay == 1
    assert proc.remote_proc_slots == 2 and proc.edge_proc_slots == 3 and proc.aoi_cap == 20
    assert np.array_equal(proc.noise_cov, np.eye(2))


def test_round_trip():
    cfg = benchmark_config((1, 3), p=0.85, aoi_cap=25)
    back = config_from_dict(config_to_dict(cfg))
    assert back.p == cfg.p and back.caps() == cfg.caps()
    assert all(np.array_equal(a.dynamics, b.dynamics)
               for a, b in zip(back.processes, cfg.processes))
    assert parse_config(dump_config(cfg)).caps() == cfg.caps()


@pytest.mark.parametrize("text,line,message", [
    ("processes:\n  - dynamics: [[1.02, 1], [0]]\n", 2, "square"),
    ("processes:\n  - dynamics: [[1.02, x]]\n", 2, "number"),
    ("processes:\n  - dynamics: [[0.5]]\n", 2, "unstable"),
    ("success_prob: 0\nprocesses:\n  - benchmark: 1\n", 1, "success"),
    ("processes:\n  - benchmark: 1\n    colour: red\n", 3, "unknown key"),
    ("processes:\n  - benchmark: 9\n", 2, "benchmark"),
    ("aoi_cap: 45\n", 1, "processes"),
    ("processes: [\n", 2, "YAML"),
])
def test_errors_carry_line_numbers(text, line, message):
    with pytest.raises(ConfigError, match=message) as info:
        parse_config(text, "bad.yaml")
    assert str(info.value).startswith(f"bad.yaml:{line}:")


def test_empty_file(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    with pytest.raises(ConfigError, match="empty"):
        load_config(path)
