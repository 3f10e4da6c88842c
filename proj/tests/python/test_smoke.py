import json
import os
from pathlib import Path

import numpy as np
import pytest

import obsmhe

CONFIG = os.environ.get(
    "OBSMHE_CONFIG",
    str(Path(__file__).resolve().parents[2] / "configs" / "reactor_benchmark.json"),
)


def test_horizons():
    assert obsmhe.min_horizon(CONFIG, a=100.0) == 16
    assert obsmhe.min_horizon(CONFIG) == 128
    assert obsmhe.min_T(CONFIG, 3) == 178


def test_small_cap_raises():
    with pytest.raises(obsmhe.CertificationError):
        obsmhe.min_horizon(CONFIG, cap=10)


def test_missing_config_raises():
    with pytest.raises(obsmhe.ConfigError):
        obsmhe.min_horizon("/nonexistent.json")


def test_simulate_shapes_and_determinism():
    a = obsmhe.simulate(CONFIG, seed=3)
    b = obsmhe.simulate(CONFIG, seed=3)
    assert a["x"].shape == (201, 2)
    assert a["xhat"].shape == (201, 2)
    assert np.array_equal(a["xhat"], b["xhat"])
    assert a["sse"] == pytest.approx(((a["x"] - a["xhat"]) ** 2).sum(), rel=1e-12)
    assert a["theorem1_violations"] == 0
    assert all(c <= cc for c, cc in zip(a["cost"], a["candidate_cost"]))


def test_zero_iterations_follow_the_observer():
    tr = obsmhe.simulate(CONFIG, seed=1, iterations=0)
    assert np.array_equal(tr["xhat"], tr["observer"])


def test_cli_in_process():
    code, out, _ = obsmhe.run_cli(["certify", CONFIG, "--a", "100"])
    assert code == 0
    assert json.loads(out)["M_min"] == 16
    code, _, err = obsmhe.run_cli(["certify", CONFIG, "--cap", "10"])
    assert code == 2
    assert "gamma1" in err
