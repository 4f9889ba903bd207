"""Smoke test for the petc extension module.

Build and install first:  pip install --no-build-isolation -e crates/py
Then run:                 python3 -m pytest python/smoke_test.py
"""

import math

import petc
import pytest


def small_config():
    cfg = petc.RunConfig.from_toml(
        "[design]\nmu = 0.3\ndelta = 0.1\na_margin = 1.0\n"
        "[simulation]\ngrid = 256\nhorizon = 2.0\n"
    )
    assert cfg.grid == 256
    return cfg


def test_reference_config_round_trips():
    cfg = petc.RunConfig.reference()
    assert cfg.grid == 2048 and cfg.mode == "petc"
    again = petc.RunConfig.from_toml(cfg.to_toml())
    assert again.to_toml() == cfg.to_toml()


def test_invalid_config_raises_value_error():
    with pytest.raises(ValueError):
        petc.RunConfig.from_toml("[plant]\nlambda1 = 1.0\nlambda2 = 1.0\nc1 = 1.0\nc2 = 1.5\nq = 1.2\nrho = 0.5\n")
    cfg = petc.RunConfig()
    with pytest.raises(ValueError):
        cfg.mode = "sometimes"


def test_run_and_modes(tmp_path):
    exp = petc.Experiment(small_config())
    assert exp.feasible and exp.tau > 10 * exp.dt
    consts = exp.constants()
    assert math.isclose(consts["tau"], exp.tau, rel_tol=1e-15)

    petc_run = exp.run()
    etc_run = exp.run(mode="etc")
    zero_c = exp.run(c=0.0)
    assert zero_c.event_times == etc_run.event_times
    assert petc_run.event_count <= etc_run.event_count
    assert min(petc_run.dwell_times) >= exp.tau - exp.dt

    trace = petc_run.trace()
    assert len(trace["t"]) == len(trace["m"])
    assert min(trace["m"]) >= 0.0 and min(trace["W"]) >= 0.0
    assert all(b >= v for b, v in zip(trace["barrier"], trace["Vhat"]))
    assert "V2" not in trace
    assert "V2" in exp.run(diagnostics=True, horizon=0.5).trace()

    petc_run.write(str(tmp_path), exp, decimate=10)
    assert (tmp_path / "trace.csv").read_text().startswith("t,y,U,Uc,")
    assert "events = " in petc_run.summary()


def test_unresolved_dwell_time_is_value_error():
    cfg = petc.RunConfig()
    cfg.grid = 32
    exp = petc.Experiment(cfg)
    with pytest.raises(ValueError, match="tau/10"):
        exp.run(horizon=0.1)
