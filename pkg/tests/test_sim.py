import numpy as np
import pytest

from quadmpc.controller import make_config
from quadmpc.model import quadrotor_model
from quadmpc.scenario import bundled_path, load_scenario
from quadmpc.sim import (ScenarioConfig, certify_stability, compare_mpc_lqr, controller_config,
                         is_settled, peak_input, run_closed_loop, settling_step, settling_time,
                         sweep_weights, value_decrease_violations)


def scenario(name):
    return load_scenario(bundled_path(name)).config


@pytest.fixture(scope="module")
def regulation():
    return run_closed_loop(scenario("regulation"))


def test_regulation_settles_without_infeasibility(regulation):
    assert regulation.infeasible_steps == 0
    assert not regulation.diverged
    assert is_settled(regulation)
    assert np.max(np.abs(regulation.x[-1])) < 1e-3


def test_regulation_respects_constraints(regulation):
    cfg = controller_config(scenario("regulation"))
    assert np.all(cfg.X.contains(regulation.x, tol=1e-6))
    assert np.all(cfg.U.contains(regulation.u_applied, tol=1e-6))


def test_value_function_decreases(regulation):
    assert value_decrease_violations(regulation) == []


def test_runs_are_deterministic():
    s = scenario("hover").with_(meas_noise_std=0.01, proc_noise_std=0.001, seed=3,
                                feedback="output", y_ref=[0.0] * 6, xhat0=[0.0] * 13)
    a, b = run_closed_loop(s), run_closed_loop(s)
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.u, b.u)
    c = run_closed_loop(s.with_(seed=4))
    assert not np.array_equal(a.x, c.x)


def test_hover_stays_at_origin():
    lg = run_closed_loop(scenario("hover"))
    assert np.max(np.abs(lg.x)) <= 1e-8
    assert settling_step(lg) == 0


def test_same_scaling_of_both_weights_gives_same_inputs():
    s = scenario("weights").with_(steps=60)
    a = run_closed_loop(s)
    b = run_closed_loop(s.with_(q_scale=10.0, r_scale=10.0))
    assert np.max(np.abs(a.u - b.u)) <= 1e-6


@pytest.mark.slow
def test_heavier_state_weight_does_not_slow_settling():
    _, rows = sweep_weights(scenario("weights"), q_scales=[1.0, 10.0])
    assert rows[1]["settling_time"] <= rows[0]["settling_time"]


@pytest.mark.slow
def test_heavier_input_weight_does_not_raise_peak_input():
    _, rows = sweep_weights(scenario("weights"), r_scales=[1.0, 10.0])
    assert rows[1]["peak_u"] <= rows[0]["peak_u"] + 1e-9


def test_lqr_matches_mpc_inside_terminal_set():
    mpc, lqr = compare_mpc_lqr(scenario("lqr_inside"))
    assert np.max(np.abs(mpc.x - lqr.x)) <= 1e-6
    assert np.max(np.abs(mpc.u - lqr.u)) <= 1e-6


def test_certificate_passes_for_lqr_terminal_gain():
    m = quadrotor_model()
    cfg = make_config(m, N=10)
    rep = certify_stability(m, cfg, n_samples=300)
    assert rep.passed
    assert rep.controllability_rank == 12
    assert rep.max_decrease_residual <= 1e-7


def test_certificate_fails_for_zero_gain():
    m = quadrotor_model()
    cfg = make_config(m, N=10)
    rep = certify_stability(m, cfg, n_samples=300, K=np.zeros((4, 12)))
    assert not rep.passed
    assert rep.invariance_failures > 0 or rep.min_decrease_margin < -1e-7


def test_settling_metrics_are_consistent(regulation):
    k = settling_step(regulation)
    assert k is not None and k > 0
    assert settling_time(regulation) == pytest.approx(k * regulation.t[1])
    assert peak_input(regulation) > 0


def test_scenario_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(name="bad", x0=[0.0] * 11)
    with pytest.raises(ValueError):
        ScenarioConfig(name="bad", x0=[0.0] * 12, plant="quantum")
