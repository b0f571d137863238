import math

import pytest

from impulse_bands import (SimConfig, SimulationError, assemble_value,
                           policy_dominance, simulate_policy)
from impulse_bands.model import BandPolicy


def band(*pairs):
    return BandPolicy(bands=tuple(pairs), slope=0.0, intercept=0.0,
                      fixed_point_A=(0.0, 0.0))


def test_config_validation(bm_ctx):
    with pytest.raises(SimulationError):
        SimConfig(x0=0, dt=-1e-3, horizon=1.0, n_paths=10)
    with pytest.raises(SimulationError):
        SimConfig(x0=0, dt=1e-3, horizon=1.0, n_paths=0)
    # dt must resolve the discount
    with pytest.raises(SimulationError):
        simulate_policy(bm_ctx, band(), SimConfig(
            x0=0, dt=6.0, horizon=100.0, n_paths=10))
    # horizon must discount the tail in natural mode
    with pytest.raises(SimulationError):
        simulate_policy(bm_ctx, band(), SimConfig(
            x0=0, dt=1e-2, horizon=5.0, n_paths=10))


def test_empty_policy_zero_reward_is_exactly_zero(no_intervention_ctx):
    res = simulate_policy(no_intervention_ctx, band(), SimConfig(
        x0=0.5, dt=1e-2, horizon=70.0, n_paths=500, seed=1))
    assert res.estimate == 0.0
    assert res.std_error == 0.0


def test_seeded_determinism(bm_ctx, bm_scan):
    cfg = SimConfig(x0=0.0, dt=5e-3, horizon=70.0, n_paths=4000, seed=77)
    r1 = simulate_policy(bm_ctx, bm_scan.policy, cfg)
    r2 = simulate_policy(bm_ctx, bm_scan.policy, cfg)
    assert r1.estimate == r2.estimate
    assert r1.std_error == r2.std_error
    assert r1.generator == "pcg64"


def test_single_path_deterministic(bm_ctx, bm_scan):
    cfg = SimConfig(x0=0.0, dt=5e-3, horizon=70.0, n_paths=1, seed=5)
    r1 = simulate_policy(bm_ctx, bm_scan.policy, cfg)
    r2 = simulate_policy(bm_ctx, bm_scan.policy, cfg)
    assert r1.estimate == r2.estimate


def test_immediate_intervention_above_trigger(bm_ctx):
    # starting above b the policy jumps at t = 0, collecting K(x0, a)
    # undiscounted; the rest of the path behaves like a start at a
    pol = band((5.0, 12.0))
    K = bm_ctx.problem.intervention_reward
    above = simulate_policy(bm_ctx, pol, SimConfig(
        x0=14.0, dt=5e-3, horizon=70.0, n_paths=3000, seed=3))
    at_target = simulate_policy(bm_ctx, pol, SimConfig(
        x0=5.0, dt=5e-3, horizon=70.0, n_paths=3000, seed=4))
    expect = float(K(14.0, 5.0)) + at_target.estimate
    noise = 3 * math.hypot(above.std_error, at_target.std_error)
    assert abs(above.estimate - expect) <= noise


def test_thread_count_does_not_change_results(sine_ctx, sine_scan,
                                              monkeypatch):
    # chunk seeds are derived from the user seed, so the worker count can
    # only change scheduling, never numbers
    cfg = SimConfig(x0=1.0, dt=1e-2, horizon=500.0, n_paths=48000, seed=31)
    serial = simulate_policy(sine_ctx, sine_scan.policy, cfg)
    monkeypatch.setenv("IMPULSE_THREADS", "3")
    threaded = simulate_policy(sine_ctx, sine_scan.policy, cfg)
    assert threaded.estimate == serial.estimate
    assert threaded.std_error == serial.std_error


def test_identical_policies_tie_exactly(bm_ctx, bm_scan):
    cfg = SimConfig(x0=0.0, dt=5e-3, horizon=70.0, n_paths=2000, seed=11)
    rep = policy_dominance(bm_ctx, bm_scan.policy, bm_scan.policy, cfg)
    assert rep.diff_mean == 0.0
    assert rep.diff_std_error == 0.0
    assert rep.dominated


@pytest.mark.slow
def test_estimate_matches_value(bm_ctx, bm_scan):
    vrep = assemble_value(bm_ctx, bm_scan.policy)
    cfg = SimConfig(x0=0.0, dt=2e-3, horizon=70.0, n_paths=20000, seed=42)
    res = simulate_policy(bm_ctx, bm_scan.policy, cfg)
    assert abs(res.estimate - vrep.value(0.0)) <= 3 * res.std_error
    assert res.censored_fraction == 0.0


@pytest.mark.slow
def test_dt_halving_consistency(bm_ctx, bm_scan):
    base = dict(x0=0.0, horizon=70.0, n_paths=15000)
    r1 = simulate_policy(bm_ctx, bm_scan.policy,
                         SimConfig(dt=4e-3, seed=13, **base))
    r2 = simulate_policy(bm_ctx, bm_scan.policy,
                         SimConfig(dt=2e-3, seed=14, **base))
    pooled = math.hypot(r1.std_error, r2.std_error)
    assert abs(r1.estimate - r2.estimate) <= 2 * pooled


@pytest.mark.slow
def test_suboptimal_band_dominated(bm_ctx, bm_scan):
    cfg = SimConfig(x0=0.0, dt=4e-3, horizon=70.0, n_paths=8000, seed=21)
    rep = policy_dominance(bm_ctx, bm_scan.policy, band((4.0, 11.0)), cfg)
    assert rep.dominated


@pytest.mark.slow
def test_ou_estimate_bounded_by_value(ou_ctx, ou_scan):
    vrep = assemble_value(ou_ctx, ou_scan.policy)
    cfg = SimConfig(x0=0.4, dt=2e-3, horizon=135.0, n_paths=8000, seed=17)
    res = simulate_policy(ou_ctx, ou_scan.policy, cfg)
    v = vrep.value(0.4)
    assert res.estimate <= v + 3 * res.std_error
    assert abs(res.estimate - v) <= 3 * res.std_error


@pytest.mark.slow
def test_multiband_dominates_single_band(sine_ctx, sine_scan):
    # starting between bands, hopping down the ladder beats jumping
    # straight to the lowest target
    cfg = SimConfig(x0=10.0, dt=1e-2, horizon=4000.0, n_paths=1500, seed=29)
    single = band(sine_scan.policy.bands[0])
    rep = policy_dominance(sine_ctx, sine_scan.policy, single, cfg)
    assert rep.dominated
    assert rep.result_alt.estimate < rep.result_opt.estimate
    # both runs end by absorption, not by the horizon
    assert rep.result_opt.censored_fraction < 0.05
