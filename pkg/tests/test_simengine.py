import math
from dataclasses import replace

import numpy as np
import pytest

from common import ConfigurationError
from estimator import Gating, ScheduleMode
from linearize import EquilibriumKind
from model import ModelParams, StateVec, Variant
from simengine import ScenarioConfig, Status, band_entries, rk4, run, run_pair, step
from synthesis import separation_spectrum, synthesize

SHORT = ScenarioConfig(T=1.0, x0=(-0.5, 0.0, 0.05, 0.0))
QUIET = ScenarioConfig(variant=Variant.IPOC, inject_noise=False)


def test_same_seed_same_trace():
    a, b = run(SHORT), run(SHORT)
    for name in ("states", "estimates", "u_raw", "u_sat", "udot", "applied", "innovations"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_seed_changes_the_noise():
    a, b = run(SHORT), run(replace(SHORT, seed=1))
    assert not np.array_equal(a.states, b.states)


def test_trace_shape():
    trace = run(replace(SHORT, variant=Variant.IPOC))
    assert trace.t.shape == (201,)
    assert trace.states.shape == (201, 4)
    assert trace.applied.shape == (201, 2)
    assert trace.t[-1] == pytest.approx(1.0)


@pytest.mark.parametrize("variant", list(Variant))
def test_noise_free_equilibrium_is_kept(variant):
    cfg = ScenarioConfig(variant=variant, x0=(0, 0, 0, 0), inject_noise=False, T=1.0)
    trace = run(cfg)
    assert np.all(trace.states == 0)
    assert np.all(trace.u_sat == 0)
    assert trace.status is Status.SETTLED


def test_bottom_equilibrium_is_kept():
    cfg = replace(
        QUIET, x0=(0, 0, math.pi, 0), kind=EquilibriumKind.BOTTOM, T=1.0
    )
    trace = run(cfg)
    assert np.allclose(trace.states[:, 2], math.pi, atol=1e-9)
    assert trace.theta_e == math.pi


@pytest.mark.parametrize("variant", list(Variant))
def test_saturation_bound_is_never_violated(variant):
    cfg = ScenarioConfig(variant=variant, params=ModelParams(u_max=2.0), T=2.0)
    trace = run(cfg)
    assert np.abs(trace.u_sat).max() <= 2.0
    assert np.abs(trace.u_raw).max() > 2.0


def test_crash_pads_the_trace():
    cfg = replace(QUIET, x0=(0, 0, 1.2, 2.0), params=ModelParams(u_max=0.5), T=3.0)
    trace = run(cfg)
    assert trace.status is Status.CRASHED
    k = trace.crash_index
    assert np.all(trace.states[k:] == trace.states[k])
    assert np.all(trace.u_sat[k:] == 0)
    assert trace.row_status()[k:] == [Status.CRASHED] * (len(trace.t) - k)


def test_short_run_is_still_running():
    trace = run(replace(QUIET, T=0.5))
    assert trace.status is Status.RUNNING
    assert set(trace.row_status()) == {Status.RUNNING}


def test_nominal_noise_free_run_recovers():
    trace = run(QUIET)
    assert trace.status is not Status.CRASHED
    x_final, theta_final = np.abs(trace.errors[-1])
    assert x_final < 0.1
    assert theta_final < 0.01


def test_update_schedule_reaches_the_trace():
    trace = run(replace(QUIET, rho=0.2, T=1.0))
    assert trace.applied.all(axis=1).sum() == 41

    trace = run(replace(SHORT, rho=0.2, gating=Gating.POSITION))
    assert trace.applied[:, 0].sum() == 41
    assert trace.applied[:, 1:].all()


def test_bernoulli_schedule_is_seeded():
    cfg = replace(SHORT, rho=0.3, schedule_mode=ScheduleMode.BERNOULLI)
    assert np.array_equal(run(cfg).applied, run(cfg).applied)


def test_udot_is_the_backward_difference_of_the_applied_input():
    trace = run(SHORT)
    dt = SHORT.dt
    assert trace.udot[0] == pytest.approx(trace.u_sat[0] / dt)
    assert np.allclose(trace.udot[1:], np.diff(trace.u_sat) / dt)


def test_pair_shares_seed_and_start():
    plain, augmented = run_pair(replace(SHORT, inject_noise=False))
    assert plain.variant is Variant.IPOC and augmented.variant is Variant.AIPOC
    assert np.array_equal(plain.states[0], augmented.states[0][[0, 1, 3, 4]])


def test_rk4_is_fourth_order():
    def error(dt: float) -> float:
        x = np.array([1.0])
        for _ in range(round(1 / dt)):
            x = rk4(lambda v: -v, x, dt)
        return abs(float(x[0]) - math.exp(-1))

    assert 14 < error(0.1) / error(0.05) < 18


def test_small_swing_period_about_the_bottom():
    p = ModelParams(delta=0.0)
    dt = 0.001
    s = StateVec.of(0.0, 0.0, math.pi + 0.01, 0.0)
    crossings, previous = [], s["theta"] - math.pi
    for k in range(1, 10_001):
        s = step(s, 0.0, p, dt)
        current = s["theta"] - math.pi
        if previous < 0 <= current:
            crossings.append((k - 1 + previous / (previous - current)) * dt)
        previous = current

    expected = 2 * math.pi * math.sqrt(p.M * p.ell / ((p.M + p.m) * p.g))
    assert np.diff(crossings).mean() == pytest.approx(expected, abs=1e-3)


def test_band_entries():
    assert band_entries(np.array([1.0, 0.0, 0.0]), 0.1) == (1, 1)
    assert band_entries(np.zeros(4), 0.1) == (0, 0)
    assert band_entries(np.ones(4), 0.1) == (None, None)


@pytest.mark.parametrize(
    "changes",
    [
        {"dt": 0.0},
        {"T": 1.0001},
        {"x0": (0.0, 0.0, 0.0)},
        {"rho": 0.0},
        {"band": 1.5},
        {"q_scale": -1.0},
        {"seed": -1},
    ],
)
def test_scenario_validation(changes):
    with pytest.raises(ConfigurationError):
        ScenarioConfig(**changes)


@pytest.mark.parametrize("variant", list(Variant))
def test_noise_free_estimate_locks_on(variant):
    cfg = ScenarioConfig(variant=variant, x0=(-0.2, 0.0, 0.02, 0.0), inject_noise=False, T=3.0)
    trace = run(cfg)
    late = trace.t >= 2.0
    error = np.linalg.norm(trace.states[late] - trace.estimates[late], axis=1)
    assert error.max() < 1e-3


def test_estimation_error_decays_at_the_observer_rate():
    cfg = replace(QUIET, x0=(0.0, 0.2, 0.0, 0.0), T=2.0)
    trace = run(cfg)
    lm = cfg.model()
    _, observer = separation_spectrum(lm, synthesize(lm, cfg.weights))
    slowest = float(np.abs(observer.real).min())

    window = (trace.t >= 0.25) & (trace.t <= 1.5)
    error = np.linalg.norm(trace.states[window] - trace.estimates[window], axis=1)
    rate = -np.polyfit(trace.t[window], np.log(error), 1)[0]
    assert rate >= slowest / 2


def test_noise_floor_follows_the_injected_noise():
    quiet = run(replace(SHORT, inject_noise=False))
    assert quiet.noise_floor == (0.0, 0.0)
    assert np.all(quiet.tolerances == SHORT.band * np.abs(quiet.errors[0]))

    noisy = run(SHORT)
    assert min(noisy.noise_floor) > 0
    assert np.all(noisy.tolerances >= noisy.band_floors)


@pytest.mark.parametrize("variant", list(Variant))
def test_first_reading_seeds_the_estimate(variant):
    cfg = ScenarioConfig(variant=variant, inject_noise=False, T=0.1)
    trace = run(cfg)
    v = variant
    assert trace.estimates[0, v.index("x")] == pytest.approx(cfg.x0[0])
    assert trace.estimates[0, v.theta_index] == pytest.approx(cfg.x0[2], rel=0.02)
    assert trace.applied[0].all()
