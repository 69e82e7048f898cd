import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from analysis import (
    SAMPLE_SPACE_AREA,
    Criterion,
    Sample,
    ScanThresholds,
    StabilityMap,
    convex_hull,
    cross,
    criterion_reports,
    evaluate,
    hull_and_rates,
    integrals,
    normalize_tgo,
    saturation_percent,
    shoelace_area,
    stability_scan,
    transient,
)
from common import ConfigurationError
from model import Variant
from simengine import ScenarioConfig, Status, run

T = np.linspace(0, 15, 3001)


def sample(xdot, thetadot, crashed=False, x=0.0, theta=0.0, u_sat=0.0, effort=10.0):
    return Sample(xdot, thetadot, crashed, x, theta, u_sat, effort)


def test_exponential_decay():
    m = transient(T, 2 * np.exp(-T))
    assert m.t_p == 0.0
    assert abs(m.t_s - math.log(50)) <= 0.005
    assert m.t_tr == m.t_s

    iae, itae, e_ss = integrals(T, np.exp(-T))
    assert iae == pytest.approx(1 - math.exp(-15), abs=1e-5)
    assert itae == pytest.approx(1 - 16 * math.exp(-15), abs=1e-5)
    assert e_ss == pytest.approx(math.exp(-15))


def test_oscillation_enters_before_it_settles():
    e = np.exp(-0.3 * T) * np.cos(2 * T)
    m = transient(T, e)
    assert m.t_tr < m.t_s


@settings(max_examples=100)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=300), st.data())
def test_quadrature_is_additive(values, data):
    e = np.array(values)
    t = np.linspace(0, 15, len(e))
    split = data.draw(st.integers(1, len(e) - 2))
    whole = integrals(t, e).iae
    parts = integrals(t[: split + 1], e[: split + 1]).iae + integrals(t[split:], e[split:]).iae
    assert whole == pytest.approx(parts, abs=1e-9)
    assert whole == pytest.approx(trapezoid(np.abs(e), t), abs=1e-9)


def test_saturation_percent_counts_bound_hits():
    assert saturation_percent(np.array([2.0, -2.0, 1.0, 0.0]), 2.0) == 50.0
    assert saturation_percent(np.zeros(10), 2.0) == 0.0


coordinates = st.integers(-100, 100)
points = st.lists(st.tuples(coordinates, coordinates), min_size=3, max_size=40)


@given(points)
def test_hull_is_convex_and_contains_every_point(pts):
    hull = convex_hull(pts)
    if len(hull) < 3:
        return
    edges = list(zip(hull, [*hull[1:], hull[0]]))
    for a, b in edges:
        assert all(cross(a, b, p) >= -1e-9 for p in pts)
    for (a, b), (_, c) in zip(edges, [*edges[1:], edges[0]]):
        assert cross(a, b, c) > 0
    assert shoelace_area(hull) > 0


def test_unit_square_and_degenerate_hulls():
    square = convex_hull([(0, 0), (2, 0), (2, 2), (0, 2), (1, 1), (1, 0)])
    assert shoelace_area(square) == 4.0
    assert shoelace_area(convex_hull([(0, 0), (1, 1), (3, 3)])) == 0.0
    assert convex_hull([(1, 1)]) == [(1, 1)]


def test_cells_cover_the_sample_space():
    smap = StabilityMap(10, ())
    assert smap.cell(-10.0, -math.pi) == (0, 0)
    assert smap.cell(9.999, 3.14) == (9, 9)
    left, right, bottom, top = smap.cell_bounds(9, 9)
    assert right == pytest.approx(10.0) and top == pytest.approx(math.pi)


def centre(i, j):
    left, right, bottom, top = StabilityMap(10, ()).cell_bounds(i, j)
    return (left + right) / 2, (bottom + top) / 2


def block_map():
    stable = [sample(*centre(i, j)) for i in range(3, 6) for j in range(3, 6)]
    lonely = [sample(*centre(9, 0))]
    crashed = [sample(*centre(0, 9), crashed=True)]
    drifting = [sample(*centre(4, 4), x=2.0)]
    return StabilityMap(10, tuple(stable + lonely + crashed + drifting))


def test_tally_crash_and_failure_rates():
    smap = block_map()
    tally = smap.tally()
    assert tally[3, 3] == 1 and tally[4, 4] == 0 and tally[0, 9] == -1
    assert smap.crash_rate() == pytest.approx(1 / 12)
    assert smap.failure_rate() == pytest.approx(2 / 12)
    assert smap.failure_rate(Criterion.ANGLE) == pytest.approx(1 / 12)
    assert smap.tally(Criterion.ANGLE)[4, 4] == 2


def test_hull_drops_isolated_cells():
    smap = block_map()
    report = hull_and_rates(smap)
    width, height = 2.0, 2 * math.pi / 10
    # the centre cell nets to zero, which leaves a ring of eight around it
    assert report.cells == 8
    assert report.area == pytest.approx(4 * width * height)
    assert report.crash_rate == pytest.approx(1 / 12)
    assert report.failure_rate == pytest.approx(2 / 12)
    assert report.area_ratio == pytest.approx(report.area / SAMPLE_SPACE_AREA)

    angle = hull_and_rates(smap, Criterion.ANGLE)
    assert angle.cells == 9
    assert angle.area == pytest.approx(report.area)

    reports = criterion_reports(smap)
    assert set(reports) == {"combined", *(c.value for c in Criterion)}


def test_hull_wraps_stable_samples_only():
    smap = block_map()
    report = hull_and_rates(smap)
    stable_points = {(s.xdot0, s.thetadot0) for s in smap.samples if smap.stable(s)}
    assert set(report.hull) <= stable_points


def test_two_stable_cells_have_no_area():
    smap = StabilityMap(10, (sample(*centre(4, 4)), sample(*centre(5, 4))))
    report = hull_and_rates(smap)
    assert report.cells == 2
    assert report.area == 0.0 and report.area_ratio == 0.0


def test_noise_floor_widens_the_settling_band():
    decay = np.exp(-T)
    assert transient(T, decay).t_s == pytest.approx(math.log(50), abs=0.01)
    assert transient(T, decay, floor=0.1).t_s == pytest.approx(math.log(10), abs=0.01)
    assert transient(T, decay, floor=1e-6).t_s == transient(T, decay).t_s


def test_thresholds_are_positive():
    with pytest.raises(ConfigurationError):
        ScanThresholds(x_tol=0.0)


@pytest.fixture(scope="module")
def quick():
    return ScenarioConfig(variant=Variant.IPOC, inject_noise=False, T=1.0)


def test_fixed_point_scan(quick):
    smap = stability_scan(quick, 2, resolution=4, workers=1, points=[(0.0, 0.0), (0.5, -0.2)])
    assert len(smap.samples) == 2
    first = smap.samples[0]
    assert not first.crashed and first.x_final == 0.0 and first.theta_final == 0.0
    assert smap.samples[1].xdot0 == 0.5


def test_random_scan_is_reproducible(quick):
    a = stability_scan(quick, 3, resolution=4, seed=5, workers=1)
    b = stability_scan(quick, 3, resolution=4, seed=5, workers=1)
    assert a.samples == b.samples
    for s in a.samples:
        assert -10 <= s.xdot0 <= 10 and -math.pi <= s.thetadot0 <= math.pi


def test_scan_validates_its_arguments(quick):
    with pytest.raises(ConfigurationError):
        stability_scan(quick, 0)
    with pytest.raises(ConfigurationError):
        stability_scan(quick, 1, resolution=0)


def test_evaluate_a_trace():
    trace = run(ScenarioConfig(variant=Variant.IPOC, inject_noise=False, T=5.0))
    report = evaluate(trace)
    assert report.status is trace.status
    assert report.position.iae > 0 and report.angle.iae > 0
    assert report.undershoot >= 0
    assert 0 <= report.u_sat_pct <= 100
    assert report.channel("angle") is report.angle

    normalized = normalize_tgo(trace)
    assert normalized.tgo[0] == 1.0 and normalized.tgo[-1] == 0.0
    assert normalized.normalized == (True, True)
    assert np.allclose(normalized.values[0], 1.0)


def test_settled_equilibrium_report():
    trace = run(ScenarioConfig(variant=Variant.IPOC, x0=(0, 0, 0, 0), inject_noise=False, T=1.0))
    report = evaluate(trace)
    assert report.settled and report.status is Status.SETTLED
    assert report.position.t_s == 0.0 and report.U_tot == 0.0
    assert normalize_tgo(trace).normalized == (False, False)
    assert report.undershoot == 0.0
