import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from common import DomainError, NumericalFault, SingularityError
from model import (
    SHARED_INDICES,
    FlatOutput,
    ModelParams,
    StateVec,
    Variant,
    aipoc_derivative,
    aipoc_rates,
    consistent_accelerations,
    flat_accelerations,
    flat_forward,
    flat_inverse,
    ipoc_derivative,
    ipoc_rates,
    mechanical_energy,
    saturate,
)
from simengine import rk4, step

P = ModelParams()

positions = st.floats(-5, 5)
velocities = st.floats(-3, 3)
angles = st.floats(-1.4, 1.4)
controls = st.floats(-30, 30)


@given(positions, velocities, st.floats(-20, 20), angles, velocities, st.floats(-20, 20), controls)
def test_augmented_rows_match_the_plain_model(x, xdot, xddot, theta, thetadot, thetaddot, u):
    augmented = aipoc_rates(np.array([x, xdot, xddot, theta, thetadot, thetaddot]), u, 0.0, P)
    plain = ipoc_rates(np.array([x, xdot, theta, thetadot]), u, P)
    assert np.allclose(augmented[list(SHARED_INDICES)], plain, rtol=1e-12, atol=1e-12)


def test_equilibria_are_fixed_points():
    assert aipoc_derivative(StateVec.zeros(Variant.AIPOC), 0.0, P).rounded() == [0.0] * 6
    bottom = ipoc_rates(np.array([0.0, 0.0, math.pi, 0.0]), 0.0, P)
    assert np.allclose(bottom, 0.0, atol=1e-12)


def test_jerk_rows_are_time_derivatives_of_the_accelerations():
    dt = 0.001
    u = lambda t: 2 * math.sin(t)
    udot = lambda t: 2 * math.cos(t)

    def augmented(z: np.ndarray) -> np.ndarray:
        return np.append(ipoc_rates(z[:4], u(z[4]), P), 1.0)

    z = np.array([0.0, 0.5, 0.3, -0.2, 0.0])
    path = [z]
    for _ in range(500):
        z = rk4(augmented, z, dt)
        path.append(z)

    accelerations = np.array([ipoc_rates(z[:4], u(z[4]), P)[[1, 3]] for z in path])
    numeric = (accelerations[2:] - accelerations[:-2]) / (2 * dt)
    for z, expected in zip(path[1:-1], numeric):
        s = consistent_accelerations(StateVec.of(*z[:4]), P, u(z[4]))
        jerk = aipoc_rates(s.values, u(z[4]), udot(z[4]), P)[[2, 5]]
        assert np.allclose(jerk, expected, rtol=1e-4, atol=1e-4)


def test_energy_is_conserved_without_input_or_friction():
    p = ModelParams(delta=0.0)
    s = StateVec.of(0.0, 0.3, math.pi - 0.4, 0.2)
    start = mechanical_energy(s, p)
    for _ in range(2000):
        s = step(s, 0.0, p, 0.005)
    assert mechanical_energy(s, p) == pytest.approx(start, rel=1e-7)


def test_checked_derivatives_reject_bad_input():
    with pytest.raises(NumericalFault):
        ipoc_derivative(StateVec.of(0, 0, 0, 0), math.nan, P)
    with pytest.raises(NumericalFault):
        StateVec.of(0, math.inf, 0, 0)
    with pytest.raises(ValueError):
        ipoc_derivative(StateVec.zeros(Variant.AIPOC), 0.0, P)


@settings(max_examples=1000)
@given(positions, velocities, angles, velocities)
def test_flat_output_round_trip(x, xdot, theta, thetadot):
    s = StateVec.of(x, xdot, theta, thetadot)
    back = flat_inverse(flat_forward(s, P), P)
    assert np.allclose(back.values, s.values, rtol=0, atol=1e-10)


@given(angles, velocities, st.floats(-20, 20))
def test_flat_angular_acceleration_round_trip(theta, thetadot, thetaddot):
    s = StateVec.of(0.0, 0.0, 0.0, theta, thetadot, thetaddot)
    _, recovered = flat_accelerations(flat_forward(s, P), P)
    assert recovered == pytest.approx(thetaddot, rel=1e-9, abs=1e-9)


def test_flat_output_domain():
    assert flat_forward(StateVec.of(0, 0, -math.pi / 2, 0), P).eps_d2 == -P.g
    with pytest.raises(DomainError):
        flat_forward(StateVec.of(0, 0, 2.0, 0), P)
    with pytest.raises(SingularityError):
        flat_inverse(FlatOutput(0, 0, -P.g, 0), P)
    with pytest.raises(SingularityError):
        flat_accelerations(FlatOutput(0, 0, 1.5 * P.g, 0), P)


@given(st.floats(allow_nan=False, allow_infinity=False), st.floats(0.1, 100))
def test_saturation_bound(u, u_max):
    p = ModelParams(u_max=u_max)
    clipped = saturate(u, p)
    assert abs(clipped) <= u_max
    if abs(u) <= u_max:
        assert clipped == u


def test_consistent_accelerations_keep_the_shared_entries():
    s = StateVec.of(0.4, -1.0, 0.2, 0.5)
    padded = consistent_accelerations(s, P, u=3.0)
    assert padded.variant is Variant.AIPOC
    assert padded.reduced() == s
    assert padded["xddot"] == pytest.approx(ipoc_rates(s.values, 3.0, P)[1])
