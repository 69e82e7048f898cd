"""
Seeded closed-loop simulation of the cart-pendulum under LQG control.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Callable

import numpy as np
from more_itertools import first, last, locate

from common import ConfigurationError, FilterDivergence
from estimator import (
    FilterState,
    Gating,
    ScheduleMode,
    UpdateSchedule,
    predict,
    should_update,
    update,
)
from linearize import EquilibriumKind, LinearModel, analytic_jacobians, equilibrium
from model import (
    ModelParams,
    StateVec,
    Variant,
    aipoc_rates,
    consistent_accelerations,
    ipoc_rates,
    saturate,
)
from synthesis import GainSet, NoiseLevels, Profile, Weights, stationary_spread, synthesize

logger = logging.getLogger(__name__)

CART_LIMIT = 50.0
SETTLE_FLOOR = 0.01
# settling bands never get tighter than this many stationary standard deviations
NOISE_SIGMAS = 4.0


class Status(str, Enum):
    SETTLED = "settled"
    RUNNING = "running"
    CRASHED = "crashed"


@dataclass(frozen=True)
class ScenarioConfig:
    variant: Variant = Variant.AIPOC
    params: ModelParams = ModelParams()
    profile: Profile = Profile.OURS
    # Explicit Q and R multipliers; None keeps the profile's.
    q_scale: float | None = None
    r_scale: float | None = None
    noise: NoiseLevels = NoiseLevels()
    inject_noise: bool = True
    rho: float = 1.0
    schedule_mode: ScheduleMode = ScheduleMode.PERIODIC
    gating: Gating = Gating.ALL
    # scales the steady-state estimation covariance used as the filter prior
    p0: float = 1.0
    x0: tuple[float, ...] = (-1.0, 0.0, 0.1, 0.0)
    x_ref: float = 0.0
    kind: EquilibriumKind = EquilibriumKind.UPRIGHT
    T: float = 15.0
    dt: float = 0.005
    seed: int = 0
    band: float = 0.02

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError(f"must be > 0, got {self.dt}", key="sim.dt")
        if not self.T > 0:
            raise ConfigurationError(f"must be > 0, got {self.T}", key="sim.T")
        if abs(self.steps * self.dt - self.T) > 1e-9 * max(1.0, self.T):
            raise ConfigurationError(
                f"T = {self.T} is not a whole number of dt = {self.dt} steps", key="sim.T"
            )
        if len(self.x0) not in (4, 6):
            raise ConfigurationError(f"needs 4 or 6 entries, got {len(self.x0)}", key="sim.x0")
        if not 0 < self.band < 1:
            raise ConfigurationError(f"must be in (0, 1), got {self.band}", key="sim.band")
        for key in ("q_scale", "r_scale"):
            value = getattr(self, key)
            if value is not None and not value > 0:
                raise ConfigurationError(f"must be > 0, got {value}", key=f"weights.{key[0]}")
        if self.seed < 0:
            raise ConfigurationError(f"must be >= 0, got {self.seed}", key="experiment.seed")
        if not self.p0 > 0:
            raise ConfigurationError(f"must be > 0, got {self.p0}", key="filter.p0")
        if not 0 < self.rho <= 1:
            raise ConfigurationError(f"must be in (0, 1], got {self.rho}", key="filter.rho")

    @property
    def steps(self) -> int:
        return round(self.T / self.dt)

    @property
    def schedule(self) -> UpdateSchedule:
        return UpdateSchedule(self.rho, self.schedule_mode, self.gating)

    @property
    def weights(self) -> Weights:
        q, r = self.profile.scales
        q = q if self.q_scale is None else self.q_scale
        r = r if self.r_scale is None else self.r_scale
        W, V = self.noise.covariances(self.variant)
        return Weights(q * np.eye(self.variant.size), r * np.eye(self.variant.inputs), W, V)

    def model(self) -> LinearModel:
        eq = equilibrium(self.variant, self.kind, self.x_ref, self.params)
        return analytic_jacobians(self.variant, eq, self.params)

    def initial_state(self) -> StateVec:
        x0 = StateVec.of(*self.x0)
        if self.variant is Variant.IPOC:
            return x0.reduced()
        return consistent_accelerations(x0, self.params)

    def with_variant(self, variant: Variant) -> ScenarioConfig:
        return replace(self, variant=variant)


def rk4(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, dt: float) -> np.ndarray:
    """
    Classical Runge-Kutta step of x' = f(x).

    >>> round(float(rk4(lambda x: x, np.array([1.0]), 0.1)[0]), 12)
    1.105170833333
    """
    k1 = f(x)
    k2 = f(x + dt / 2 * k1)
    k3 = f(x + dt / 2 * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _rates(variant: Variant, p: ModelParams, u: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    if variant is Variant.IPOC:
        return lambda x: ipoc_rates(x, u[0], p)
    return lambda x: aipoc_rates(x, u[0], u[1], p)


def step(
    s: StateVec, u: float | tuple[float, float], p: ModelParams, dt: float
) -> StateVec:
    """
    One zero-order-hold integration step of the nonlinear plant.

    >>> p = ModelParams()
    >>> step(StateVec.of(0, 0, 0, 0), 0.0, p, 0.005).rounded()
    [0.0, 0.0, 0.0, 0.0]
    """
    if dt <= 0:
        raise ConfigurationError(f"must be > 0, got {dt}", key="dt")
    controls = np.zeros(s.variant.inputs)
    controls[: np.size(u)] = np.atleast_1d(u)
    return StateVec(s.variant, rk4(_rates(s.variant, p, controls), s.values, dt))


def psd_sqrt(X: np.ndarray) -> np.ndarray:
    eigenvalues, vectors = np.linalg.eigh((X + X.T) / 2)
    return (vectors * np.sqrt(np.clip(eigenvalues, 0, None))) @ vectors.T


def band_entries(error: np.ndarray, tolerance: float) -> tuple[int | None, int | None]:
    """
    Index of the first sample inside |e| <= tolerance and of the final entry
    after which the signal stays inside.

    >>> band_entries(np.array([1.0, 0.5, 0.01, 0.3, 0.01, 0.0]), 0.02)
    (2, 4)
    >>> band_entries(np.array([1.0, 0.0, 1.0]), 0.02)
    (1, None)
    """
    inside = np.abs(error) <= tolerance
    entered = first(locate(inside), None)
    if not inside[-1]:
        return entered, None
    return entered, last(locate(~inside), -1) + 1


@dataclass(frozen=True, eq=False)
class SimTrace:
    config: ScenarioConfig
    t: np.ndarray
    states: np.ndarray
    estimates: np.ndarray
    u_raw: np.ndarray
    u_sat: np.ndarray
    udot: np.ndarray
    applied: np.ndarray
    innovations: np.ndarray
    crash_index: int | None = None
    theta_e: float = 0.0
    channels: tuple[str, ...] = field(default=())
    # stationary spread of the position and angle errors under the injected noise
    noise_floor: tuple[float, float] = (0.0, 0.0)

    @property
    def variant(self) -> Variant:
        return self.config.variant

    @cached_property
    def errors(self) -> np.ndarray:
        """Position and angle errors, one column each."""
        v = self.variant
        return np.column_stack(
            [
                self.states[:, v.index("x")] - self.config.x_ref,
                self.states[:, v.theta_index] - self.theta_e,
            ]
        )

    @cached_property
    def band_floors(self) -> np.ndarray:
        return NOISE_SIGMAS * np.asarray(self.noise_floor)

    @cached_property
    def tolerances(self) -> np.ndarray:
        relative = self.config.band * np.maximum(np.abs(self.errors[0]), SETTLE_FLOOR)
        return np.maximum(relative, self.band_floors)

    @cached_property
    def settle_index(self) -> int | None:
        if self.crash_index is not None:
            return None
        finals = [band_entries(e, tol)[1] for e, tol in zip(self.errors.T, self.tolerances)]
        if None in finals:
            return None
        return max(finals)

    @property
    def status(self) -> Status:
        if self.crash_index is not None:
            return Status.CRASHED
        if self.settle_index is not None:
            return Status.SETTLED
        return Status.RUNNING

    def row_status(self) -> list[Status]:
        rows = [Status.RUNNING] * len(self.t)
        if self.crash_index is not None:
            rows[self.crash_index :] = [Status.CRASHED] * (len(self.t) - self.crash_index)
        elif self.settle_index is not None:
            rows[self.settle_index :] = [Status.SETTLED] * (len(self.t) - self.settle_index)
        return rows


def _crashed(x: np.ndarray, variant: Variant, theta_e: float) -> bool:
    if not np.all(np.isfinite(x)):
        return True
    return abs(x[variant.theta_index] - theta_e) > math.pi / 2 or abs(x[0]) > CART_LIMIT


def run(cfg: ScenarioConfig, gains: GainSet | None = None) -> SimTrace:
    """
    >>> quiet = ScenarioConfig(variant=Variant.IPOC, x0=(0, 0, 0, 0), inject_noise=False, T=0.1)
    >>> trace = run(quiet)
    >>> trace.status, len(trace.t), bool(np.all(trace.states == 0))
    (<Status.SETTLED: 'settled'>, 21, True)
    """
    variant, p, dt, N = cfg.variant, cfg.params, cfg.dt, cfg.steps
    lm = cfg.model()
    weights = cfg.weights
    gains = gains or synthesize(lm, weights)

    x_e = lm.equilibrium.x_e.values
    offset = lm.equilibrium.setpoint.values - x_e
    theta_e = float(x_e[variant.theta_index])
    channels = lm.mode.channels
    n, m = lm.n, lm.outputs

    process, measurement, dropouts = (
        np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(3)
    )
    noise = cfg.noise if cfg.inject_noise else cfg.noise.silent()
    W_noise, V_noise = noise.covariances(variant, lm.mode)
    process_kicks = process.standard_normal((N, n)) @ psd_sqrt(W_noise).T / math.sqrt(dt)
    sensor_noise = measurement.standard_normal((N + 1, m)) @ psd_sqrt(V_noise).T

    t = np.arange(N + 1) * dt
    states = np.zeros((N + 1, n))
    estimates = np.zeros((N + 1, n))
    u_raw, u_sat, udot = np.zeros(N + 1), np.zeros(N + 1), np.zeros(N + 1)
    applied = np.zeros((N + 1, m), dtype=bool)
    innovations = np.zeros((N + 1, m))

    spread = stationary_spread(lm, gains, W_noise, V_noise, dt)
    noise_floor = (float(spread[variant.index("x")]), float(spread[variant.theta_index]))

    x = cfg.initial_state().values.copy()
    controls = np.zeros(variant.inputs)
    crash_index = None
    previous = 0.0

    for k in range(N + 1):
        try:
            y = lm.C @ (x - x_e) + sensor_noise[k]
            if k == 0:
                # every sensor is read once before the loop closes
                mask = np.ones(m, dtype=bool)
                innovations[k] = y
                fs = FilterState.seeded(lm, cfg.schedule, y, cfg.p0 * gains.P, weights.V)
            else:
                fs = predict(fs, controls, lm, weights.W, dt)
                mask = should_update(cfg.schedule, k, dropouts, channels)
                innovations[k, mask] = (y - lm.C @ fs.xhat)[mask]
                fs = update(fs, y, lm, weights.V, mask)
        except FilterDivergence as e:
            logger.debug("seed %d: filter diverged at step %d: %s", cfg.seed, k, e)
            crash_index = k
            break

        command = -gains.K @ (fs.xhat - offset)
        u_raw[k] = command[0]
        u_sat[k] = saturate(float(command[0]), p)
        controls[0] = u_sat[k]
        if variant is Variant.AIPOC:
            udot[k] = controls[1] = (u_sat[k] - previous) / dt
        previous = u_sat[k]

        states[k], estimates[k], applied[k] = x, fs.xhat + x_e, mask
        if k == N:
            break

        kick = process_kicks[k]
        plant = _rates(variant, p, controls)
        x_next = rk4(lambda s: plant(s) + kick, x, dt)
        if _crashed(x_next, variant, theta_e):
            logger.debug("seed %d: crashed at t = %.3f", cfg.seed, (k + 1) * dt)
            crash_index = k + 1
            if np.all(np.isfinite(x_next)):
                x = x_next
            break
        x = x_next

    if crash_index is not None:
        states[crash_index:] = x
        estimates[crash_index:] = estimates[max(crash_index - 1, 0)]
        u_raw[crash_index:] = u_sat[crash_index:] = udot[crash_index:] = 0.0
        applied[crash_index:] = False
        innovations[crash_index:] = 0.0

    return SimTrace(
        config=cfg,
        t=t,
        states=states,
        estimates=estimates,
        u_raw=u_raw,
        u_sat=u_sat,
        udot=udot,
        applied=applied,
        innovations=innovations,
        crash_index=crash_index,
        theta_e=theta_e,
        channels=channels,
        noise_floor=noise_floor,
    )


def run_pair(cfg: ScenarioConfig) -> tuple[SimTrace, SimTrace]:
    """Both variants from the same seed, initial configuration and profile."""
    return run(cfg.with_variant(Variant.IPOC)), run(cfg.with_variant(Variant.AIPOC))
