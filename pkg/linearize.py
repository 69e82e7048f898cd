"""
Linearisation of the cart-pendulum about its equilibria.

The analytic Jacobians below are the exact derivatives of the rates in `model`;
`numeric_jacobian` is kept as an independent check on them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, TypeAlias

import numpy as np

from common import ConfigurationError, require_finite
from model import ModelParams, StateVec, Variant, aipoc_rates, ipoc_rates

Rates: TypeAlias = Callable[[np.ndarray, np.ndarray], np.ndarray]


class EquilibriumKind(str, Enum):
    UPRIGHT = "upright"
    BOTTOM = "bottom"

    @property
    def theta(self) -> float:
        return 0.0 if self is EquilibriumKind.UPRIGHT else math.pi

    @property
    def sign(self) -> float:
        """cos(theta) at the equilibrium, which multiplies every angular row."""
        return 1.0 if self is EquilibriumKind.UPRIGHT else -1.0


class MeasurementMode(str, Enum):
    FULL = "full"
    INERTIAL = "inertial"

    @property
    def labels(self) -> tuple[str, ...]:
        if self is MeasurementMode.FULL:
            return ("x", "theta")
        return ("x", "xddot", "thetadot")

    @property
    def channels(self) -> tuple[str, ...]:
        """Sensor behind each measured row."""
        if self is MeasurementMode.FULL:
            return ("position", "encoder")
        return ("position", "accelerometer", "gyroscope")

    @classmethod
    def for_variant(cls, variant: Variant) -> MeasurementMode:
        return cls.FULL if variant is Variant.IPOC else cls.INERTIAL


def plant_rates(variant: Variant, p: ModelParams) -> Rates:
    """The nonlinear right-hand side f(x, u) as a plain array function."""
    if variant is Variant.IPOC:
        return lambda x, u: ipoc_rates(x, float(u[0]), p)
    return lambda x, u: aipoc_rates(x, float(u[0]), float(u[1]), p)


@dataclass(frozen=True, eq=False)
class Equilibrium:
    """
    >>> eq = equilibrium(Variant.AIPOC, EquilibriumKind.BOTTOM, x_ref=1.5)
    >>> eq.x_e["theta"] == math.pi, eq.u_e.tolist()
    (True, [0.0, 0.0])
    >>> eq.setpoint.rounded()
    [1.5, 0.0, 0.0, 3.141592654, 0.0, 0.0]
    """

    x_e: StateVec
    u_e: np.ndarray
    kind: EquilibriumKind
    x_ref: float = 0.0

    @property
    def variant(self) -> Variant:
        return self.x_e.variant

    @property
    def setpoint(self) -> StateVec:
        values = self.x_e.values.copy()
        values[0] = self.x_ref
        return StateVec(self.variant, values)


def equilibrium(
    variant: Variant,
    kind: EquilibriumKind = EquilibriumKind.UPRIGHT,
    x_ref: float = 0.0,
    p: ModelParams | None = None,
) -> Equilibrium:
    values = np.zeros(variant.size)
    values[variant.theta_index] = kind.theta
    x_e = StateVec(variant, values)
    u_e = np.zeros(variant.inputs)

    rates = plant_rates(variant, p or ModelParams())(x_e.values, u_e)
    assert np.allclose(rates, 0.0, atol=1e-12), rates
    return Equilibrium(x_e, u_e, kind, x_ref)


def measurement_matrix(variant: Variant, mode: MeasurementMode) -> np.ndarray:
    """
    >>> measurement_matrix(Variant.IPOC, MeasurementMode.FULL).astype(int).tolist()
    [[1, 0, 0, 0], [0, 0, 1, 0]]
    >>> measurement_matrix(Variant.AIPOC, MeasurementMode.INERTIAL).nonzero()[1].tolist()
    [0, 2, 4]
    >>> measurement_matrix(Variant.IPOC, MeasurementMode.INERTIAL)  # doctest: +IGNORE_EXCEPTION_DETAIL
    Traceback (most recent call last):
    ConfigurationError: ipoc cannot be measured in inertial mode
    """
    if mode is not MeasurementMode.for_variant(variant):
        raise ConfigurationError(f"{variant.value} cannot be measured in {mode.value} mode")

    C = np.zeros((len(mode.labels), variant.size))
    for row, label in enumerate(mode.labels):
        C[row, variant.index(label)] = 1.0
    return C


@dataclass(frozen=True, eq=False)
class LinearModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    equilibrium: Equilibrium
    mode: MeasurementMode = MeasurementMode.FULL

    def __post_init__(self):
        n = self.A.shape[0]
        if self.A.shape != (n, n) or n != self.variant.size:
            raise ConfigurationError(f"A has shape {self.A.shape}, expected {n}x{n}")
        if self.B.shape != (n, self.variant.inputs):
            raise ConfigurationError(f"B has shape {self.B.shape} for {n} states")
        if self.C.ndim != 2 or self.C.shape[1] != n:
            raise ConfigurationError(f"C has shape {self.C.shape} for {n} states")
        for matrix in (self.A, self.B, self.C):
            require_finite(matrix, "Jacobian")

    @property
    def variant(self) -> Variant:
        return self.equilibrium.variant

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def k(self) -> int:
        return self.B.shape[1]

    @property
    def outputs(self) -> int:
        return self.C.shape[0]

    def with_measurement(self, C: np.ndarray) -> LinearModel:
        return LinearModel(self.A, self.B, C, self.equilibrium, self.mode)


def analytic_jacobians(
    variant: Variant,
    eq: Equilibrium,
    p: ModelParams,
    mode: MeasurementMode | None = None,
) -> LinearModel:
    """
    >>> p = ModelParams()
    >>> lm = analytic_jacobians(Variant.AIPOC, equilibrium(Variant.AIPOC), p)
    >>> np.round(np.abs([lm.A[1, 3], lm.A[4, 3], lm.B[1, 0], lm.B[4, 0]]), 9).tolist()
    [1.962, 9.4176, 0.2, 0.16]
    >>> bool(np.all(lm.A[:, 0] == 0) and np.all(lm.A[:, 5] == 0))
    True
    >>> lm.A[[0, 3], [1, 4]].tolist()
    [1.0, 1.0]
    """
    if eq.variant is not variant:
        raise ConfigurationError(
            f"equilibrium is a {eq.variant.value} point, not {variant.value}"
        )
    mode = mode or MeasurementMode.for_variant(variant)

    m, M, g, ell, delta = p.m, p.M, p.g, p.ell, p.delta
    c = eq.kind.sign
    drag, tilt = -delta / M, m * g / M
    pole_drag, pole_tilt = -delta * c / (M * ell), (M + m) * g * c / (M * ell)
    gain, pole_gain = 1 / M, c / (M * ell)

    if variant is Variant.IPOC:
        A = np.array(
            [
                [0, 1, 0, 0],
                [0, drag, tilt, 0],
                [0, 0, 0, 1],
                [0, pole_drag, pole_tilt, 0],
            ],
            dtype=float,
        )
        B = np.array([[0], [gain], [0], [pole_gain]], dtype=float)
    else:
        A = np.zeros((6, 6))
        A[0, 1] = 1
        A[1, 1], A[1, 3] = drag, tilt
        A[2, 2], A[2, 4] = drag, tilt
        A[3, 4] = 1
        A[4, 1], A[4, 3] = pole_drag, pole_tilt
        A[5, 2], A[5, 4] = pole_drag, pole_tilt

        B = np.zeros((6, 2))
        B[1, 0], B[4, 0] = gain, pole_gain
        B[2, 1], B[5, 1] = gain, pole_gain

    return LinearModel(A, B, measurement_matrix(variant, mode), eq, mode)


def numeric_jacobian(
    f: Rates, point: StateVec | np.ndarray, u: np.ndarray, h: float = 1e-6
) -> tuple[np.ndarray, np.ndarray]:
    """
    Central-difference Jacobians of f at (point, u).

    >>> A0, B0 = np.array([[0.0, 1.0], [-2.0, -3.0]]), np.array([[0.0], [1.0]])
    >>> A, B = numeric_jacobian(lambda x, u: A0 @ x + B0 @ u, np.zeros(2), np.zeros(1))
    >>> bool(np.allclose(A, A0, atol=1e-9) and np.allclose(B, B0, atol=1e-9))
    True
    """
    if h <= 0:
        raise ConfigurationError(f"must be > 0, got {h}", key="h")

    x0 = np.asarray(point.values if isinstance(point, StateVec) else point, dtype=float)
    u0 = np.asarray(u, dtype=float)

    def column(g: Callable[[np.ndarray], np.ndarray], at: np.ndarray, i: int) -> np.ndarray:
        step = np.zeros_like(at)
        step[i] = h
        ahead = require_finite(g(at + step), "rates")
        behind = require_finite(g(at - step), "rates")
        return (ahead - behind) / (2 * h)

    A = np.column_stack([column(lambda x: f(x, u0), x0, i) for i in range(x0.size)])
    B = np.column_stack([column(lambda v: f(x0, v), u0, i) for i in range(u0.size)])
    return A, B


def linearize(
    variant: Variant,
    p: ModelParams,
    kind: EquilibriumKind = EquilibriumKind.UPRIGHT,
    x_ref: float = 0.0,
) -> LinearModel:
    return analytic_jacobians(variant, equilibrium(variant, kind, x_ref, p), p)


def controllability_rank(A: np.ndarray, B: np.ndarray) -> int:
    """
    >>> controllability_rank(np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0], [1.0]]))
    2
    """
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return int(np.linalg.matrix_rank(np.hstack(blocks)))


def observability_rank(A: np.ndarray, C: np.ndarray) -> int:
    return controllability_rank(A.T, C.T)
