"""
Nonlinear cart-pendulum dynamics.

Angles are measured from the upright position, so θ = 0 is the inverted
equilibrium and θ = π hangs down; the bob sits at x − ℓ·sinθ, so a positive
angle leans the pendulum towards −x. The cart-side generalised force is u − δẋ in
both the cart and the pendulum rows; the jerk rows of the augmented model are
the exact time derivatives of those two rows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from enum import Enum
from typing import TYPE_CHECKING, Iterator

if TYPE_CHECKING:
    from typing import Self

import numpy as np

from common import ConfigurationError, DomainError, SingularityError, require_finite


class Variant(str, Enum):
    IPOC = "ipoc"
    AIPOC = "aipoc"

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def inputs(self) -> int:
        return 1 if self is Variant.IPOC else 2

    @property
    def labels(self) -> tuple[str, ...]:
        if self is Variant.IPOC:
            return ("x", "xdot", "theta", "thetadot")
        return ("x", "xdot", "xddot", "theta", "thetadot", "thetaddot")

    def index(self, label: str) -> int:
        return self.labels.index(label)

    @property
    def theta_index(self) -> int:
        return self.index("theta")


# Positions of the IPoC entries inside the augmented state.
SHARED_INDICES = (0, 1, 3, 4)


@dataclass(frozen=True)
class ModelParams:
    """
    >>> round(ModelParams().u_max, 9)
    29.43
    >>> ModelParams(ell=0)  # doctest: +IGNORE_EXCEPTION_DETAIL
    Traceback (most recent call last):
    ConfigurationError: ell: must be > 0, got 0
    """

    m: float = 1.0
    M: float = 5.0
    g: float = 9.81
    ell: float = 1.25
    delta: float = 0.8
    u_max: float | None = None

    def __post_init__(self):
        if self.u_max is None:
            object.__setattr__(self, "u_max", 3 * self.g)

        for field in fields(self):
            value = getattr(self, field.name)
            if not math.isfinite(value):
                raise ConfigurationError(f"must be finite, got {value}", key=field.name)
            if field.name == "delta":
                if value < 0:
                    raise ConfigurationError(f"must be >= 0, got {value}", key="delta")
            elif value <= 0:
                raise ConfigurationError(f"must be > 0, got {value}", key=field.name)

    @property
    def limit(self) -> float:
        assert self.u_max is not None
        return self.u_max


@dataclass(frozen=True, eq=False)
class StateVec:
    """
    >>> s = StateVec.of(0.0, 1.0, 0.3, 0.0)
    >>> s.variant, s["theta"]
    (<Variant.IPOC: 'ipoc'>, 0.3)
    >>> StateVec.of(0.0, 1.0, 0.3)  # doctest: +IGNORE_EXCEPTION_DETAIL
    Traceback (most recent call last):
    ConfigurationError: a state has 4 or 6 entries, got 3
    """

    variant: Variant
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.variant.size,):
            raise ConfigurationError(
                f"{self.variant.value} state needs {self.variant.size} entries,"
                f" got shape {values.shape}"
            )
        require_finite(values)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def of(cls, *values: float) -> Self:
        for variant in Variant:
            if variant.size == len(values):
                return cls(variant, np.array(values, dtype=float))

        raise ConfigurationError(f"a state has 4 or 6 entries, got {len(values)}")

    @classmethod
    def zeros(cls, variant: Variant) -> Self:
        return cls(variant, np.zeros(variant.size))

    def __getitem__(self, label: str) -> float:
        return float(self.values[self.variant.index(label)])

    def __iter__(self) -> Iterator[float]:
        return iter(self.values.tolist())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StateVec):
            return NotImplemented
        return self.variant is other.variant and np.array_equal(self.values, other.values)

    def __repr__(self) -> str:
        return f"StateVec({self.variant.value}, {self.values.tolist()})"

    def rounded(self, ndigits: int = 9) -> list[float]:
        return [round(v, ndigits) + 0.0 for v in self.values.tolist()]

    def reduced(self) -> StateVec:
        if self.variant is Variant.IPOC:
            return self
        return StateVec(Variant.IPOC, self.values[list(SHARED_INDICES)])


@dataclass(frozen=True)
class FlatOutput:
    eps: float
    eps_d1: float
    eps_d2: float
    eps_d3: float = 0.0
    eps_d4: float = 0.0
    eps_d5: float | None = None


def ipoc_rates(state: np.ndarray, u: float, p: ModelParams) -> np.ndarray:
    xdot, theta, thetadot = state[1], state[2], state[3]
    sin, cos = math.sin(theta), math.cos(theta)
    sin2 = math.sin(2 * theta)
    gamma = p.M + p.m * sin * sin
    force = u - p.delta * xdot

    xddot = (0.5 * p.m * p.g * sin2 - p.m * p.ell * thetadot**2 * sin + force) / gamma
    thetaddot = (
        (p.M + p.m) * p.g * sin - 0.5 * p.m * p.ell * thetadot**2 * sin2 + cos * force
    ) / (gamma * p.ell)
    return np.array([xdot, xddot, thetadot, thetaddot])


def aipoc_rates(state: np.ndarray, u: float, udot: float, p: ModelParams) -> np.ndarray:
    xdot, xddot, theta, thetadot, thetaddot = state[1:]
    sin, cos = math.sin(theta), math.cos(theta)
    sin2, cos2 = math.sin(2 * theta), math.cos(2 * theta)
    m, ell = p.m, p.ell

    gamma = p.M + m * sin * sin
    gamma_dot = m * sin2 * thetadot
    force = u - p.delta * xdot
    force_dot = udot - p.delta * xddot

    cart = 0.5 * m * p.g * sin2 - m * ell * thetadot**2 * sin + force
    cart_dot = (
        m * p.g * thetadot * cos2
        - m * ell * thetadot * (2 * thetaddot * sin + thetadot**2 * cos)
        + force_dot
    )
    pole = (p.M + m) * p.g * sin - 0.5 * m * ell * thetadot**2 * sin2 + cos * force
    pole_dot = (
        (p.M + m) * p.g * thetadot * cos
        - m * ell * (thetadot * thetaddot * sin2 + thetadot**3 * cos2)
        - thetadot * sin * force
        + cos * force_dot
    )

    return np.array(
        [
            xdot,
            cart / gamma,
            cart_dot / gamma - cart * gamma_dot / gamma**2,
            thetadot,
            pole / (gamma * ell),
            (pole_dot / gamma - pole * gamma_dot / gamma**2) / ell,
        ]
    )


def _expect(s: StateVec, variant: Variant) -> None:
    if s.variant is not variant:
        raise ConfigurationError(f"expected a {variant.value} state, got {s.variant.value}")


def ipoc_derivative(s: StateVec, u: float, p: ModelParams) -> StateVec:
    """
    >>> p = ModelParams()
    >>> ipoc_derivative(StateVec.of(0, 0, 0, 0), 0.0, p).rounded()
    [0.0, 0.0, 0.0, 0.0]
    >>> ipoc_derivative(StateVec.of(0, 0, 0, 0), 1.0, p).rounded()
    [0.0, 0.2, 0.0, 0.16]
    >>> ipoc_derivative(StateVec.of(0, 1, 0, 0), 0.0, p).rounded()
    [1.0, -0.16, 0.0, -0.128]
    """
    _expect(s, Variant.IPOC)
    require_finite(np.array([u]), "control")
    return StateVec(Variant.IPOC, require_finite(ipoc_rates(s.values, u, p), "derivative"))


def aipoc_derivative(
    s: StateVec, u: float, p: ModelParams, udot: float = 0.0
) -> StateVec:
    """
    >>> p = ModelParams()
    >>> aipoc_derivative(StateVec.zeros(Variant.AIPOC), 0.0, p).rounded()
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
    >>> aipoc_derivative(StateVec.zeros(Variant.AIPOC), 0.0, p, udot=1.0).rounded()
    [0.0, 0.0, 0.2, 0.0, 0.0, 0.16]
    """
    _expect(s, Variant.AIPOC)
    require_finite(np.array([u, udot]), "control")
    rates = aipoc_rates(s.values, u, udot, p)
    return StateVec(Variant.AIPOC, require_finite(rates, "derivative"))


def consistent_accelerations(s: StateVec, p: ModelParams, u: float = 0.0) -> StateVec:
    """
    Augment a 4-state with the accelerations the model produces under `u`.

    >>> consistent_accelerations(StateVec.of(0, 1, 0, 0), ModelParams()).rounded()
    [0.0, 1.0, -0.16, 0.0, 0.0, -0.128]
    """
    if s.variant is Variant.AIPOC:
        return s
    _, xddot, _, thetaddot = ipoc_rates(s.values, u, p)
    x, xdot, theta, thetadot = s.values
    return StateVec.of(x, xdot, xddot, theta, thetadot, thetaddot)


def flat_forward(s: StateVec, p: ModelParams) -> FlatOutput:
    """
    >>> p = ModelParams()
    >>> f = flat_forward(StateVec.of(0, 0, 0, 0), p)
    >>> f.eps, f.eps_d1, f.eps_d2
    (0.0, 0.0, 0.0)
    >>> f = flat_forward(StateVec.of(0, 0, math.pi / 2, 0), p)
    >>> f.eps, f.eps_d2
    (1.25, 9.81)
    >>> f = flat_forward(StateVec.of(1, 2, 0, 0), p)
    >>> f.eps, f.eps_d1, f.eps_d2
    (1.0, 2.0, 0.0)
    """
    theta, thetadot = s["theta"], s["thetadot"]
    if abs(theta) > math.pi / 2:
        raise DomainError(f"flat output is not invertible for |theta| = {abs(theta):.4f}")

    sin, cos = math.sin(theta), math.cos(theta)
    eps_d4 = 0.0
    if s.variant is Variant.AIPOC:
        eps_d4 = p.g * (cos * s["thetaddot"] - sin * thetadot**2)

    return FlatOutput(
        eps=s["x"] + p.ell * sin,
        eps_d1=s["xdot"] + thetadot * p.ell * cos,
        eps_d2=p.g * sin,
        eps_d3=p.g * cos * thetadot,
        eps_d4=eps_d4,
    )


def _flat_margin(f: FlatOutput, p: ModelParams) -> float:
    if abs(f.eps_d2) >= p.g:
        raise SingularityError(
            f"|eps''| = {abs(f.eps_d2)} >= g: the pendulum is horizontal"
        )
    return p.g**2 - f.eps_d2**2


def flat_inverse(f: FlatOutput, p: ModelParams) -> StateVec:
    """
    >>> p = ModelParams()
    >>> flat_inverse(FlatOutput(0, 0, 0, 0), p).rounded()
    [0.0, 0.0, 0.0, 0.0]
    >>> s = flat_inverse(FlatOutput(0, 0, p.g / 2, 0), p)
    >>> s.rounded(12) == [-0.625, 0.0, round(math.pi / 6, 12), 0.0]
    True
    >>> flat_inverse(FlatOutput(0, 0, p.g, 0), p)  # doctest: +IGNORE_EXCEPTION_DETAIL
    Traceback (most recent call last):
    SingularityError: the pendulum is horizontal
    """
    margin = _flat_margin(f, p)
    return StateVec.of(
        f.eps - f.eps_d2 * p.ell / p.g,
        f.eps_d1 - f.eps_d3 * p.ell / p.g,
        math.asin(f.eps_d2 / p.g),
        f.eps_d3 / math.sqrt(margin),
    )


def flat_accelerations(f: FlatOutput, p: ModelParams) -> tuple[float, float]:
    """
    Cart and angular accelerations from the flat output up to its fourth derivative.

    >>> p = ModelParams()
    >>> flat_accelerations(FlatOutput(0, 0, p.g / 2), p)
    (4.905, 0.0)
    """
    alpha = _flat_margin(f, p)
    xddot = f.eps_d2 - f.eps_d4 * p.ell / p.g
    thetaddot = (f.eps_d4 * alpha + f.eps_d3**2 * f.eps_d2) / alpha**1.5
    return xddot, thetaddot


def flat_control(s: StateVec, thetaddot: float, p: ModelParams) -> float:
    """
    The input that produces a requested angular acceleration.

    >>> p = ModelParams()
    >>> s = StateVec.of(0.0, 0.5, 0.2, -0.1)
    >>> u = flat_control(s, 1.5, p)
    >>> round(float(ipoc_derivative(s, u, p).values[3]), 9)
    1.5
    """
    theta, thetadot, xdot = s["theta"], s["thetadot"], s["xdot"]
    cos = math.cos(theta)
    if abs(cos) < 1e-12:
        raise SingularityError("the pendulum is horizontal, u has no angular authority")

    gamma = p.M + p.m * math.sin(theta) ** 2
    rest = (p.M + p.m) * p.g * math.sin(theta) - 0.5 * p.m * p.ell * thetadot**2 * math.sin(
        2 * theta
    )
    return p.delta * xdot + (thetaddot * gamma * p.ell - rest) / cos


def mechanical_energy(s: StateVec, p: ModelParams) -> float:
    """
    >>> p = ModelParams()
    >>> round(mechanical_energy(StateVec.of(0, 0, 0, 0), p), 9)
    12.2625
    """
    xdot, theta, thetadot = s["xdot"], s["theta"], s["thetadot"]
    return (
        0.5 * (p.M + p.m) * xdot**2
        - p.m * p.ell * xdot * thetadot * math.cos(theta)
        + 0.5 * p.m * p.ell**2 * thetadot**2
        + p.m * p.g * p.ell * math.cos(theta)
    )


def saturate(u: float, p: ModelParams) -> float:
    """
    >>> p = ModelParams()
    >>> saturate(5, p), round(saturate(100, p), 9), round(saturate(-50, p), 9)
    (5, 29.43, -29.43)
    """
    return max(-p.limit, min(p.limit, u))
