"""
Kalman filter with exact discretisation and rate-limited corrections.

Estimates live in deviation coordinates around the model's equilibrium.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from typing import Self

import numpy as np
from scipy import linalg

from common import ConfigurationError, FilterDivergence
from linearize import LinearModel
from model import StateVec, Variant


class ScheduleMode(str, Enum):
    PERIODIC = "periodic"
    BERNOULLI = "bernoulli"


class Gating(str, Enum):
    """Which sensor rows follow the update schedule; the others correct every step."""

    ALL = "all"
    POSITION = "position"
    # position and pole encoder: the sensors that read an absolute configuration
    ABSOLUTE = "absolute"

    def limits(self, channel: str) -> bool:
        """
        >>> [Gating.ABSOLUTE.limits(c) for c in ("position", "encoder", "gyroscope")]
        [True, True, False]
        """
        match self:
            case Gating.ALL:
                return True
            case Gating.POSITION:
                return channel == "position"
            case Gating.ABSOLUTE:
                return channel in ("position", "encoder")


@dataclass(frozen=True)
class UpdateSchedule:
    """
    >>> UpdateSchedule(0.2).period, UpdateSchedule(0.01).period
    (5, 100)
    >>> UpdateSchedule(0.0)  # doctest: +IGNORE_EXCEPTION_DETAIL
    Traceback (most recent call last):
    ConfigurationError: rho: must be in (0, 1], got 0.0
    """

    rho: float = 1.0
    mode: ScheduleMode = ScheduleMode.PERIODIC
    gating: Gating = Gating.ALL

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ConfigurationError(f"must be in (0, 1], got {self.rho}", key="rho")

    @property
    def period(self) -> int:
        return max(1, round(1 / self.rho))


def should_update(
    schedule: UpdateSchedule,
    step: int,
    rng: np.random.Generator | None,
    channels: tuple[str, ...],
) -> np.ndarray:
    """
    Per-channel mask of the measurement rows applied at this step.

    >>> s = UpdateSchedule(0.2)
    >>> [i for i in range(16) if should_update(s, i, None, ("position",)).all()]
    [0, 5, 10, 15]
    >>> should_update(UpdateSchedule(0.2, gating=Gating.POSITION), 3, None, ("position", "gyroscope")).tolist()
    [False, True]
    """
    match schedule.mode:
        case ScheduleMode.PERIODIC:
            due = step % schedule.period == 0
        case ScheduleMode.BERNOULLI:
            assert rng is not None, "bernoulli schedule needs a generator"
            due = bool(rng.random() < schedule.rho)

    if due:
        return np.ones(len(channels), dtype=bool)
    return np.array([not schedule.gating.limits(channel) for channel in channels], dtype=bool)


@lru_cache(maxsize=64)
def discretize(lm: LinearModel, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """
    Zero-order-hold Ad, Bd from the exponential of the block [[A, B], [0, 0]].

    >>> from linearize import linearize
    >>> from model import ModelParams, Variant
    >>> Ad, Bd = discretize(linearize(Variant.IPOC, ModelParams()), 0.005)
    >>> Ad.shape, Bd.shape
    ((4, 4), (4, 1))
    """
    if dt <= 0:
        raise ConfigurationError(f"must be > 0, got {dt}", key="dt")

    n, k = lm.n, lm.k
    block = np.zeros((n + k, n + k))
    block[:n, :n] = lm.A
    block[:n, n:] = lm.B
    phi = linalg.expm(block * dt)
    return phi[:n, :n], phi[:n, n:]


@dataclass(frozen=True, eq=False)
class FilterState:
    xhat: np.ndarray
    Pcov: np.ndarray
    step_count: int = 0
    schedule: UpdateSchedule = UpdateSchedule()

    @classmethod
    def initial(cls, lm: LinearModel, schedule: UpdateSchedule, p0: float = 1.0) -> Self:
        """The equilibrium with covariance p0·I, for filtering outside the closed loop."""
        if p0 <= 0:
            raise ConfigurationError(f"must be > 0, got {p0}", key="filter.p0")
        return cls(np.zeros(lm.n), p0 * np.eye(lm.n), 0, schedule)

    @classmethod
    def seeded(
        cls,
        lm: LinearModel,
        schedule: UpdateSchedule,
        y: np.ndarray,
        prior: np.ndarray,
        V: np.ndarray,
    ) -> Self:
        """
        Start from one reading of every sensor. Measured states take the reading,
        the augmented model's angle comes from the accelerometer with the cart at
        rest and everything else starts at the equilibrium. `prior` is the
        covariance of that guess; the rebuilt angle gets at least the variance
        the accelerometer leaves it.

        >>> from linearize import linearize
        >>> from model import ModelParams
        >>> lm = linearize(Variant.AIPOC, ModelParams())
        >>> fs = FilterState.seeded(lm, UpdateSchedule(), [-1.0, 0.1962, 0.0], np.eye(6), np.eye(3))
        >>> np.round(fs.xhat, 6).tolist()
        [-1.0, 0.0, 0.1962, 0.1, 0.0, 0.94176]
        """
        y = np.asarray(y, dtype=float)
        if y.shape != (lm.outputs,):
            raise ConfigurationError(f"first reading has shape {y.shape}, expected ({lm.outputs},)")
        if prior.shape != (lm.n, lm.n):
            raise ConfigurationError(f"prior has shape {prior.shape}, expected {lm.n}x{lm.n}")

        xhat = lm.C.T @ y
        Pcov = np.array(prior, dtype=float)
        if lm.variant is Variant.AIPOC and "accelerometer" in lm.mode.channels:
            v = lm.variant
            cart, theta = v.index("xdot"), v.theta_index
            accel = lm.mode.channels.index("accelerometer")
            slope = lm.A[cart, theta]
            xhat[theta] = xhat[v.index("xddot")] / slope
            Pcov[theta, theta] = max(Pcov[theta, theta], V[accel, accel] / slope**2)
        _checked(xhat, Pcov)
        return cls(rebuild_passive(lm, xhat), Pcov, 0, schedule)

    def estimate(self, lm: LinearModel) -> StateVec:
        """The estimate in absolute coordinates."""
        return StateVec(lm.variant, self.xhat + lm.equilibrium.x_e.values)


def _checked(xhat: np.ndarray, Pcov: np.ndarray) -> None:
    if not (np.all(np.isfinite(xhat)) and np.all(np.isfinite(Pcov))):
        raise FilterDivergence(f"non-finite filter output: {xhat}")


def _clip_psd(Pcov: np.ndarray) -> np.ndarray:
    Pcov = (Pcov + Pcov.T) / 2
    eigenvalues, vectors = np.linalg.eigh(Pcov)
    if eigenvalues.min() >= 0:
        return Pcov
    return (vectors * np.clip(eigenvalues, 0, None)) @ vectors.T


def rebuild_passive(lm: LinearModel, xhat: np.ndarray) -> np.ndarray:
    """
    Angular acceleration of the augmented model from the cart acceleration.

    No sensor sees it and it drives no other state, so the filter cannot hold it;
    both accelerations answer to the same input, which the cart row pins down.

    >>> from linearize import linearize
    >>> from model import ModelParams
    >>> lm = linearize(Variant.AIPOC, ModelParams())
    >>> round(float(rebuild_passive(lm, np.array([0, 0, 1.0, 0, 0, 7.0]))[5]), 9)
    0.8
    """
    if lm.variant is not Variant.AIPOC:
        return xhat
    v = lm.variant
    cart, pole = v.index("xdot"), v.index("thetadot")
    force = (xhat[v.index("xddot")] - lm.A[cart] @ xhat) / lm.B[cart, 0]
    rebuilt = xhat.copy()
    rebuilt[v.index("thetaddot")] = lm.A[pole] @ xhat + lm.B[pole, 0] * force
    return rebuilt


def predict(
    fs: FilterState, u: np.ndarray, lm: LinearModel, W: np.ndarray, dt: float
) -> FilterState:
    """
    >>> from linearize import linearize
    >>> from model import ModelParams, Variant
    >>> lm = linearize(Variant.IPOC, ModelParams())
    >>> fs = predict(FilterState.initial(lm, UpdateSchedule()), np.zeros(1), lm, np.eye(4), 0.01)
    >>> bool(np.all(fs.xhat == 0)), fs.step_count
    (True, 1)
    """
    Ad, Bd = discretize(lm, dt)
    xhat = rebuild_passive(lm, Ad @ fs.xhat + Bd @ np.atleast_1d(u))
    Pcov = Ad @ fs.Pcov @ Ad.T + W * dt
    Pcov = (Pcov + Pcov.T) / 2
    _checked(xhat, Pcov)
    return replace(fs, xhat=xhat, Pcov=Pcov, step_count=fs.step_count + 1)


def update(
    fs: FilterState,
    y: np.ndarray,
    lm: LinearModel,
    V: np.ndarray,
    mask: np.ndarray | None = None,
) -> FilterState:
    """
    Joseph-form correction on the enabled measurement rows.

    `y` holds either every row of C or only the enabled ones.
    """
    rows = np.arange(lm.outputs) if mask is None else np.flatnonzero(mask)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape == (lm.outputs,):
        y = y[rows]
    elif y.shape != rows.shape:
        raise ConfigurationError(
            f"measurement has {y.size} entries, expected {lm.outputs} or {rows.size}"
        )
    if rows.size == 0:
        return fs

    H = lm.C[rows]
    R = V[np.ix_(rows, rows)]
    S = H @ fs.Pcov @ H.T + R
    gain = np.linalg.solve(S.T, H @ fs.Pcov.T).T

    xhat = rebuild_passive(lm, fs.xhat + gain @ (y - H @ fs.xhat))
    I_KH = np.eye(lm.n) - gain @ H
    Pcov = _clip_psd(I_KH @ fs.Pcov @ I_KH.T + gain @ R @ gain.T)
    _checked(xhat, Pcov)
    return replace(fs, xhat=xhat, Pcov=Pcov)
