"""
Riccati-based synthesis of the LQR gain K and the steady-state Kalman gain L.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy import linalg

from common import ConfigurationError, ResidualError, SynthesisError
from linearize import LinearModel, MeasurementMode
from model import Variant

logger = logging.getLogger(__name__)

RESIDUAL_TOLERANCE = 1e-8
MAX_REFINEMENTS = 50


def _symmetric(X: np.ndarray) -> np.ndarray:
    return (X + X.T) / 2


def _check_weight(name: str, X: np.ndarray, size: int, definite: bool) -> None:
    if X.shape != (size, size):
        raise ConfigurationError(f"expected {size}x{size}, got {X.shape}", key=name)
    if not np.all(np.isfinite(X)) or not np.allclose(X, X.T):
        raise ConfigurationError("must be finite and symmetric", key=name)

    lowest = float(np.linalg.eigvalsh(X).min())
    if definite and lowest <= 0:
        raise ConfigurationError(f"must be positive definite, min eigenvalue {lowest}", key=name)
    if lowest < -1e-12:
        raise ConfigurationError(f"must be positive semidefinite, min eigenvalue {lowest}", key=name)


@dataclass(frozen=True, eq=False)
class Weights:
    Q: np.ndarray
    R: np.ndarray
    W: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        n, k, m = len(self.Q), len(self.R), len(self.V)
        _check_weight("Q", self.Q, n, definite=False)
        _check_weight("R", self.R, k, definite=True)
        _check_weight("W", self.W, n, definite=False)
        _check_weight("V", self.V, m, definite=False)


class Profile(str, Enum):
    LOW_POWER = "low-power"
    UTILITY = "utility"
    OURS = "ours"
    AGILE = "agile"

    @property
    def scales(self) -> tuple[float, float]:
        """Multipliers of the identity in Q and R."""
        match self:
            case Profile.LOW_POWER:
                return 0.1, 10.0
            case Profile.UTILITY:
                return 1.0, 1.0
            case Profile.OURS:
                return 1.0, 0.1
            case Profile.AGILE:
                return 10.0, 0.01

    @classmethod
    def named(cls, name: str | Profile) -> Profile:
        try:
            return cls(name)
        except ValueError:
            choices = ", ".join(p.value for p in cls)
            raise ConfigurationError(
                f"unknown profile {name!r}, expected one of {choices}", key="profile"
            ) from None


@dataclass(frozen=True)
class NoiseLevels:
    """Variances of the process noise and of each sensor channel."""

    process: float = 1e-4
    position: float = 1e-4
    accelerometer: float = 1e-2
    gyroscope: float = 1e-4
    encoder: float = 1e-4

    def __post_init__(self):
        for key, value in vars(self).items():
            if not value >= 0:
                raise ConfigurationError(f"must be >= 0, got {value}", key=key)

    def covariances(
        self, variant: Variant, mode: MeasurementMode | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        mode = mode or MeasurementMode.for_variant(variant)
        W = self.process * np.eye(variant.size)
        V = np.diag([getattr(self, channel) for channel in mode.channels])
        return W, V

    def silent(self) -> NoiseLevels:
        return replace(self, **{key: 0.0 for key in vars(self)})


def default_noise(
    variant: Variant, mode: MeasurementMode | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """
    >>> W, V = default_noise(Variant.AIPOC)
    >>> W.shape, np.diag(V).tolist()
    ((6, 6), [0.0001, 0.01, 0.0001])
    """
    return NoiseLevels().covariances(variant, mode)


def tuning_profile(
    name: str | Profile,
    variant: Variant = Variant.AIPOC,
    noise: NoiseLevels | None = None,
) -> Weights:
    """
    >>> w = tuning_profile("ours")
    >>> np.diag(w.Q).tolist(), np.diag(w.R).tolist()
    ([1.0, 1.0, 1.0, 1.0, 1.0, 1.0], [0.1, 0.1])
    >>> w = tuning_profile("agile", Variant.IPOC)
    >>> np.diag(w.Q).tolist(), np.diag(w.R).tolist()
    ([10.0, 10.0, 10.0, 10.0], [0.01])
    >>> tuning_profile("turbo")  # doctest: +IGNORE_EXCEPTION_DETAIL
    Traceback (most recent call last):
    ConfigurationError: profile: unknown profile 'turbo'
    """
    q, r = Profile.named(name).scales
    W, V = (noise or NoiseLevels()).covariances(variant)
    return Weights(q * np.eye(variant.size), r * np.eye(variant.inputs), W, V)


@dataclass(frozen=True, eq=False)
class GainSet:
    K: np.ndarray
    S: np.ndarray
    L: np.ndarray
    P: np.ndarray
    # states covered by both Riccati designs; the rest have zero columns in K and rows in L
    designed: tuple[int, ...]


def care_residual(
    A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray, S: np.ndarray
) -> float:
    """Frobenius norm of the CARE residual relative to the norm of Q."""
    G = B @ np.linalg.solve(R, B.T)
    residual = A.T @ S + S @ A - S @ G @ S + Q
    return float(np.linalg.norm(residual) / max(np.linalg.norm(Q), 1.0))


def is_hurwitz(A: np.ndarray) -> bool:
    return bool(np.all(np.linalg.eigvals(A).real < 0))


def _check_stabilizable(A: np.ndarray, B: np.ndarray) -> None:
    n = A.shape[0]
    for eigenvalue in np.linalg.eigvals(A):
        if eigenvalue.real < -1e-9:
            continue
        pencil = np.hstack([A - eigenvalue * np.eye(n), B])
        if np.linalg.matrix_rank(pencil, tol=1e-9) < n:
            raise SynthesisError(f"mode {eigenvalue:.4g} cannot be stabilised")


def solve_care(
    A: np.ndarray,
    B: np.ndarray,
    Q: np.ndarray,
    R: np.ndarray,
    tolerance: float = RESIDUAL_TOLERANCE,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Stabilising solution of AᵀS + SA − SBR⁻¹BᵀS + Q = 0 and the gain K = R⁻¹BᵀS.

    >>> S, K = solve_care(np.zeros((1, 1)), np.ones((1, 1)), np.eye(1), np.eye(1))
    >>> S.round(12).tolist(), K.round(12).tolist()
    ([[1.0]], [[1.0]])
    >>> A, B = np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0], [1.0]])
    >>> S, K = solve_care(A, B, np.eye(2), np.eye(1))
    >>> bool(np.allclose(K, [[1.0, np.sqrt(3)]], atol=1e-10))
    True
    """
    n = A.shape[0]
    _check_stabilizable(A, B)

    G = B @ np.linalg.solve(R, B.T)
    hamiltonian = np.block([[A, -G], [-Q, -A.T]])
    _, Z, stable = linalg.schur(hamiltonian, output="real", sort="lhp")
    if stable != n:
        raise SynthesisError(
            f"Hamiltonian has {stable} stable eigenvalues, expected {n}: pair is not detectable"
        )

    U11, U21 = Z[:n, :n], Z[n:, :n]
    try:
        S = _symmetric(np.linalg.solve(U11.T, U21.T).T)
    except np.linalg.LinAlgError as e:
        raise SynthesisError("stable invariant subspace is not a graph") from e

    residual = care_residual(A, B, Q, R, S)
    for iteration in range(MAX_REFINEMENTS):
        if residual <= tolerance:
            break
        K = np.linalg.solve(R, B.T @ S)
        closed = A - B @ K
        S = _symmetric(linalg.solve_continuous_lyapunov(closed.T, -(Q + K.T @ R @ K)))
        residual = care_residual(A, B, Q, R, S)
        logger.debug("Newton-Kleinman step %d: residual %.3e", iteration + 1, residual)

    if not residual <= tolerance:
        raise ResidualError(residual, tolerance)

    return S, np.linalg.solve(R, B.T @ S)


def solve_fare(
    A: np.ndarray,
    C: np.ndarray,
    W: np.ndarray,
    V: np.ndarray,
    tolerance: float = RESIDUAL_TOLERANCE,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Filter ARE AP + PAᵀ − PCᵀV⁻¹CP + W = 0, solved through its dual.

    >>> P, L = solve_fare(np.zeros((1, 1)), np.ones((1, 1)), np.eye(1), np.eye(1))
    >>> P.round(12).tolist(), L.round(12).tolist()
    ([[1.0]], [[1.0]])
    """
    P, K = solve_care(A.T, C.T, W, V, tolerance)
    return P, K.T


def passive_states(lm: LinearModel) -> tuple[int, ...]:
    """
    States that neither move any other state nor reach a sensor. The angular
    acceleration of the augmented model is one: it only integrates the others,
    so it carries an uncontrollable and unobservable mode at zero.

    >>> from linearize import linearize
    >>> from model import ModelParams
    >>> passive_states(linearize(Variant.AIPOC, ModelParams()))
    (5,)
    >>> passive_states(linearize(Variant.IPOC, ModelParams()))
    ()
    """
    silent = np.all(lm.A == 0, axis=0) & np.all(lm.C == 0, axis=0)
    return tuple(int(i) for i in np.flatnonzero(silent))


def synthesize(lm: LinearModel, weights: Weights) -> GainSet:
    """
    LQR and steady-state Kalman gains. Both Riccati equations are solved on the
    states left after removing `passive_states`; K gets zero columns and L zero
    rows for the removed ones.

    >>> from linearize import linearize
    >>> from model import ModelParams
    >>> lm = linearize(Variant.AIPOC, ModelParams())
    >>> gains = synthesize(lm, tuning_profile("ours"))
    >>> gains.K.shape, gains.L.shape, gains.designed
    ((2, 6), (6, 3), (0, 1, 2, 3, 4))
    >>> bool(np.all(gains.K[:, 5] == 0) and np.all(gains.L[5] == 0))
    True
    """
    if weights.Q.shape != lm.A.shape or len(weights.R) != lm.k or len(weights.V) != lm.outputs:
        raise ConfigurationError(
            f"weights do not fit a model with {lm.n} states, {lm.k} inputs"
            f" and {lm.outputs} outputs"
        )
    if np.linalg.eigvalsh(weights.V).min() <= 0:
        raise ConfigurationError("must be positive definite for filter design", key="V")

    dropped = set(passive_states(lm))
    kept = [i for i in range(lm.n) if i not in dropped]
    if dropped:
        logger.debug("Riccati designs exclude passive states %s", sorted(dropped))

    block = np.ix_(kept, kept)
    S_kept, K_kept = solve_care(lm.A[block], lm.B[kept], weights.Q[block], weights.R)
    P_kept, L_kept = solve_fare(lm.A[block], lm.C[:, kept], weights.W[block], weights.V)

    S, P = np.zeros((lm.n, lm.n)), np.zeros((lm.n, lm.n))
    S[block], P[block] = S_kept, P_kept
    K = np.zeros((lm.k, lm.n))
    K[:, kept] = K_kept
    L = np.zeros((lm.n, lm.outputs))
    L[kept] = L_kept
    return GainSet(K=K, S=S, L=L, P=P, designed=tuple(kept))


def augmented_closed_loop(lm: LinearModel, gains: GainSet) -> np.ndarray:
    """Closed loop in (x, x̂) coordinates."""
    A, B, C = lm.A, lm.B, lm.C
    BK, LC = B @ gains.K, gains.L @ C
    return np.block([[A, -BK], [LC, A - BK - LC]])


def error_closed_loop(lm: LinearModel, gains: GainSet) -> np.ndarray:
    """Closed loop in (x, e) coordinates with e = x − x̂."""
    A, B, C = lm.A, lm.B, lm.C
    BK = B @ gains.K
    return np.block([[A - BK, BK], [np.zeros_like(A), A - gains.L @ C]])


def separation_spectrum(lm: LinearModel, gains: GainSet) -> tuple[np.ndarray, np.ndarray]:
    """Regulator and observer eigenvalues, each sorted by real part."""
    regulator = np.linalg.eigvals(lm.A - lm.B @ gains.K)
    observer = np.linalg.eigvals(lm.A - gains.L @ lm.C)
    return np.sort_complex(regulator), np.sort_complex(observer)


def stationary_spread(
    lm: LinearModel, gains: GainSet, W: np.ndarray, V: np.ndarray, dt: float
) -> np.ndarray:
    """
    Standard deviation of every true state once the closed loop has forgotten
    its start, from the Lyapunov equation of the (x, e) loop driven by process
    noise of intensity W and sensors sampled every dt with covariance V. States
    outside `gains.designed` get zero.

    >>> from linearize import linearize
    >>> from model import ModelParams
    >>> lm = linearize(Variant.IPOC, ModelParams())
    >>> gains = synthesize(lm, tuning_profile("ours", Variant.IPOC))
    >>> bool(np.all(stationary_spread(lm, gains, np.zeros((4, 4)), np.zeros((2, 2)), 0.005) == 0))
    True
    """
    kept = list(gains.designed)
    both = kept + [lm.n + i for i in kept]
    closed = error_closed_loop(lm, gains)[np.ix_(both, both)]

    Wk, L = W[np.ix_(kept, kept)], gains.L[kept]
    drive = np.block([[Wk, Wk], [Wk, Wk + dt * L @ V @ L.T]])
    spread = np.zeros(lm.n)
    if not np.any(drive):
        return spread
    covariance = linalg.solve_continuous_lyapunov(closed, -drive)
    spread[kept] = np.sqrt(np.clip(np.diag(covariance)[: len(kept)], 0, None))
    return spread
