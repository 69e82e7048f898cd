"""
Performance metrics of simulated runs and Monte Carlo stability maps.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from functools import partial
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from more_itertools import chunked, flatten
from scipy.integrate import trapezoid

from common import ConfigurationError, derive_seed
from simengine import SETTLE_FLOOR, ScenarioConfig, SimTrace, Status, band_entries, run
from synthesis import synthesize

logger = logging.getLogger(__name__)

XDOT_RANGE = 10.0
THETADOT_RANGE = math.pi
SAMPLE_SPACE_AREA = (2 * XDOT_RANGE) * (2 * THETADOT_RANGE)

CHANNELS = ("position", "angle")


class Transient(NamedTuple):
    t_p: float | None
    t_tr: float | None
    t_s: float | None


class Integrals(NamedTuple):
    iae: float
    itae: float
    e_ss: float


@dataclass(frozen=True)
class ChannelMetrics:
    t_p: float | None
    t_tr: float | None
    t_s: float | None
    iae: float
    itae: float
    e_ss: float


@dataclass(frozen=True)
class MetricsReport:
    position: ChannelMetrics
    angle: ChannelMetrics
    u_sat_pct: float
    U_tot: float
    undershoot: float
    settled: bool
    status: Status

    def channel(self, name: str) -> ChannelMetrics:
        return getattr(self, name)


def transient(
    t: np.ndarray, error: np.ndarray, band: float = 0.02, floor: float = 0.0
) -> Transient:
    """
    >>> t = np.linspace(0, 15, 3001)
    >>> m = transient(t, np.exp(-t))
    >>> m.t_p, round(m.t_tr, 1), round(m.t_s, 1)
    (0.0, 3.9, 3.9)
    >>> transient(t, np.zeros_like(t))
    Transient(t_p=0.0, t_tr=0.0, t_s=0.0)
    >>> transient(t, np.cos(t)).t_s is None
    True
    >>> round(transient(t, np.exp(-t), floor=0.1).t_s, 1)
    2.3
    """
    tolerance = max(band * max(abs(float(error[0])), SETTLE_FLOOR), floor)
    entered, final = band_entries(error, tolerance)
    peak = float(t[int(np.argmax(np.abs(error)))])
    return Transient(
        peak,
        None if entered is None else float(t[entered]),
        None if final is None else float(t[final]),
    )


def integrals(t: np.ndarray, error: np.ndarray) -> Integrals:
    """
    >>> t = np.linspace(0, 15, 3001)
    >>> [round(v, 9) for v in integrals(t, np.ones_like(t))]
    [15.0, 112.5, 1.0]
    """
    magnitude = np.abs(error)
    return Integrals(
        float(trapezoid(magnitude, t)),
        float(trapezoid(t * magnitude, t)),
        float(magnitude[-1]),
    )


def control_effort(t: np.ndarray, u: np.ndarray) -> float:
    """
    >>> t = np.linspace(0, 15, 3001)
    >>> round(control_effort(t, np.full_like(t, 2.0)), 9)
    30.0
    """
    return float(trapezoid(np.abs(u), t))


def saturation_percent(u: np.ndarray, u_max: float) -> float:
    """
    >>> saturation_percent(np.array([1.0, 29.43, -29.43, 0.0]), 29.43)
    50.0
    """
    at_bound = np.abs(u) >= u_max * (1 - 1e-12)
    return 100.0 * float(np.count_nonzero(at_bound)) / len(u)


def transient_metrics(trace: SimTrace, band: float | None = None) -> dict[str, Transient]:
    """Peak, transition and settling times inside the band the trace was judged by."""
    band = trace.config.band if band is None else band
    return {
        name: transient(trace.t, e, band, floor)
        for name, e, floor in zip(CHANNELS, trace.errors.T, trace.band_floors)
    }


def integral_metrics(trace: SimTrace) -> tuple[dict[str, Integrals], float, float]:
    """Per-channel error integrals, then U_tot and u_sat_pct."""
    per_channel = {name: integrals(trace.t, e) for name, e in zip(CHANNELS, trace.errors.T)}
    U_tot = control_effort(trace.t, trace.u_sat)
    return per_channel, U_tot, saturation_percent(trace.u_sat, trace.config.params.limit)


def undershoot(trace: SimTrace) -> float:
    """
    Largest cart excursion against the direction of the setpoint before the cart
    first reaches its settling band.
    """
    error = trace.errors[:, 0]
    if error[0] == 0:
        return 0.0
    toward = -math.copysign(1.0, error[0])
    entered, _ = band_entries(error, trace.tolerances[0])
    stop = len(error) if entered is None else entered + 1
    window = error[:stop]
    excursion = -toward * (window - error[0])
    return max(0.0, float(excursion.max()))


def evaluate(trace: SimTrace, band: float | None = None) -> MetricsReport:
    transients = transient_metrics(trace, band)
    per_channel, U_tot, u_sat_pct = integral_metrics(trace)
    channels = {
        name: ChannelMetrics(*transients[name], *per_channel[name]) for name in CHANNELS
    }
    return MetricsReport(
        **channels,
        u_sat_pct=u_sat_pct,
        U_tot=U_tot,
        undershoot=undershoot(trace),
        settled=trace.status is Status.SETTLED,
        status=trace.status,
    )


class NormalizedTrajectory(NamedTuple):
    tgo: np.ndarray
    values: np.ndarray
    normalized: tuple[bool, ...]


def normalize_tgo(trace: SimTrace) -> NormalizedTrajectory:
    """
    Errors scaled by their initial values against the normalised time-to-go
    (T − t)/T. Channels that start at zero are left unscaled and flagged.
    """
    T = float(trace.t[-1])
    initial = trace.errors[0]
    normalized = tuple(bool(abs(e0) > 0) for e0 in initial)
    scale = np.where(normalized, initial, 1.0)
    return NormalizedTrajectory((T - trace.t) / T, trace.errors / scale, normalized)


class Criterion(str, Enum):
    POSITION = "x_final"
    ANGLE = "theta_final"
    SATURATION = "u_sat"
    EFFORT = "U_tot"


@dataclass(frozen=True)
class ScanThresholds:
    x_tol: float = 0.5
    theta_tol: float = 0.05 * math.pi
    u_sat_pct: float = 5.0
    effort: float = 500.0

    def __post_init__(self):
        for key, value in vars(self).items():
            if not value > 0:
                raise ConfigurationError(f"must be > 0, got {value}", key=f"scan.{key}")


@dataclass(frozen=True)
class Sample:
    xdot0: float
    thetadot0: float
    crashed: bool
    x_final: float
    theta_final: float
    u_sat: float
    U_tot: float

    def value(self, criterion: Criterion) -> float:
        return getattr(self, criterion.value)

    def stable(self, criterion: Criterion, thresholds: ScanThresholds) -> bool:
        if self.crashed:
            return False
        match criterion:
            case Criterion.POSITION:
                return self.x_final <= thresholds.x_tol
            case Criterion.ANGLE:
                return self.theta_final <= thresholds.theta_tol
            case Criterion.SATURATION:
                return self.u_sat <= thresholds.u_sat_pct
            case Criterion.EFFORT:
                return self.U_tot <= thresholds.effort


@dataclass(frozen=True, eq=False)
class StabilityMap:
    resolution: int
    samples: tuple[Sample, ...]
    thresholds: ScanThresholds = ScanThresholds()

    def cell(self, xdot: float, thetadot: float) -> tuple[int, int]:
        """
        >>> StabilityMap(80, ()).cell(-10.0, 0.0), StabilityMap(80, ()).cell(10.0, math.pi)
        ((0, 40), (79, 79))
        """
        i = int((xdot + XDOT_RANGE) / (2 * XDOT_RANGE) * self.resolution)
        j = int((thetadot + THETADOT_RANGE) / (2 * THETADOT_RANGE) * self.resolution)
        top = self.resolution - 1
        return min(max(i, 0), top), min(max(j, 0), top)

    def cell_bounds(self, i: int, j: int) -> tuple[float, float, float, float]:
        width = 2 * XDOT_RANGE / self.resolution
        height = 2 * THETADOT_RANGE / self.resolution
        left, bottom = -XDOT_RANGE + i * width, -THETADOT_RANGE + j * height
        return left, left + width, bottom, bottom + height

    def stable(self, sample: Sample, criterion: Criterion | None = None) -> bool:
        if criterion is None:
            return sample.stable(Criterion.POSITION, self.thresholds) and sample.stable(
                Criterion.ANGLE, self.thresholds
            )
        return sample.stable(criterion, self.thresholds)

    def tally(self, criterion: Criterion | None = None) -> np.ndarray:
        """+1 per stable and -1 per unstable sample in each cell."""
        grid = np.zeros((self.resolution, self.resolution), dtype=int)
        for sample in self.samples:
            grid[self.cell(sample.xdot0, sample.thetadot0)] += (
                1 if self.stable(sample, criterion) else -1
            )
        return grid

    def crash_rate(self) -> float:
        """Share of samples whose run crashed."""
        if not self.samples:
            return 0.0
        return sum(s.crashed for s in self.samples) / len(self.samples)

    def failure_rate(self, criterion: Criterion | None = None) -> float:
        """Share of samples that crashed or missed the criterion's threshold."""
        if not self.samples:
            return 0.0
        failed = sum(not self.stable(s, criterion) for s in self.samples)
        return failed / len(self.samples)


def _sample(cfg: ScenarioConfig, seed: int, index: int, gains) -> Sample:
    child = derive_seed(seed, index)
    rng = np.random.default_rng(child)
    xdot0 = float(rng.uniform(-XDOT_RANGE, XDOT_RANGE))
    thetadot0 = float(rng.uniform(-THETADOT_RANGE, THETADOT_RANGE))
    return _simulate_sample(cfg, child, xdot0, thetadot0, gains)


def _simulate_sample(
    cfg: ScenarioConfig, seed: int, xdot0: float, thetadot0: float, gains
) -> Sample:
    theta_e = cfg.kind.theta
    trace = run(replace(cfg, x0=(cfg.x_ref, xdot0, theta_e, thetadot0), seed=seed), gains)
    x_final, theta_final = np.abs(trace.errors[-1])
    _, U_tot, u_sat = integral_metrics(trace)
    return Sample(
        xdot0=xdot0,
        thetadot0=thetadot0,
        crashed=trace.status is Status.CRASHED,
        x_final=float(x_final),
        theta_final=float(theta_final),
        u_sat=u_sat,
        U_tot=U_tot,
    )


def _scan_chunk(cfg: ScenarioConfig, seed: int, indices: Sequence[int]) -> list[Sample]:
    gains = synthesize(cfg.model(), cfg.weights)
    return [_sample(cfg, seed, i, gains) for i in indices]


def _scan_points(
    cfg: ScenarioConfig, seed: int, points: Sequence[tuple[int, float, float]]
) -> list[Sample]:
    gains = synthesize(cfg.model(), cfg.weights)
    return [_simulate_sample(cfg, derive_seed(seed, i), xd, td, gains) for i, xd, td in points]


def stability_scan(
    cfg: ScenarioConfig,
    samples: int,
    resolution: int = 80,
    seed: int = 0,
    thresholds: ScanThresholds = ScanThresholds(),
    workers: int | None = None,
    points: Iterable[tuple[float, float]] | None = None,
) -> StabilityMap:
    """
    Run the closed loop from random initial velocities over the sample space
    and tally the outcome per grid cell.

    `points` replaces the random draws with fixed (ẋ₀, θ̇₀) pairs.
    """
    if samples < 1:
        raise ConfigurationError(f"must be >= 1, got {samples}", key="scan.samples")
    if resolution < 1:
        raise ConfigurationError(f"must be >= 1, got {resolution}", key="scan.resolution")

    chunk = max(1, samples // (4 * (workers or 4)))
    if points is not None:
        fixed = [(i, xd, td) for i, (xd, td) in enumerate(points)][:samples]
        jobs = [partial(_scan_points, cfg, seed, part) for part in chunked(fixed, chunk)]
    else:
        jobs = [partial(_scan_chunk, cfg, seed, part) for part in chunked(range(samples), chunk)]

    logger.info("scanning %d samples of %s in %d chunks", samples, cfg.variant.value, len(jobs))
    if workers == 1:
        results = [job() for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_call, jobs))

    return StabilityMap(resolution, tuple(flatten(results)), thresholds)


def _call(job: partial) -> list[Sample]:
    return job()


def cross(o: tuple[float, float], a: tuple[float, float], b: tuple[float, float]) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: Iterable[tuple[float, float]]) -> list[tuple[float, float]]:
    """
    Counter-clockwise hull without collinear vertices.

    >>> convex_hull([(0, 0), (1, 0), (1, 1), (0, 1), (0.5, 0.5)])
    [(0, 0), (1, 0), (1, 1), (0, 1)]
    >>> convex_hull([(0, 0), (1, 1), (2, 2)])
    [(0, 0), (2, 2)]
    """
    unique = sorted(set(points))
    if len(unique) < 3:
        return unique

    def half(ordered: list[tuple[float, float]]) -> list[tuple[float, float]]:
        chain: list[tuple[float, float]] = []
        for p in ordered:
            while len(chain) >= 2 and cross(chain[-2], chain[-1], p) <= 0:
                chain.pop()
            chain.append(p)
        return chain

    lower, upper = half(unique), half(unique[::-1])
    return lower[:-1] + upper[:-1]


def shoelace_area(polygon: Sequence[tuple[float, float]]) -> float:
    """
    >>> shoelace_area([(0, 0), (1, 0), (1, 1), (0, 1)])
    1.0
    >>> shoelace_area([(0, 0), (2, 2)])
    0.0
    """
    if len(polygon) < 3:
        return 0.0
    twice = sum(
        x0 * y1 - x1 * y0
        for (x0, y0), (x1, y1) in zip(polygon, [*polygon[1:], polygon[0]])
    )
    return abs(twice) / 2


@dataclass(frozen=True)
class HullReport:
    criterion: Criterion | None
    hull: list[tuple[float, float]]
    area: float
    area_ratio: float
    crash_rate: float
    failure_rate: float
    cells: int


def isolated(cells: set[tuple[int, int]], radius: int) -> set[tuple[int, int]]:
    """
    >>> sorted(isolated({(0, 0), (1, 1), (9, 9)}, 2))
    [(9, 9)]
    """
    return {
        (i, j)
        for i, j in cells
        if not any(
            (i + di, j + dj) in cells
            for di in range(-radius, radius + 1)
            for dj in range(-radius, radius + 1)
            if (di, dj) != (0, 0)
        )
    }


def hull_and_rates(
    smap: StabilityMap, criterion: Criterion | None = None, radius: int = 2
) -> HullReport:
    tally = smap.tally(criterion)
    stable = {(int(i), int(j)) for i, j in zip(*np.nonzero(tally > 0))}
    kept = stable - isolated(stable, radius)

    points = [
        (s.xdot0, s.thetadot0)
        for s in smap.samples
        if smap.cell(s.xdot0, s.thetadot0) in kept and smap.stable(s, criterion)
    ]
    hull = convex_hull(points)
    area = shoelace_area(hull)
    logger.debug(
        "%s: %d stable cells, %d kept, area %.3f",
        criterion.value if criterion else "x_final+theta_final",
        len(stable),
        len(kept),
        area,
    )
    return HullReport(
        criterion=criterion,
        hull=hull,
        area=area,
        area_ratio=area / SAMPLE_SPACE_AREA,
        crash_rate=smap.crash_rate(),
        failure_rate=smap.failure_rate(criterion),
        cells=len(kept),
    )


def criterion_reports(smap: StabilityMap, radius: int = 2) -> dict[str, HullReport]:
    """Hull reports for the combined classification and for every single criterion."""
    reports = {"combined": hull_and_rates(smap, None, radius)}
    for criterion in Criterion:
        reports[criterion.value] = hull_and_rates(smap, criterion, radius)
    return reports

