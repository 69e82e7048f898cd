from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, cast

import numpy as np
from parse import Parser, Result


class PendulumError(Exception):
    """Base class for every error raised by this project."""


class ConfigurationError(PendulumError, ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = ""
        if key is not None:
            where = f"{key}: "
        if line is not None:
            where = f"line {line}: {where}"
        super().__init__(f"{where}{message}")


class DomainError(PendulumError, ValueError):
    pass


class SingularityError(DomainError):
    pass


class NumericalFault(PendulumError, ArithmeticError):
    pass


class FilterDivergence(NumericalFault):
    pass


class SynthesisError(PendulumError, ArithmeticError):
    pass


class ResidualError(SynthesisError):
    def __init__(self, residual: float, tolerance: float):
        self.residual = residual
        super().__init__(f"Riccati residual {residual:.3e} exceeds {tolerance:.1e}")


def get_input(name: str) -> Path:
    return Path(__file__).parent / "inputs" / name


def read_lines(path: Path) -> Iterator[str]:
    with path.open() as f:
        for line in f:
            yield line.rstrip()


def require_finite(values: np.ndarray, what: str = "state") -> np.ndarray:
    """
    >>> require_finite(np.array([1.0, 2.0]))
    array([1., 2.])
    >>> require_finite(np.array([1.0, np.nan]))  # doctest: +IGNORE_EXCEPTION_DETAIL
    Traceback (most recent call last):
    NumericalFault: non-finite state
    """
    if not np.all(np.isfinite(values)):
        raise NumericalFault(f"non-finite {what}: {values}")
    return values


def derive_seed(seed: int, index: int) -> int:
    """
    Independent child seed for the index-th run of an experiment seeded with `seed`.

    >>> derive_seed(7, 3) == derive_seed(7, 3)
    True
    >>> derive_seed(7, 3) != derive_seed(7, 4)
    True
    """
    sequence = np.random.SeedSequence(seed, spawn_key=(index,))
    return int(sequence.generate_state(1, np.uint64)[0])


@dataclass
class strict:
    parser: Parser

    def match(self, string: str) -> Result | None:
        return cast(Result | None, self.parser.parse(string))
