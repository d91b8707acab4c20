"""
Exception hierarchy for the construction engine.

Library modules raise these; the CLI maps them to exit codes.
"""

from typing import Any, Optional, Sequence


class CitlError(Exception):
    """Base class for all engine errors."""

    exit_code: int = 1


class GridError(CitlError, ValueError):
    """Grid sizes violate the sampling invariants."""

    exit_code = 2

    def __init__(self, problems: Sequence[str]):
        super().__init__("invalid grid: " + "; ".join(problems))
        self.problems = tuple(problems)


class UnsupportedOrderError(CitlError, ValueError):
    """Requested derivative order exceeds the supported depth."""

    def __init__(self, order: int, max_order: int = 4):
        super().__init__(f"derivative order {order} exceeds supported depth {max_order}")
        self.order = order
        self.max_order = max_order


class NyquistError(CitlError):
    """Effective frequency too high for the grid."""

    exit_code = 2

    def __init__(self, guard: str, frequency: float, limit: float):
        super().__init__(f"{guard}: effective frequency {frequency:g} exceeds limit {limit:g}")
        self.guard = guard
        self.frequency = frequency
        self.limit = limit


class NormalizationError(CitlError):
    """A building block failed one of its defining identities."""

    def __init__(self, what: str, value: float, tolerance: float):
        super().__init__(f"{what}: deviation {value:.3e} exceeds {tolerance:.1e}")
        self.what = what
        self.value = value
        self.tolerance = tolerance


class ChartError(CitlError):
    """The flow-map gradient is not invertible somewhere in a chart."""

    def __init__(self, chart: int, condition: float, t: float, x: Sequence[float]):
        coords = ", ".join(f"{c:.4f}" for c in x)
        super().__init__(
            f"chart {chart}: condition number {condition:.3e} at t={t:.4f}, x=({coords})"
        )
        self.chart = chart
        self.condition = condition
        self.t = t
        self.x = tuple(x)


class ResolutionError(CitlError):
    """A transition band is thinner than the grid can resolve."""

    exit_code = 2

    def __init__(self, band: str, cells: float, minimum: float = 2.0):
        super().__init__(f"{band} transition spans {cells:.2f} cells (need >= {minimum:g})")
        self.band = band
        self.cells = cells
        self.minimum = minimum


class AssumptionViolation(CitlError, ValueError):
    """Lebesgue indices violate a standing assumption (not mere infeasibility)."""

    exit_code = 2

    def __init__(self, condition: str, detail: Optional[str] = None):
        message = f"assumption violated: {condition}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)
        self.condition = condition
        self.detail = detail


class InfeasibleError(CitlError):
    """The exponent windows are empty."""

    exit_code = 2


class CapacityError(CitlError):
    """No admissible μ fits the grid."""

    exit_code = 2

    def __init__(self, guard: str, detail: Any = None):
        super().__init__(f"grid capacity exhausted by {guard}" + (f": {detail}" if detail else ""))
        self.guard = guard
        self.detail = detail


class InitialDataError(CitlError, ValueError):
    """Initial density does not satisfy the constant-mean hypothesis."""

    exit_code = 2


class ConfigError(CitlError):
    """Run configuration could not be loaded or validated."""

    exit_code = 2
