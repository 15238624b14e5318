"""Exception types shared across the package."""


class DriftlessError(Exception):
    """Base class for all package errors."""


class DimensionError(DriftlessError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigError(DriftlessError, ValueError):
    """A configuration value is out of range or inconsistent."""


class ContractError(DriftlessError, ValueError):
    """An input violates a documented precondition."""


class ScheduleError(DriftlessError, ValueError):
    """A timestep is out of schedule range or steps run in the wrong order."""


class GeometryError(DriftlessError, ValueError):
    """Window geometry is infeasible; carries nearby feasible window counts."""

    def __init__(self, message: str, admissible_k: tuple[int, ...] = ()):
        super().__init__(message)
        self.admissible_k = admissible_k


class CaptionValidationError(DriftlessError, ValueError):
    """A caption document violates the per-frame JSON contract."""


class TemplateError(DriftlessError, ValueError):
    """A prompt template is malformed or rendered with missing inputs."""
