"""Exception types shared across the package."""


class FlownetError(Exception):
    """Base class for all package-specific errors."""


class StructuralError(FlownetError):
    """Malformed input: dimension mismatch, unknown link id, bad grid pairing.

    Distinct from a model-invariant violation, which is reported through a
    ValidityReport rather than raised.
    """


class CertificationError(FlownetError):
    """A numerical certificate could not be established (e.g. contraction
    factor not strictly below one)."""


class NonConvergenceError(FlownetError):
    """A fixed-point iteration exceeded its iteration cap."""

    def __init__(self, message: str, iterations: int, residual: float):
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class ScenarioFormatError(FlownetError):
    """Scenario file could not be parsed as a structured document."""


class ScenarioValidationError(FlownetError):
    """Scenario document parsed but violates semantic constraints.

    Carries every violation found, not just the first one.
    """

    def __init__(self, violations: list[str]):
        super().__init__(
            "invalid scenario: " + "; ".join(violations)
        )
        self.violations = list(violations)
