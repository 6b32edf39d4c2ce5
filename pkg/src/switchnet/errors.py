"""Exception hierarchy for model validation, certification and analysis."""


class SwitchnetError(Exception):
    """Base class for all package errors."""


class ValidationError(SwitchnetError):
    """Structural or configuration problem in user-supplied data."""


class DimensionMismatch(ValidationError):
    """Matrix or signal dimensions inconsistent with declarations."""


class SelfLoop(ValidationError):
    """A subsystem lists itself among its own neighbors."""


class DanglingEdge(ValidationError):
    """An internal input block has no matching source output block."""


class HorizonExceeded(ValidationError):
    """A table-backed signal was queried beyond its recorded horizon."""


class ConfigError(ValidationError):
    """Invalid pipeline configuration value."""


class SpecFormatError(ValidationError):
    """Malformed structured-text document."""


class InfeasibleError(SwitchnetError):
    """A certification or small-gain problem has no admissible solution."""


class SpectralRadiusTooLarge(InfeasibleError):
    """Closed-loop spectral radius above the certification threshold.

    Carries the offending radius and the threshold so callers can report
    how far the closed loop is from certifiability.
    """

    def __init__(self, radius, threshold, where=""):
        self.radius = float(radius)
        self.threshold = float(threshold)
        msg = f"closed-loop spectral radius {self.radius:.6g} >= threshold {self.threshold:.6g}"
        if where:
            msg += f" ({where})"
        super().__init__(msg)


class CertificateInfeasible(InfeasibleError):
    """Certificate scalars violate a feasibility requirement (e.g. tau*kappa >= 1)."""


class InfeasibleConditions(InfeasibleError):
    """Interconnection conditions cannot be met exactly for the given data."""


class RankDeficientP(InfeasibleError):
    """Projection matrix P does not have full column rank."""


class SingularGram(InfeasibleError):
    """B^T M B is singular; the interface gain is undefined."""


class SmallGainInfeasible(InfeasibleError):
    """No admissible weight vector exists for the requested decay rate.

    ``index`` and ``slack`` form the certificate of failure: the row of the
    weighted inequality that is violated and by how much.
    """

    def __init__(self, message, index=None, slack=None):
        super().__init__(message)
        self.index = index
        self.slack = slack


class MissingCertificate(ValidationError):
    """A subsystem in the topology has no local certificate."""


class NotNonnegative(ValidationError):
    """Gain operator has negative entries."""


class NumericalFailure(SwitchnetError):
    """A numerical solve finished with an out-of-tolerance residual."""
