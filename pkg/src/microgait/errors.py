"""Exception hierarchy for planning and simulation failures."""


class MicrogaitError(Exception):
    """Base class for all package errors."""


class ModelStateMismatchError(MicrogaitError):
    """State dimensions do not match the robot model."""


class DomainError(MicrogaitError):
    """Curve evaluated outside its time window."""


class UnreachableTargetError(MicrogaitError):
    """IK target outside the limb workspace or solver did not converge."""


class JointLimitError(MicrogaitError):
    """IK solution pinned against a joint limit with residual error."""


class InfeasibleTrajectoryError(MicrogaitError):
    """No feasible swing trajectory found from any optimizer start."""


class SingularityError(MicrogaitError):
    """Effective inertia or a support Jacobian dropped below the
    singularity threshold, or a support anchor left the limb workspace.

    Carries enough context to report where the plan broke down.
    """

    def __init__(self, message, time=None, limb=None):
        super().__init__(message)
        self.time = time
        self.limb = limb


class PlanAssemblyError(MicrogaitError):
    """Plan assembly failed; carries the phase index and underlying cause."""

    def __init__(self, message, phase_index=None, cause=None):
        super().__init__(message)
        self.phase_index = phase_index
        self.cause = cause


class NumericalBlowupError(MicrogaitError):
    """Integrator produced a non-finite state."""

    def __init__(self, message, time=None, diagnostics=None):
        super().__init__(message)
        self.time = time
        self.diagnostics = diagnostics or {}


class ConfigError(MicrogaitError):
    """Malformed robot or scenario config; message names the field."""


class ComparisonInvalidError(MicrogaitError):
    """Scenario configs differ in more than mode/alpha; ratios undefined."""
