"""Exception hierarchy shared by all modules."""


class IofSmpcError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(IofSmpcError, ValueError):
    pass


class NotPSD(IofSmpcError, ValueError):
    """A matrix required to be symmetric positive (semi)definite is not."""

    def __init__(self, name, reason=""):
        self.name = name
        msg = f"matrix {name!r} is not positive definite"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class PreconditionViolated(IofSmpcError, ValueError):
    pass


class NoConvergence(IofSmpcError, RuntimeError):
    def __init__(self, iterations, residual, what="iteration"):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"{what} did not converge after {iterations} iterations "
            f"(residual {residual:.3e})"
        )


class SingularInnovation(IofSmpcError, RuntimeError):
    pass


class UnstableDynamics(IofSmpcError, ValueError):
    pass


class DomainError(IofSmpcError, ValueError):
    pass


class InfeasibleTightening(IofSmpcError, ValueError):
    def __init__(self, kind, index, step, value):
        self.kind = kind
        self.index = index
        self.step = step
        self.value = value
        where = "infinity" if step is None else f"step {step}"
        super().__init__(
            f"{kind} constraint {index}: tightening {value:.6g} >= 1 at {where} "
            "(tightened half-space is empty)"
        )


class NumericalBreakdown(IofSmpcError, RuntimeError):
    pass


class MaxIterations(IofSmpcError, RuntimeError):
    def __init__(self, message, best=None):
        self.best = best
        super().__init__(message)


class EmptySet(IofSmpcError, ValueError):
    pass


class QpInfeasible(IofSmpcError, RuntimeError):
    """Raised by controllers when the MPC problem has no feasible point.

    ``context`` carries whatever the caller knows (time step, seed, problem dump).
    """

    def __init__(self, message, context=None):
        self.context = dict(context or {})
        super().__init__(message)


class ConfigError(IofSmpcError, ValueError):
    pass
