"""
Exception types raised across the task-specific training code
"""


class TsslError(Exception):
    """Base class for all errors raised by this package"""


class InputError(TsslError, ValueError):
    """Invalid arguments: dimension mismatch, empty inputs, bad ranges"""


class ConfigError(TsslError, ValueError):
    """Invalid experiment configuration or environment settings"""


class FormatError(TsslError, ValueError):
    """Malformed TSSM / TSSD file"""


class DegenerateNeighborhood(TsslError):
    """A query point has no training data inside its kernel neighborhood"""

    def __init__(self, query_index: int, message: str = ""):
        self.query_index = query_index
        super().__init__(
            message or f"No training data near query point {query_index}; "
            "the point lies outside the support of the sampling measure"
        )


class TotallyLostSupport(TsslError):
    """Every support point is far away from every training point"""


class NumericalOverflow(TsslError, ArithmeticError):
    """A non-finite value appeared while evaluating a model or its gradient"""

    def __init__(self, block: str, context: str = ""):
        self.block = block
        self.context = context
        suffix = f" ({context})" if context else ""
        super().__init__(f"Non-finite values in block '{block}'{suffix}")

    def with_context(self, context: str) -> "NumericalOverflow":
        return NumericalOverflow(self.block, context)


class DivergedRollout(TsslError):
    """A task produced a non-finite state"""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"Non-finite state at step {step}")


class ConvergenceFailure(TsslError):
    """An iterative task did not converge within its iteration budget"""

    def __init__(self, displacement: float, iterations: int):
        self.displacement = displacement
        self.iterations = iterations
        super().__init__(
            f"No convergence after {iterations} iterations "
            f"(last displacement {displacement:.3e})"
        )
