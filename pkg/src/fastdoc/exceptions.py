"""Exception hierarchy shared by every fastdoc module."""


class FastDocError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(FastDocError, ValueError):
    pass


class NotPositiveDefinite(FastDocError, ArithmeticError):
    """A Cholesky pivot stayed non-positive after the allowed regularization.

    ``block`` is the block index inside the structure being factored and
    ``step`` names the backward-pass step (``"h_inverse"`` or ``"schur_solve"``)
    when raised from a derivative solver.
    """

    def __init__(self, message, block=None, step=None, pivot=None):
        super().__init__(message)
        self.block = block
        self.step = step
        self.pivot = pivot

    def tagged(self, block=None, step=None):
        err = NotPositiveDefinite(
            self.args[0],
            block=self.block if block is None else block,
            step=self.step if step is None else step,
            pivot=self.pivot,
        )
        return err

    def __str__(self):
        msg = super().__str__()
        tags = []
        if self.step is not None:
            tags.append(f"step={self.step}")
        if self.block is not None:
            tags.append(f"block={self.block}")
        return f"{msg} ({', '.join(tags)})" if tags else msg


class SingularSystem(FastDocError, ArithmeticError):
    def __init__(self, message, block=None, step=None):
        super().__init__(message)
        self.block = block
        self.step = step

    def __str__(self):
        msg = super().__str__()
        tags = []
        if self.step is not None:
            tags.append(f"step={self.step}")
        if self.block is not None:
            tags.append(f"block={self.block}")
        return f"{msg} ({', '.join(tags)})" if tags else msg


class EmptyInput(FastDocError, ValueError):
    pass


class RankDeficientSample(FastDocError):
    pass


class MissingPair(FastDocError, KeyError):
    pass


class DerivativeCheckError(FastDocError):
    """A user Jacobian callback disagrees with finite differences."""


class MaxIterations(FastDocError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class LineSearchFailure(FastDocError):
    pass


class InfeasibleActiveSet(FastDocError):
    pass


class ActiveSetChanged(FastDocError):
    pass


class NegativeWeight(FastDocError, ValueError):
    pass


class SteeringSingularity(FastDocError, ArithmeticError):
    pass


class GradientNonFinite(FastDocError, ArithmeticError):
    pass


class TrainingAborted(FastDocError):
    pass
