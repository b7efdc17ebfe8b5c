"""Exception types raised by the samplers."""


class ExactQueueError(Exception):
    pass


class InvalidParameters(ExactQueueError, ValueError):
    pass


class Unstable(ExactQueueError, ValueError):
    """Traffic intensity is not below the number of servers."""


class NoRoot(ExactQueueError, ArithmeticError):
    """A tilting root could not be bracketed."""


class InvalidDriftConstant(ExactQueueError, ValueError):
    pass


class MgfUnavailable(ExactQueueError, ValueError):
    """Service law has no finite moment generating function near the origin."""


class BudgetExceeded(ExactQueueError, RuntimeError):
    """A safety cap on simulated steps was hit. Diagnostic only."""


class NoValidTruncation(ExactQueueError, ValueError):
    pass


class NotApplicable(ExactQueueError, ValueError):
    pass


class InsufficientData(ExactQueueError, ValueError):
    pass
