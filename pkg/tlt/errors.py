import logging
import sys
import traceback

import click


logger = logging.getLogger(__name__)


EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_CONFIGURATION = 3


def cli_error(exitcode: int, category: str, desc: str = "") -> int:
    """Log a categorized error line and return the exit code for it"""
    logger.error(f"Error {exitcode}: {category}. Description: {desc or 'none'}")
    click.echo(f"error[{category}]: {desc or category}", file=sys.stderr)
    return exitcode


def catchall_error_handler(exc: BaseException) -> int:
    """Generic error handler

    Tries to use the exception's own handler if it has one.
    If not, writes the exception and traceback to the log and returns
    the runtime failure exit code.
    """
    try:
        # If it's a custom tlt exception with a handler, use that handler
        return exc.__tlt_exception_handler__()

    except AttributeError:
        # Otherwise, it's unhandled and presumably unexpected.
        estr = "\n".join(traceback.format_exception(type(exc), exc, exc.__traceback__))
        logger.debug(
            f"catchall_error_handler(): exception '{exc}' (type {type(exc)}) does not have a __tlt_exception_handler__() method, exiting with {EXIT_RUNTIME}. Full exception details:\n{estr}"
        )
        return cli_error(EXIT_RUNTIME, "unhandled", str(exc) or type(exc).__name__)


class TltUsageError(Exception):
    def __init__(self, msg: str = ""):
        self.msg = msg

    def __str__(self):
        return self.msg

    def __tlt_exception_handler__(self):
        return cli_error(EXIT_USAGE, "usage", str(self))


class TltConfigurationError(Exception):
    def __init__(self, msg: str = ""):
        self.msg = msg

    def __str__(self):
        return self.msg

    def __tlt_exception_handler__(self):
        return cli_error(EXIT_CONFIGURATION, "configuration", str(self))


class DomainError(Exception):
    """An argument is outside the domain an operation is defined on"""

    def __init__(self, msg: str = ""):
        self.msg = msg

    def __str__(self):
        return self.msg

    def __tlt_exception_handler__(self):
        return cli_error(EXIT_RUNTIME, "domain", str(self))


class PreconditionError(Exception):
    def __init__(self, msg: str = ""):
        self.msg = msg

    def __str__(self):
        return self.msg

    def __tlt_exception_handler__(self):
        return cli_error(EXIT_RUNTIME, "precondition", str(self))


class CapabilityError(Exception):
    """A model handle lacks something an operation needs, e.g. input gradients"""

    def __init__(self, capability: str, handle=None):
        self.capability = capability
        self.handle = handle

    def __str__(self):
        return f"{type(self.handle).__name__} does not provide {self.capability}"

    def __tlt_exception_handler__(self):
        return cli_error(EXIT_RUNTIME, "capability", str(self))


class NumericError(Exception):
    """A non-finite value appeared

    term:           Name of the loss term or head that produced the value
    diagnostics:    Optional mapping of parameter names to summary strings
    """

    def __init__(self, term: str, diagnostics: dict = None):
        self.term = term
        self.diagnostics = diagnostics or {}

    def __str__(self):
        detail = "; ".join(f"{k}: {v}" for k, v in self.diagnostics.items())
        return f"Non-finite value in '{self.term}'" + (f" ({detail})" if detail else "")

    def __tlt_exception_handler__(self):
        return cli_error(EXIT_RUNTIME, "numeric", str(self))


class EstimandUndefinedError(Exception):
    def __init__(self, estimand: str, reason: str):
        self.estimand = estimand
        self.reason = reason

    def __str__(self):
        return f"The {self.estimand} estimand is undefined: {self.reason}"

    def __tlt_exception_handler__(self):
        return cli_error(EXIT_RUNTIME, "estimand-undefined", str(self))


class UntrainedModelError(Exception):
    def __init__(self, operation: str):
        self.operation = operation

    def __str__(self):
        return f"Refusing to run {self.operation} on a model that was never trained or loaded from a trained checkpoint"

    def __tlt_exception_handler__(self):
        return cli_error(EXIT_RUNTIME, "untrained-model", str(self))


class TrainingDivergedError(Exception):
    """The training objective became non-finite

    The model passed to fit() has already been restored to the last good
    parameters when this is raised; `checkpoint` holds those same parameters.
    """

    def __init__(self, epoch: int, step: int, checkpoint=None):
        self.epoch = epoch
        self.step = step
        self.checkpoint = checkpoint

    def __str__(self):
        return f"Training diverged at epoch {self.epoch}, step {self.step}; last good parameters retained"

    def __tlt_exception_handler__(self):
        return cli_error(EXIT_RUNTIME, "diverged", str(self))
