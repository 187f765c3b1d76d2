"""Error taxonomy shared across the package.

Every raisable condition maps to one of these classes so that callers (and the
command-line harness, which turns them into exit codes) can tell apart bad
arguments, violated mathematical preconditions, resource guards and degenerate
inputs without string matching.
"""

from __future__ import annotations


class LabError(Exception):
    """Base class for all package-specific errors."""


class InvalidArgument(LabError, ValueError):
    """An argument is outside its documented domain (wrong sign, wrong shape...)."""


class PreconditionViolation(LabError, ValueError):
    """A mathematical precondition of the requested operation does not hold.

    Example: asking for the non-expansiveness check with a step size larger
    than 2/L, or applying a convexity-only check to a non-convex loss.
    """


class ResourceLimitExceeded(LabError, RuntimeError):
    """The exact/enumerative code path would exceed its hard budget."""


class DegenerateDataError(LabError, ValueError):
    """The dataset does not carry enough information for the requested quantity."""


class ConfigError(LabError, ValueError):
    """A harness configuration file is malformed or inconsistent."""
