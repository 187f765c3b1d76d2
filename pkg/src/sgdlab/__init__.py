"""sgdlab: a numerical laboratory for the stability and generalization of
projected stochastic gradient descent.

Losses with Hölder-continuous (sub)gradients, projected/proximal SGD runners
driven by counter-based RNG streams, coupled-trajectory stability estimators
with an exact enumeration oracle, closed-form bound calculators, and a CLI
harness that gates measurements against the bounds.
"""

from .errors import (
    ConfigError,
    DegenerateDataError,
    InvalidArgument,
    LabError,
    PreconditionViolation,
    ResourceLimitExceeded,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegenerateDataError",
    "InvalidArgument",
    "LabError",
    "PreconditionViolation",
    "ResourceLimitExceeded",
    "__version__",
]
