"""Exception hierarchy shared by the whole package.

The CLI maps these onto process exit codes: InputError means the caller
handed us something malformed (bad file, bad shape, bad config) and maps
to exit code 2; NumericalError means the data defeated the numerics
(singular system after jitter, degenerate signals) and maps to exit 3.
"""


class IkdlError(Exception):
    """Base class for all errors raised by this package."""


class InputError(IkdlError):
    """Malformed input: files, shapes, parameters or configuration."""


class NumericalError(IkdlError):
    """Numerical failure that survived the built-in safeguards."""
