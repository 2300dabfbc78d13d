"""Exception hierarchy shared across the package.

The CLI maps ValidationError to exit code 1 and ProviderError to exit code 2.
"""


class GemError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(GemError):
    """Bad inputs: shape mismatches, malformed files, out-of-contract values."""


class ProviderError(GemError):
    """A provider (local or remote) failed to answer a request."""
