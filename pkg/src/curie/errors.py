"""Common exception root for the curie package.

Every package-specific exception derives from :class:`CurieError` so
callers (and the CLI) can distinguish expected failures from bugs.
"""


class CurieError(Exception):
    """Base class for all errors raised by this package."""
