"""Shared exception base for the flownet package.

Module-specific errors subclass :class:`FlowNetError` so callers (notably the
CLI) can catch everything that counts as a domain/input failure in one place.
"""


class FlowNetError(Exception):
    """Base class for all flownet domain errors."""
