"""Error types shared across the package.

Plain ``ValueError`` is used for contract violations inside numeric
operations (bad shapes, out-of-range timesteps).  The types below exist so
the CLI can map failures to its documented exit codes.
"""


class DataError(Exception):
    """Unusable input data: manifests, images, checkpoints, caches."""


class UsageError(Exception):
    """Invalid command invocation that click itself cannot catch."""
