"""Exception hierarchy shared across the pipeline.

Each class carries the CLI exit code used when the error surfaces
uncaught from a stage (0 success, 1 usage, 2 validation, 3 provider,
4 I/O).
"""


class AnomforgeError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 1


class ValidationError(AnomforgeError):
    """Malformed or contract-violating input (config, ontology, masks, ...)."""

    exit_code = 2


class ProviderError(AnomforgeError):
    """An inference provider failed, returned garbage, or is unreachable."""

    exit_code = 3


class StorageError(AnomforgeError):
    """Dataset files could not be read or written."""

    exit_code = 4
