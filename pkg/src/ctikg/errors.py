"""Exception hierarchy shared across the pipeline stages."""


class CTIKGError(Exception):
    """Base class for every error raised by this package."""
