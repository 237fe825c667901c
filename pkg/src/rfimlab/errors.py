"""Shared exception types."""


class CapacityError(Exception):
    """A requested computation exceeds a configured size cap."""
