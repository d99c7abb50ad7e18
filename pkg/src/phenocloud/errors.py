"""Shared exception hierarchy."""


class PhenocloudError(Exception):
    """Base class for all domain errors raised by this package."""


class CatalogError(PhenocloudError):
    """Malformed or invalid application catalog."""


class NotFoundError(PhenocloudError):
    """A requested application or version does not exist."""


class CycleError(PhenocloudError):
    """A dependency cycle was found while building an install plan."""

    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("dependency cycle: " + " -> ".join(self.cycle))


class DanglingDependencyError(PhenocloudError):
    """An entry depends on an application missing from the catalog."""
