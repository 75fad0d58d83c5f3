"""Exception types shared across the package."""


class AfemError(Exception):
    """Base class for all package-specific errors."""


class StructureError(AfemError):
    """Mesh connectivity is invalid (non-conforming input, bad indices)."""


class GeometryError(AfemError):
    """Degenerate or inverted element geometry."""


class LineageError(AfemError):
    """Two meshes/spaces do not belong to the same refinement lineage."""


class ContractError(AfemError):
    """A numerical contract was violated (non-SPD system, energy increase)."""
