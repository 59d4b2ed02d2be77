"""Exception types shared across the package."""


class GapQuantError(Exception):
    """Base class for all errors raised by this package."""


class MeshFormatError(GapQuantError):
    """Polydata file could not be parsed."""


class AttributeLengthError(MeshFormatError):
    """A per-vertex scalar array does not match the vertex count."""


class TopologyError(GapQuantError):
    """Mesh violates a topology precondition (manifoldness, orientation, paths)."""


class VolumeFormatError(GapQuantError):
    """Volume header/raw pair could not be parsed or is inconsistent."""


class ConfigError(GapQuantError):
    """Region configuration is invalid or inconsistent with the mesh."""


class AreaError(GapQuantError):
    """A single search area failed; other areas may still be quantified."""
