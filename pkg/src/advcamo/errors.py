"""Exception types shared across the package."""


class AdvCamoError(Exception):
    """Base class for all package errors."""


class DegeneratePose(AdvCamoError):
    """Camera pose cannot produce a usable view (coincident eye/target or
    the mesh projects to zero visible pixels)."""


class ShapeMismatch(AdvCamoError):
    """Spatially incompatible arrays (uv map / mask / background / features)."""


class ShapeError(AdvCamoError):
    """Invalid target shape, e.g. zero-size rescale output."""


class CropTooLarge(AdvCamoError):
    """Requested crop window exceeds the source image."""


class EmptySchedule(AdvCamoError):
    """Transform schedule has no entries."""


class FormatError(AdvCamoError):
    """Malformed file or record (OBJ, PNG, manifest, checkpoint, config)."""


class IoError(AdvCamoError):
    """Filesystem failure while reading or writing an artifact."""


class MissingFile(AdvCamoError):
    """A manifest entry points at a file that does not exist."""


class EmptyPitchClass(AdvCamoError):
    """A pitch angle with positive sampling weight has no dataset entries."""


class LayerNotExposed(AdvCamoError):
    """A requested attack layer is not provided by the victim."""


class VictimUnavailable(AdvCamoError):
    """The named victim adapter cannot be loaded."""


class VersionError(AdvCamoError):
    """Checkpoint or state file written by an incompatible version."""


class NonFiniteLoss(AdvCamoError):
    """The attack objective became NaN or infinite; run aborted."""


class EmptyText(AdvCamoError):
    """Text metric input contains no tokens."""


class JudgeUnavailable(AdvCamoError):
    """Judge endpoint failed after the retry budget was exhausted."""


class ParseError(AdvCamoError):
    """Judge reply could not be parsed into scores."""


class ConfigError(AdvCamoError):
    """Invalid run configuration."""
