"""Exception taxonomy shared by all slsim modules."""


class SlsimError(Exception):
    """Base class for all slsim errors."""


class ConfigError(SlsimError):
    """Config file is unreadable, has unknown keys, or fails validation."""


class DepthNonPositive(SlsimError):
    """Point projects at or behind the device plane."""


class IndexOutOfRange(SlsimError):
    """Code index outside the representable range."""


class RasterMismatch(SlsimError):
    """Pattern raster does not match the projector raster."""


class LayoutMismatch(SlsimError):
    """Frame stack does not follow the white/black/bit-planes layout."""


class DegenerateGeometry(SlsimError):
    """Triangulation system is numerically singular."""


class ResolutionMismatch(SlsimError):
    """Two images that must share a resolution do not."""


class EmptyScene(SlsimError):
    """Scene contains no geometry to render."""


class CapacityExceeded(SlsimError):
    """Requested instance count exceeds the grid capacity or the 255 cap."""


class DoesNotFit(SlsimError):
    """Instance footprint exceeds the bin interior."""


class UnknownInstanceId(SlsimError):
    """Instance map references an id absent from the scene."""


class IoFailure(SlsimError):
    """Filesystem operation failed."""


class ConsistencyFailure(SlsimError):
    """Artifacts that must agree (e.g. resolutions) do not."""
