"""Exception and warning types shared across the package."""


class DpatlasError(Exception):
    """Base class for every error raised by this package."""


class FormatError(DpatlasError):
    """Malformed or unrecognized volume container or manifest."""


class UnsupportedDatatype(DpatlasError):
    """Volume file declares a datatype outside the supported subset."""


class LabelRangeError(DpatlasError):
    """A label payload contains values outside [0, num_labels)."""


class IoError(DpatlasError):
    """Underlying I/O failure while reading or writing a file."""


class GridMismatch(DpatlasError):
    """Volumes that must share one grid have different dims or spacing."""


class EmptyPopulation(DpatlasError):
    """An operation that needs subjects received none (or too few)."""


class RegionMissing(DpatlasError):
    """A requested region label does not occur in the volume."""


class InsufficientSurface(DpatlasError):
    """A region exposes fewer boundary faces than vertices requested."""


class CorrespondenceError(DpatlasError):
    """Vertex sets are not in index-level correspondence."""


class ClusteringFailed(DpatlasError):
    """Message passing produced no usable exemplar structure."""


class EmptyCluster(DpatlasError):
    """A cluster average was requested over zero members."""


class IntegrityError(DpatlasError):
    """Stored content hashes do not match the files on disk."""


class DegenerateSupport(DpatlasError):
    """A correlation support mask selects fewer than two voxels."""


class InvalidDistribution(DpatlasError):
    """A discrete distribution has negative or zero total mass."""


class InsufficientPairs(DpatlasError):
    """Too few nonzero paired differences for a signed-rank test."""


class LayoutError(DpatlasError):
    """Phantom shapes cannot be placed on the requested grid."""


class DegenerateMaskWarning(UserWarning):
    """A derived mask came out empty."""


class ZeroVarianceWarning(UserWarning):
    """A correlation input was constant over its support; score set to 0."""


class StratificationWarning(UserWarning):
    """Stratified splitting fell back to a simple split."""


class EmptyRegionWarning(UserWarning):
    """A metric was evaluated on an empty region; conservative value used."""
