"""Exception hierarchy shared by every skelbench module."""


class SkelbenchError(Exception):
    """Base class for all errors raised by skelbench."""


class EmptyMaskError(SkelbenchError, ValueError):
    pass


class DimensionMismatchError(SkelbenchError, ValueError):
    pass


class ShapeMismatchError(SkelbenchError, ValueError):
    pass


class OddSpatialDimsError(ShapeMismatchError):
    pass


class ChannelCountError(ShapeMismatchError):
    pass


class AllRejectedError(SkelbenchError, ValueError):
    """Every candidate offset was rejected by the overlap constraint."""


class InvalidConfigError(SkelbenchError, ValueError):
    pass


class EmptyDatasetError(SkelbenchError, ValueError):
    pass


class NonFiniteLossError(SkelbenchError, FloatingPointError):
    pass


class SizeMismatchError(ShapeMismatchError):
    pass


class ModelFormatError(SkelbenchError, ValueError):
    """Base class for unreadable model files."""


class BadMagicError(ModelFormatError):
    pass


class VersionMismatchError(ModelFormatError):
    pass


class TruncatedFileError(ModelFormatError):
    pass


class MissingPairError(SkelbenchError, LookupError):
    def __init__(self, stem, where=None):
        self.stem = stem
        msg = f"no matching file for stem {stem!r}"
        if where:
            msg += f" in {where}"
        super().__init__(msg)


class EmptyDirectoryError(SkelbenchError, FileNotFoundError):
    pass


class DegenerateSplitError(SkelbenchError, ValueError):
    pass


class GenerationFailureError(SkelbenchError, RuntimeError):
    pass


class PNGDecodeError(SkelbenchError, OSError):
    pass
