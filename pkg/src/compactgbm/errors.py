"""Exception hierarchy. Every error carries its class name, which the CLI
prints verbatim on failure."""


class CompactGBMError(Exception):
    pass


class EmptyColumn(CompactGBMError):
    pass


class UnsupportedWidth(CompactGBMError):
    pass


class IndexOutOfRange(CompactGBMError, IndexError):
    pass


class AllMissing(CompactGBMError):
    pass


class UnexpectedMissing(CompactGBMError):
    pass


class ResizeNoop(CompactGBMError):
    pass


class InvalidResizeTarget(CompactGBMError):
    pass


class StaleBinning(CompactGBMError):
    pass


class ShapeMismatch(CompactGBMError):
    pass


class InvalidLabel(CompactGBMError):
    pass


class EmptyDataset(CompactGBMError):
    pass


class DivergenceDetected(CompactGBMError):
    pass


class ConfigError(CompactGBMError):
    pass


class SchemaMismatch(CompactGBMError):
    pass


class SchemaError(SchemaMismatch):
    pass


class DuplicateKey(CompactGBMError):
    pass


class DegenerateLabels(CompactGBMError):
    pass


class InvalidFoldCount(CompactGBMError):
    pass


class ParseError(CompactGBMError):
    pass


class VersionError(CompactGBMError):
    pass
