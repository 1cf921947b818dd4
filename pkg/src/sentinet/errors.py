"""Exception hierarchy shared by every sentinet module.

Each class carries a short machine-readable ``category`` used by the CLI
for exit reporting.
"""


class SentinetError(Exception):
    category = "error"


class ShapeError(SentinetError):
    """Tensor/layer geometry does not compose."""

    category = "shape"


class ConfigError(SentinetError):
    """Unknown architecture family, bad CLI/TOML configuration."""

    category = "config"


class DataError(SentinetError):
    """Dataset-level problem: empty set, size mismatch, duplicate ids."""

    category = "data"


class LabelError(DataError):
    """A label outside {0, 1}."""

    category = "label"


class ScoreError(DataError):
    """Non-finite score fed to the sample filter."""

    category = "score"


class ParameterError(SentinetError):
    """Out-of-range layer hyperparameter."""

    category = "parameter"


class FormatError(SentinetError):
    """Unsupported or corrupt image/feature file."""

    category = "format"


class ParseError(FormatError):
    """Malformed manifest or report line; message names the line."""

    category = "parse"


class CheckpointError(SentinetError):
    """Corrupt, truncated, or version-mismatched checkpoint."""

    category = "checkpoint"


class DegenerateFilterError(DataError):
    """A filtering round removed every training sample."""

    category = "degenerate-filter"


class IoError(SentinetError):
    """Filesystem write/read failure surfaced by a CLI command."""

    category = "io"
