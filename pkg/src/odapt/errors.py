"""Exception types shared across the package, mapped to CLI exit codes."""

from __future__ import annotations


class ConfigError(ValueError):
    """Bad or inconsistent configuration. CLI exit code 2."""


class ContractViolationError(RuntimeError):
    """A hard invariant was broken, e.g. frozen weights changed. CLI exit code 3."""


class MissingArtifactError(FileNotFoundError):
    """A required dataset, checkpoint, or results file is absent. CLI exit code 4."""


class DatasetCorruptionError(RuntimeError):
    """On-disk dataset bytes do not match the manifest. CLI exit code 4."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""
