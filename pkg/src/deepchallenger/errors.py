"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures onto its
documented exit codes: 1 for validation/configuration problems, 2 for
runtime/numeric failures.
"""

from __future__ import annotations


class DeepChallengerError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(DeepChallengerError):
    """Invalid configuration value (bad fraction, too few classes, ...)."""


class ManifestParseError(DeepChallengerError):
    """Malformed manifest line; message names the line number."""


class IntegrityError(DeepChallengerError):
    """Corpus-level integrity violation (duplicate ids, dangling frame refs)."""


class DataError(DeepChallengerError):
    """Unusable input data (no frames, undecodable image, empty selection)."""


class ConsistencyError(DeepChallengerError):
    """Pieces that must belong together do not (e.g. mismatched video ids)."""


class InputError(DeepChallengerError):
    """Invalid argument to a computation (e.g. label outside the class set)."""


class UnknownIdError(DeepChallengerError):
    """Lookup of an id that is not present in a store."""


class LeakageError(DeepChallengerError):
    """Exclusion-rule violation detected; training is refused."""


class ProvenanceError(DeepChallengerError):
    """Pipeline stage ordering or provenance-hash mismatch."""


class EncodingError(DeepChallengerError):
    """Backend failure while encoding a frame or caption."""

    exit_code = 2


class BackendUnavailableError(EncodingError):
    """A requested encoder backend (or its weights) cannot be loaded."""


class StoreError(DeepChallengerError):
    """Embedding store corruption or misuse."""

    exit_code = 2


class WeightsError(DeepChallengerError):
    """Model weight file is invalid or does not match the expected shape."""


class NumericError(DeepChallengerError):
    """Non-finite loss or other numeric breakdown during training."""

    exit_code = 2


class CrossValidationError(DeepChallengerError):
    """A fold runner failed; message names the fold index."""

    exit_code = 2
