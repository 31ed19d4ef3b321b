# Copyright 2024, Clumio, a Commvault Company.
#

"""Common exceptions and constants for the membership-inference audit engine."""

from __future__ import annotations

import enum
import hashlib
import json
from typing import Any, Final

try:
    from enum import StrEnum
except ImportError:  # Python < 3.11.

    class StrEnum(str, enum.Enum):  # type: ignore[no-redef]
        """Backport of enum.StrEnum: members are str and format as their value."""

        __str__ = str.__str__
        __format__ = str.__format__

        @staticmethod
        def _generate_next_value_(name: str, start: int, count: int, last_values: list) -> str:
            return name.lower()

ENGINE_VERSION: Final = '1.0.0'
SCHEMA_VERSION: Final = 1
MIAT_MAGIC: Final = b'MIAT'
MIAT_VERSION: Final = 1

DEFAULT_FPR_TARGETS: Final = (0.001, 0.01, 0.1)
PROBABILITY_CLAMP: Final = 1e-12
FISHER_CLAMP: Final = 1e-7
VARIANCE_FLOOR_RATIO: Final = 0.05
VARIANCE_FLOOR_ABS: Final = 1e-8
COVARIANCE_SHRINKAGE: Final = 0.1
LABEL_ONLY_RIDGE: Final = 1.0
LABEL_ONLY_AUGMENTATIONS: Final = 18
CONTRASTIVE_REPEATS: Final = 6
NORMALIZATION_TOLERANCE: Final = 1e-6
CACHE_ENV_VAR: Final = 'MIAUDIT_CACHE'

STATUS_OK: Final = 200
STATUS_INVALID: Final = 400
STATUS_CONFLICT: Final = 409
STATUS_FAILED: Final = 500


class Error(Exception):
    """Base exception class."""


class ValidationError(Error):
    """Exception raised when an argument or a constructed value breaks an invariant."""


class BalanceError(ValidationError):
    """Exception raised when a membership assignment cannot be balanced."""


class ConfigError(Error):
    """Exception raised when an experiment configuration is malformed."""


class TrainingError(Error):
    """Exception raised when a trainer cannot run or a mechanism invariant fails."""


class AttackError(Error):
    """Exception raised when an attack cannot score a sample."""


class ArtifactError(Error):
    """Exception raised when a persisted artifact cannot be read or combined."""


def canonical_json(obj: Any) -> str:
    """Serialize to JSON with a stable key order and no insignificant whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(',', ':'))


def config_hash(obj: Any) -> str:
    """Return the hex digest identifying a JSON-serializable configuration."""
    return hashlib.sha256(canonical_json(obj).encode('utf-8')).hexdigest()[:16]


def status(code: int, msg: str, **extra: Any) -> dict[str, Any]:
    """Build the status dictionary returned by the command handlers."""
    return {'status': code, 'msg': msg, **extra}
