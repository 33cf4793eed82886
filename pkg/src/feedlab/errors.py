"""Exception hierarchy shared across the platform.

Every error carries a stable machine-readable ``code`` so the HTTP layer can
serialize it as ``{code, message}`` without inspecting types.
"""

from __future__ import annotations


class FeedlabError(Exception):
    """Base class; ``code`` is the wire-format error identifier."""

    code = "internal_error"
    http_status = 500

    def __init__(self, message: str = ""):
        super().__init__(message or self.__class__.__name__)
        self.message = message or self.__class__.__name__


class ConfigError(FeedlabError):
    code = "invalid_config"
    http_status = 400


class MissingEntitySet(ConfigError):
    code = "missing_entity_set"


class DrawTooLarge(ConfigError):
    code = "draw_too_large"


class EmptyConditions(ConfigError):
    code = "empty_conditions"


class DuplicateSlug(ConfigError):
    code = "duplicate_slug"
    http_status = 409


class PositionOutOfRange(ConfigError):
    code = "position_out_of_range"


class MissingColumn(FeedlabError):
    code = "missing_column"
    http_status = 400


class DuplicateEntityId(FeedlabError):
    code = "duplicate_entity_id"
    http_status = 400


class EmptyFile(FeedlabError):
    code = "empty_file"
    http_status = 400


class ExperimentClosed(FeedlabError):
    code = "experiment_closed"
    http_status = 410


class UnknownSlug(FeedlabError):
    code = "unknown_slug"
    http_status = 404


class UnknownExperiment(FeedlabError):
    code = "unknown_experiment"
    http_status = 404


class UnknownSession(FeedlabError):
    code = "unknown_session"
    http_status = 404


class UnknownEntity(FeedlabError):
    code = "unknown_entity"
    http_status = 400


class PhaseViolation(FeedlabError):
    code = "phase_violation"
    http_status = 409


class MissingResponse(FeedlabError):
    code = "missing_response"
    http_status = 400


class InvalidResponse(FeedlabError):
    code = "invalid_response"
    http_status = 400


class WorldMismatch(FeedlabError):
    code = "world_mismatch"
    http_status = 409


class EmptyInput(FeedlabError):
    code = "empty_input"
    http_status = 400


class NoData(FeedlabError):
    code = "no_data"
    http_status = 404


class MissingParticipant(FeedlabError):
    code = "missing_participant"
    http_status = 400


class Unauthorized(FeedlabError):
    code = "unauthorized"
    http_status = 401
