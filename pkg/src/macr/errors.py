"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations


class MacrError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(MacrError):
    """Bad configuration or input that fails a declared invariant."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class RecordError(ValidationError):
    """A dataset record could not be parsed."""

    def __init__(self, line: int, field: str, message: str):
        self.line = line
        super().__init__(field, f"line {line}: {message}")


class TransportError(MacrError):
    """Network-level failure that persisted through every retry."""


class ProviderError(MacrError):
    def __init__(self, status: int, body: str = ""):
        self.status = status
        self.body = body
        super().__init__(f"provider returned HTTP {status}: {body[:200]}")


class EmptyOutputError(MacrError):
    """The model returned an empty completion."""


class DimensionError(MacrError):
    def __init__(self, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(f"embedding dimension mismatch: expected {expected}, got {actual}")


class DebateError(MacrError):
    def __init__(self, round_no: int, role: str, cause: BaseException, generation_index: int | None = None):
        self.round_no = round_no
        self.role = role
        self.cause = cause
        self.generation_index = generation_index
        where = f"round {round_no}, role {role}"
        if generation_index is not None:
            where = f"generation {generation_index}, " + where
        super().__init__(f"debate failed at {where}: {cause}")


class LabelParseError(MacrError):
    def __init__(self, raw: list[str]):
        self.raw = list(raw)
        super().__init__("could not parse a risk label from completions: " + " | ".join(repr(r[:120]) for r in raw))


class CoverageError(MacrError):
    def __init__(self, level: str):
        self.level = level
        super().__init__(f"no demonstration candidates for risk level {level!r}")


class StratumError(MacrError):
    def __init__(self, missing: list):
        self.missing = list(missing)
        super().__init__(f"empty strata: {self.missing}")


class StageError(MacrError):
    def __init__(self, stage: str, tree_id: str, cause: BaseException):
        self.stage = stage
        self.tree_id = tree_id
        self.cause = cause
        super().__init__(f"stage {stage!r} failed for tree {tree_id!r}: {cause}")
