"""Exception hierarchy. Each class carries the CLI exit code it maps to."""

from __future__ import annotations


class RankPricingError(Exception):
    exit_code = 1


class InputError(RankPricingError):
    """Bad files, schemas, vocabularies, or not enough data to estimate."""

    exit_code = 2


class NumericalError(RankPricingError):
    exit_code = 3


class IllConditionedError(NumericalError):
    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class ArtifactMissingError(RankPricingError):
    exit_code = 4

    def __init__(self, path):
        super().__init__(f"stage artifact not found: {path}")
        self.path = path


class StageError(RankPricingError):
    """A pipeline stage failed; wraps the underlying error with the stage name."""

    def __init__(self, stage: str, cause: RankPricingError):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = cause.exit_code
