"""Shared exception types."""


class ConfigurationError(ValueError):
    """Invalid scenario, config value, or unknown identifier."""


class ShapeError(ValueError):
    """Array dimensions inconsistent with the declared contract."""


class PipelineError(RuntimeError):
    """Failure inside the model pipeline, tagged with the stage that raised."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
