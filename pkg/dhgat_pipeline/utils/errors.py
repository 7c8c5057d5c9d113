from typing import Optional


class PipelineError(Exception):
    """Base class for every error the pipeline raises on purpose."""


class ConfigurationError(PipelineError):
    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key
