"""Exceptions raised by the adaptive_td3bc package."""
from typing import Optional


class AdaptiveTD3BCError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(AdaptiveTD3BCError, ValueError):
    """An array does not have the shape an operation expects."""


class StaleCacheError(AdaptiveTD3BCError):
    """A forward cache no longer matches the network it came from."""


class UnknownEnvironmentError(AdaptiveTD3BCError, KeyError):
    """An env_id that is not registered."""


class EpisodeFinishedError(AdaptiveTD3BCError):
    """A step was requested on an episode that already ended."""


class ContainerFormatError(AdaptiveTD3BCError, ValueError):
    """A persisted file is truncated, corrupt or of the wrong kind."""


class DatasetFormatError(ContainerFormatError):
    """An offline dataset file could not be decoded."""


class CheckpointFormatError(ContainerFormatError):
    """A network or agent checkpoint could not be decoded."""


class InvalidReferenceScoresError(AdaptiveTD3BCError, ValueError):
    """Reference scores that cannot normalize returns."""


class NonFiniteReturnError(AdaptiveTD3BCError, ValueError):
    """An episodic return that is NaN or infinite."""


class TrainingDivergedError(AdaptiveTD3BCError):
    """A loss became non-finite during training."""


class MediumBandNotReachedError(AdaptiveTD3BCError):
    """Expert training never produced a medium-level snapshot."""


class ConfigError(AdaptiveTD3BCError):
    """A configuration key or value is invalid."""

    def __init__(self, message: str, key: Optional[str] = None) -> None:
        """Store the offending key next to the message."""
        super().__init__(message)
        self.key = key


class DatasetMismatchError(AdaptiveTD3BCError):
    """A dataset recorded on a different environment than the run expects."""
