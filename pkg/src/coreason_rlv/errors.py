# Prosperity Public License 3.0
from typing import Optional


class RLVError(Exception):
    """Base class for errors surfaced by the coreason-rlv harness."""


class NumericError(ArithmeticError):
    """Raised when the policy produces non-finite logits."""


class ConfigError(RLVError):
    """
    A configuration could not be read or validated.

    Attributes:
        source: The file (or `<env NAME>` / `<override>`) the offending value came from.
        line: 1-based line number inside `source`, when the value came from a file.
    """

    def __init__(self, message: str, source: Optional[str] = None, line: Optional[int] = None) -> None:
        self.source = source
        self.line = line
        location = ""
        if source is not None:
            location = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(f"{location}{message}")


class ArtifactError(RLVError):
    """A run artifact (parameters file, episode log) is missing or corrupt."""


class BackendUnavailableError(RLVError):
    """The remote generation backend could not be reached within the retry budget."""


class ProtocolError(RLVError):
    """The remote generation backend answered with a malformed or rejected response."""
