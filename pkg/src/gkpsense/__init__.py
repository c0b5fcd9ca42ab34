"""Displacement sensing with sBs-stabilized GKP qunaught states in a truncated Fock space."""

__version__ = "0.1.0"

from .errors import GkpSenseError  # noqa: E402

__all__ = ["GkpSenseError", "__version__"]
