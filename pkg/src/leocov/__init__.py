"""Resilient single-orbit LEO constellation coverage: planning, control and scenarios."""

from ._accel import backend
from .errors import (DomainError, ParameterError, ProtocolError, QueryError, ScriptError,
                     StallError)

__version__ = "0.1.0"

__all__ = ["backend", "DomainError", "ParameterError", "ProtocolError", "QueryError",
           "ScriptError", "StallError", "__version__"]
