"""Exception types shared across the package."""


class ParameterError(ValueError):
    """Invalid model, planner or controller parameter."""


class DomainError(ValueError):
    """Point outside an operation's domain (e.g. the Earth center)."""


class QueryError(LookupError):
    """Query about a satellite that is dead or unknown."""


class ProtocolError(RuntimeError):
    """A planner agent did not receive the neighbor messages it needs."""


class ScriptError(ValueError):
    """Scenario script is malformed or inconsistent."""

    def __init__(self, message: str, where: str | None = None):
        self.message = message
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


class StallError(RuntimeError):
    """A controller failed to reach its waypoint within the step cap."""

    def __init__(self, message: str, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory
