"""Exception hierarchy shared across the simulation engine."""


class SimError(Exception):
    """Base class for all engine errors."""


class FormatError(SimError):
    """A document failed to parse against its schema; message carries the field path."""


class GenerationError(SimError):
    """Scenario generation could not satisfy a constraint (e.g. empty category subset)."""


class LayoutError(SimError):
    """Pose placement could not satisfy the separation constraint within the retry bound."""


class NotFoundError(SimError):
    """A referenced instance or session does not exist."""


class ReferentialError(SimError):
    """A document references a case or scenario that the bound data does not contain."""


class RoleError(SimError):
    """The caller's role does not permit the operation."""


class PhaseError(SimError):
    """The session is not in a phase that permits the operation."""


class SessionExpiredError(SimError):
    """The session clock has passed the time limit."""


class OutOfRangeError(SimError):
    """The responder is too far from the patient for a proximate interaction."""


class ProtocolError(SimError):
    """A command arrived out of protocol order (e.g. end-hold without begin-hold)."""


class ClockError(SimError):
    """Injected time moved backwards."""


class LogError(SimError):
    """Telemetry log write failure; never fatal to the owning session."""


class ClosedLogError(LogError):
    """Append attempted after the log was closed by a session-end record."""


class IntegrityError(SimError):
    """A log header does not match the scenario or case list it claims to be bound to."""


class DivergenceError(SimError):
    """Replay regenerated an event that differs from the logged one."""

    def __init__(self, seq: int, message: str):
        super().__init__(message)
        self.seq = seq
