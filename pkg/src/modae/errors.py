"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An operation was called with arguments violating its precondition."""


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


class CheckpointError(RuntimeError):
    """Unreadable or corrupt checkpoint archive."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by a newer format version than we can read."""
