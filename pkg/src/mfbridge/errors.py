"""Exception hierarchy shared by the library and the CLI."""


class MFBridgeError(Exception):
    """Base class for all library errors."""


class InputError(MFBridgeError, ValueError):
    """Malformed or inconsistent arguments."""


class CapacityError(MFBridgeError):
    """A dense enumeration would exceed its configured cap."""

    def __init__(self, message, count=None):
        super().__init__(message)
        self.count = count


class DegenerateConditionError(MFBridgeError):
    """Conditioning on an event of zero probability."""


class ScenarioError(MFBridgeError):
    """Base class for scenario-file problems; carries the offending field path."""

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ScenarioParseError(ScenarioError):
    pass


class SchemaViolation(ScenarioError):
    pass


class BoundViolation(ScenarioError):
    pass
