class SimulationError(ValueError):
    pass


class ScriptError(SimulationError):
    """The trace cannot be parsed or is out of order."""

    def __init__(self, message, line_no=None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class SimViolation(SimulationError):
    """A directive is impossible for the connection in its current state."""


class UnknownSubflow(SimulationError):
    pass
