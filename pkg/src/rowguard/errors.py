class RowguardError(Exception):
    """Base class for all simulator errors."""


class ConfigError(RowguardError, ValueError):
    pass


class StructuralError(RowguardError, ValueError):
    """A command or event that cannot exist in a well-formed stream."""


class AddressRangeError(RowguardError, ValueError):
    pass


class TraceParseError(RowguardError, ValueError):
    def __init__(self, message, line_no=None, path=None):
        self.line_no = line_no
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line_no is not None:
            where += f"{line_no}: "
        elif where:
            where += " "
        super().__init__(where + message)
