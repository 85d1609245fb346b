"""Exception hierarchy shared by the pipeline, the CLI and the dashboard."""


class ScriptineError(ValueError):
    """Base class for every validation, input and shape error raised by scriptine."""


class InputError(ScriptineError):
    pass


class PageParseError(ScriptineError):
    """Malformed PAGE XML. `byte_offset` points at the offending byte of the input."""

    def __init__(self, message, byte_offset=None):
        super().__init__(message if byte_offset is None else f"{message} (byte offset {byte_offset})")
        self.byte_offset = byte_offset


class PageValidationError(ScriptineError):
    def __init__(self, message, line_id=None):
        super().__init__(message if line_id is None else f"line '{line_id}': {message}")
        self.line_id = line_id


class SpecParseError(ScriptineError):
    """Network spec rejected by the parser. `token_index` is 0-based."""

    def __init__(self, message, token_index=None):
        super().__init__(message if token_index is None else f"token {token_index}: {message}")
        self.token_index = token_index


class UnsupportedProfileError(SpecParseError):
    pass


class ShapeError(ScriptineError):
    pass


class BoundsError(ScriptineError):
    pass


class ParameterError(ScriptineError):
    pass


class CtcInfeasibleError(ScriptineError):
    pass


class OracleSizeError(ScriptineError):
    pass


class ModelFormatError(ScriptineError):
    pass
