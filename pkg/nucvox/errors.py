"""Error types shared by the library and the command line.

Each error carries a stable ``code`` and the process ``exit_status`` the CLI
returns for it, so scripts can tell failures apart without parsing messages.
"""


class NucError(Exception):
    code = "error"
    exit_status = 1


class ConfigError(NucError, ValueError):
    code = "config"
    exit_status = 3


class InputNotFoundError(NucError, FileNotFoundError):
    code = "missing-input"
    exit_status = 4


class MalformedFileError(NucError, ValueError):
    code = "malformed-file"
    exit_status = 5


class UnsupportedSchemeError(NucError, ValueError):
    code = "unsupported-scheme"
    exit_status = 6


class GridMismatchError(NucError, ValueError):
    code = "grid-mismatch"
    exit_status = 7


class UnlabeledCloudError(NucError, ValueError):
    code = "unlabeled"
    exit_status = 8


class RejectedPointError(NucError, ValueError):
    code = "rejected-point"
    exit_status = 9


class OutOfRangeError(NucError, ValueError):
    code = "out-of-range"
    exit_status = 10


class GridIndexError(NucError, IndexError):
    code = "index"
    exit_status = 11


EXIT_CODES: dict[str, int] = {
    cls.code: cls.exit_status
    for cls in (
        NucError,
        ConfigError,
        InputNotFoundError,
        MalformedFileError,
        UnsupportedSchemeError,
        GridMismatchError,
        UnlabeledCloudError,
        RejectedPointError,
        OutOfRangeError,
        GridIndexError,
    )
}
