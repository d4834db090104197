"""Exception types shared by the library and the command line front end."""


class InputError(ValueError):
    """Malformed user input: config files, CSV files, flag values.

    The CLI maps this to exit code 2; any other failure maps to exit 3.
    """


class ResourceLimitError(RuntimeError):
    """A requested simulation would exceed a configured size cap."""
