"""Exception types shared across the package."""


class MVTNError(Exception):
    """Base class for all package errors."""


class ShapeError(MVTNError, ValueError):
    pass


class ConfigError(MVTNError, ValueError):
    pass


class ContractError(MVTNError, ValueError):
    """A caller violated a documented precondition."""


class FormatError(MVTNError, ValueError):
    """A binary or JSON file does not match its documented layout."""

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
