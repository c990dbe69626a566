class StorageError(Exception):
    """Exception raised when a file cannot be read, parsed or written."""

    pass
