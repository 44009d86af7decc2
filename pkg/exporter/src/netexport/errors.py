class ExportError(ValueError):
    """Checkpoint cannot be exported: wrong keys, unsupported ops, bad data."""
