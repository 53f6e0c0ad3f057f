"""Error taxonomy, mirrored onto CLI exit codes (1 usage, 2 export)."""


class UsageError(Exception):
    """The caller asked for something the exporter cannot do."""


class ExportError(Exception):
    """The model or the data refused to export cleanly."""
