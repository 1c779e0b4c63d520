class ExportError(Exception):
    """Base class for exporter errors."""


class EncoderUnavailableError(ExportError):
    """The text-encoder model could not be loaded in this environment."""


class InputError(ExportError):
    """A label or template cannot be embedded (empty tokenization, fully
    out-of-vocabulary label, bad placeholder)."""


class FormatError(ExportError):
    """A word-vector file or output path violates its format contract."""
