"""Exception hierarchy shared by every module of the package."""


class OsdrError(Exception):
    """Base class for all package errors."""


class DimensionError(OsdrError, ValueError):
    """Operand shapes do not conform."""


class UsageError(OsdrError, ValueError):
    """An operation was called outside its contract."""


class ParseError(OsdrError, ValueError):
    """A text input could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FormatError(OsdrError, ValueError):
    """A file parsed but its contents are inconsistent."""


class MissingEmbeddingError(FormatError):
    def __init__(self, names):
        self.names = sorted(names)
        super().__init__("no embedding for: " + ", ".join(self.names))


class ConfigurationError(OsdrError, ValueError):
    """Invalid model, pipeline or instance configuration."""


class InitializationError(OsdrError, ValueError):
    """A classifier could not be initialized from the supplied weights."""


class TrainingDiverged(OsdrError, RuntimeError):
    """Loss became non-finite or exploded during optimization."""

    def __init__(self, step, loss, term=None):
        self.step = step
        self.loss = loss
        self.term = term
        where = f" in term {term}" if term else ""
        super().__init__(f"training diverged at step {step}{where} (loss={loss!r})")
