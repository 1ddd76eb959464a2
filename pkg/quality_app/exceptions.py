# quality_app/exceptions.py
"""Domain errors raised by the reward, simulation, agent, trainer and metric modules."""


class QualityError(Exception):
    """Base class for every error raised by quality_app."""


class ContractViolation(QualityError, ValueError):
    """A caller broke an operation's precondition."""


class ConfigurationError(QualityError, ValueError):
    """Invalid run configuration.

    ``field_errors`` maps each offending field to its messages so callers
    (forms, commands) can report them per field.
    """

    def __init__(self, field_errors):
        if isinstance(field_errors, str):
            field_errors = {'__all__': [field_errors]}
        self.field_errors = {
            field: list(messages) if isinstance(messages, (list, tuple)) else [messages]
            for field, messages in field_errors.items()
        }
        super().__init__(self.describe())

    def describe(self):
        parts = []
        for field, messages in self.field_errors.items():
            for message in messages:
                parts.append(message if field == '__all__' else f"{field}: {message}")
        return '; '.join(parts)


class CorpusFormatError(QualityError, ValueError):
    """A corpus file could not be parsed."""

    def __init__(self, message, line=None, record=None):
        self.line = line
        self.record = record
        where = []
        if line is not None:
            where.append(f"line {line}")
        if record is not None:
            where.append(f"record {record!r}")
        prefix = f"{', '.join(where)}: " if where else ''
        super().__init__(prefix + message)


class UndefinedAUC(QualityError, ValueError):
    """AUC needs at least one positive and one negative label."""


class NonFiniteGradient(QualityError, ArithmeticError):
    """A gradient block contains NaN or inf."""

    def __init__(self, block):
        self.block = block
        super().__init__(f"non-finite gradient in parameter block {block!r}")


class CheckpointError(ContractViolation):
    """A checkpoint is unreadable or does not match the expected dimensions."""
