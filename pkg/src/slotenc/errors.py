"""Exception taxonomy shared by every module.

All library errors derive from SlotencError so callers can catch one type at
the CLI boundary. Subclasses also inherit the closest builtin (ValueError,
RuntimeError, ...) so generic handlers keep working.
"""


class SlotencError(Exception):
    """Base class for every error this package raises on purpose."""


class DimensionError(SlotencError, ValueError):
    """Shapes or lengths disagree. Messages include the offending shapes."""


class ContractError(SlotencError, ValueError):
    """A documented precondition was violated (e.g. non-scalar backward root)."""


class NumericError(SlotencError, ArithmeticError):
    """A forward value came out NaN or infinite."""


class ConfigError(SlotencError, ValueError):
    """Bad sizes, rates, arities or config-file values."""


class InputError(SlotencError, ValueError):
    """Malformed or out-of-range runtime input (ids, datasets, traces)."""


class VocabularyError(InputError):
    """Token or token id outside the configured vocabulary."""


class FormatError(SlotencError, ValueError):
    """A file did not parse; messages carry 1-based line numbers."""


class StateError(SlotencError, RuntimeError):
    """Operation needs state that was never recorded or initialized."""


class TapeError(StateError):
    """Autodiff misuse: no active tape, or a tensor from a different tape."""
