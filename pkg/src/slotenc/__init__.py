"""Slot-memory sequence encoding: autodiff tape, encoder, task heads, training."""

from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    FormatError,
    InputError,
    NumericError,
    SlotencError,
    StateError,
    TapeError,
    VocabularyError,
)
from .tensor import Tape, Tensor, backward, grad_check, no_grad

__all__ = [
    "ConfigError",
    "ContractError",
    "DimensionError",
    "FormatError",
    "InputError",
    "NumericError",
    "SlotencError",
    "StateError",
    "TapeError",
    "VocabularyError",
    "Tape",
    "Tensor",
    "backward",
    "grad_check",
    "no_grad",
]
