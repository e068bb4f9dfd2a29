from .tape import HYBRID, KERNEL, Parameter, Tape, TapeError, Tensor, active_tape
from . import ops

__all__ = ["HYBRID", "KERNEL", "Parameter", "Tape", "TapeError", "Tensor", "active_tape", "ops"]
