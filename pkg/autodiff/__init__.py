# Reverse-mode automatic differentiation module
from autodiff.tape import Tape, Value
from autodiff.gradcheck import grad_check

__all__ = ["Tape", "Value", "grad_check"]
