"""Nonlocal filtration equations on a grid: operators, evolution and diagnostics."""

from ._accel import BACKEND
from .grid import Field, Grid
from .model import DomainError, KernelSpec, Nonlinearity, power

__all__ = ["BACKEND", "Field", "Grid", "DomainError", "KernelSpec", "Nonlinearity", "power"]
__version__ = "0.1.0"
