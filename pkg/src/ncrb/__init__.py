"""Nonlinear compressive reduced basis toolkit for the parametric thermal fin."""
from ._backend import JIT_ENABLED, backend_name

__version__ = "0.1.0"

__all__ = ["JIT_ENABLED", "backend_name", "__version__"]
