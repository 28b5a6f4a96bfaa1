"""Integrable Hamiltonian systems in action-angle variables.

Subpackages: :mod:`~actionangle.core` (observables, brackets, integrators),
:mod:`~actionangle.kepler`, :mod:`~actionangle.quantize`,
:mod:`~actionangle.holonomy` and the :mod:`~actionangle.cli` front end.
"""

from ._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
