"""Phase-space kernel: observables, brackets, integrators, structure checks."""

from .brackets import (
    bracket_observable,
    fd_bracket,
    fd_gradient,
    hamiltonian_vector_field,
    independence_rank,
    jacobi_defect,
    jacobian,
    poisson_bracket,
    structure_matrix,
)
from .chart import (
    HomogeneousObservable,
    Observable,
    PhaseChart,
    PhasePoint,
    constant,
    coordinate,
    homogeneous_extend,
    parse_observable,
)
from .integrate import Trajectory, conservation_report, integrate_hamilton

__all__ = [
    "HomogeneousObservable",
    "Observable",
    "PhaseChart",
    "PhasePoint",
    "Trajectory",
    "bracket_observable",
    "conservation_report",
    "constant",
    "coordinate",
    "fd_bracket",
    "fd_gradient",
    "hamiltonian_vector_field",
    "homogeneous_extend",
    "independence_rank",
    "integrate_hamilton",
    "jacobi_defect",
    "jacobian",
    "parse_observable",
    "poisson_bracket",
    "structure_matrix",
]
