"""Measurement grouping, coefficient splitting and shot allocation for qubit Hamiltonians."""
from .errors import (
    ContractError,
    ConvergenceError,
    DimensionError,
    InfeasibleError,
    MeasGroupError,
    ParseError,
    ResourceError,
    ValidationError,
)
from .pauli import Hamiltonian, PauliProduct, fully_commutes, multiply, qubitwise_commutes
from .statevector import CovarianceOracle, StateVector, ground_state, sample_group
from .io import parse_hamiltonian, read_hamiltonian, serialize_hamiltonian, write_report
from .grouping import FragmentSet, Relation, extend_overlap, group_lf, group_si
from .variance import (
    AllocationState,
    VarianceReport,
    allocation_as_splitting,
    optimal_allocation,
    overlapping_variance,
    split_variance,
)
from .optimizers import OptimizerTrace, gma_optimize, ics_optimize, ima_optimize
from .clifford import CliffordTableau, DiagonalizedGroup, rotate_and_sample, synthesize
from .pipeline import MethodOptions, run_methods, sample_estimator

__version__ = "0.1.0"
