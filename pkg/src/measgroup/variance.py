"""Estimator variances and measurement allocations.

All variances use a unit shot budget (``sum_a m_a = 1``); divide by the
number of shots ``M`` for the variance of an ``M``-shot estimate.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError, ValidationError

ZERO_VAR = 1e-14


@dataclass
class AllocationState:
    """Measurement proportions ``m`` (and softmax logits ``p`` when used)."""

    m: np.ndarray
    p: np.ndarray = None

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)
        if self.m.ndim != 1 or self.m.size == 0:
            raise ValidationError("allocation must be a non-empty vector")
        if np.any(self.m < 0) or abs(self.m.sum() - 1.0) > 1e-12:
            raise ValidationError("allocation must be non-negative and sum to one")

    @classmethod
    def uniform(cls, n_groups):
        return cls(np.full(n_groups, 1.0 / n_groups))

    @classmethod
    def from_logits(cls, p):
        p = np.asarray(p, dtype=float)
        e = np.exp(p - p.max())
        return cls(e / e.sum(), p.copy())

    @classmethod
    def normalized(cls, weights):
        w = np.asarray(weights, dtype=float)
        return cls(w / w.sum())

    def totals(self, frags):
        """``M_k`` per Hamiltonian term; checked against the fragment count."""
        if self.m.size != frags.n_groups:
            raise ValidationError(f"allocation has {self.m.size} entries for {frags.n_groups} groups")
        return frags.totals(self.m)


@dataclass
class VarianceReport:
    total_variance: float
    per_group_variance: np.ndarray
    allocation: AllocationState
    extras: dict = field(default_factory=dict)

    def epsilon(self, shots):
        """Standard error of an ``shots``-measurement estimate."""
        return float(np.sqrt(self.total_variance / shots))

    def shots_for(self, epsilon):
        return float(self.total_variance / epsilon**2)

    def to_dict(self):
        return {
            "variance": self.total_variance,
            "group_variances": self.per_group_variance,
            "allocation": self.allocation.m,
            **self.extras,
        }


def quadratic_variance(coeffs, cov):
    """``c^T C c`` clamped at zero (tiny negatives are round-off)."""
    v = float(coeffs @ cov @ coeffs)
    if v < -1e-10:
        raise ValidationError(f"negative fragment variance {v:.3e}; covariance block is not PSD")
    return max(v, 0.0)


def fragment_variance(fragment, oracle):
    """Variance of ``sum_k c_k P_k`` for ``fragment = [(c_k, P_k), ...]``."""
    coeffs = np.array([c for c, _ in fragment], dtype=float)
    cov = oracle.covariance_matrix([p for _, p in fragment])
    return quadratic_variance(coeffs, cov)


def group_variances(frags, oracle, blocks=None):
    if blocks is None:
        blocks = oracle.covariance_blocks(frags.hamiltonian, frags.groups)
    return np.array([quadratic_variance(c, b) for c, b in zip(frags.split_coeffs, blocks)])


def nonoverlapping_variance(variances, m):
    """``sum_a Var_a / m_a``; a group with zero variance and zero shots adds nothing."""
    variances = np.asarray(variances, dtype=float)
    m = np.asarray(m, dtype=float)
    total = 0.0
    for v, w in zip(variances, m):
        if w > 0:
            total += v / w
        elif v > ZERO_VAR:
            return np.inf
    return float(total)


def optimal_allocation(variances):
    """``m_a`` proportional to ``sqrt(Var_a)``; uniform if every variance vanishes."""
    variances = np.asarray(variances, dtype=float)
    if variances.size == 0 or np.any(variances < 0):
        raise ValidationError("variances must be a non-empty non-negative vector")
    roots = np.sqrt(variances)
    if roots.sum() == 0:
        return AllocationState.uniform(variances.size)
    return AllocationState.normalized(roots)


def optimal_variance(variances):
    """Minimum of ``sum_a Var_a / m_a`` over the simplex: ``(sum_a sqrt(Var_a))^2``."""
    return float(np.sum(np.sqrt(np.asarray(variances, dtype=float))) ** 2)


def _check_feasible(frags, totals):
    c = frags.hamiltonian.coeffs
    for k in frags.hamiltonian.measured_terms:
        if totals[k] <= 0 and c[k] != 0:
            raise InfeasibleError(f"term {k} ({frags.hamiltonian.paulis[k]}) receives no measurements", term=k)


def overlap_variance_from_blocks(frags, blocks, m):
    """Overlapping-estimator variance ``sum_a m_a u_a^T C_a u_a`` with ``u = c / M``.

    Equal to ``sum_{jk} c_j c_k / (M_j M_k) sum_{a in I_j & I_k} m_a Cov(P_j, P_k)``.
    """
    m = np.asarray(m, dtype=float)
    totals = frags.totals(m)
    _check_feasible(frags, totals)
    c = frags.hamiltonian.coeffs
    total = 0.0
    for a, (g, cov) in enumerate(zip(frags.groups, blocks)):
        if m[a] == 0:
            continue
        u = c[g] / totals[g]
        total += m[a] * float(u @ cov @ u)
    return max(total, 0.0)


def overlapping_variance(frags, alloc, oracle):
    m = alloc.m if isinstance(alloc, AllocationState) else np.asarray(alloc, dtype=float)
    blocks = oracle.covariance_blocks(frags.hamiltonian, frags.groups)
    return overlap_variance_from_blocks(frags, blocks, m)


def allocation_as_splitting(frags, alloc):
    """The coefficient splitting ``c_k m_a / M_k`` equivalent to allocation ``alloc``."""
    m = alloc.m if isinstance(alloc, AllocationState) else np.asarray(alloc, dtype=float)
    return frags.resplit(m)


def split_variance(frags, oracle, alloc=None, blocks=None):
    """Variance report for a coefficient-split fragment set.

    With ``alloc`` omitted the optimal allocation for the current splitting
    is used.
    """
    variances = group_variances(frags, oracle, blocks)
    if alloc is None:
        alloc = optimal_allocation(variances)
    total = nonoverlapping_variance(variances, alloc.m)
    return VarianceReport(total, variances, alloc)
