"""Partition Hamiltonian terms into simultaneously measurable groups.

The identity term is never grouped: it is a constant offset and needs no
measurement.  Every other term lands in at least one group.
"""
from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np

from . import kernels
from .errors import InfeasibleError, ValidationError
from .pauli import fully_commutes, qubitwise_commutes


class Relation(str, Enum):
    QWC = "qwc"
    FC = "fc"

    def compatible(self, a, b):
        return qubitwise_commutes(a, b) if self is Relation.QWC else fully_commutes(a, b)


def compatibility_matrix(h, relation, terms=None):
    """Boolean matrix of pairwise compatibility among ``terms`` (default: all)."""
    relation = Relation(relation)
    terms = np.arange(h.n_terms) if terms is None else np.asarray(terms, dtype=np.int64)
    return kernels.compat_matrix(h.xs[terms], h.zs[terms], relation is Relation.QWC)


@dataclass(eq=False)
class FragmentSet:
    """Measurable groups with per-group (split) coefficients.

    ``groups[a]`` lists Hamiltonian term indices in insertion order and
    ``split_coeffs[a][i]`` is the coefficient carried by ``groups[a][i]`` in
    fragment ``a``.
    """

    hamiltonian: object
    relation: Relation
    groups: list
    split_coeffs: list

    def __post_init__(self):
        self.relation = Relation(self.relation)
        self.groups = [np.asarray(g, dtype=np.int64) for g in self.groups]
        self.split_coeffs = [np.asarray(c, dtype=float) for c in self.split_coeffs]
        if len(self.groups) != len(self.split_coeffs):
            raise ValidationError("groups and split_coeffs differ in length")
        for g, c in zip(self.groups, self.split_coeffs):
            if g.shape != c.shape:
                raise ValidationError("group and coefficient vector differ in length")
            if np.unique(g).size != g.size:
                raise ValidationError("a group lists the same term twice")

    @classmethod
    def from_partition(cls, h, relation, groups):
        groups = [np.asarray(g, dtype=np.int64) for g in groups]
        return cls(h, relation, groups, [h.coeffs[g].copy() for g in groups])

    @property
    def n_groups(self):
        return len(self.groups)

    @cached_property
    def flat_terms(self):
        return np.concatenate(self.groups) if self.groups else np.empty(0, dtype=np.int64)

    @cached_property
    def flat_groups(self):
        return np.repeat(np.arange(self.n_groups), [g.size for g in self.groups])

    @cached_property
    def membership_count(self):
        """``|I_k|`` for every Hamiltonian term (0 for ungrouped terms)."""
        return np.bincount(self.flat_terms, minlength=self.hamiltonian.n_terms)

    @cached_property
    def membership(self):
        """``I_k``: term index -> list of group indices containing it."""
        out = {}
        for a, g in enumerate(self.groups):
            for k in g:
                out.setdefault(int(k), []).append(a)
        return out

    @property
    def is_overlapping(self):
        return bool(np.any(self.membership_count > 1))

    @property
    def n_split_variables(self):
        """Constraint-reduced number of split coefficients: sum over terms of ``|I_k| - 1``."""
        counts = self.membership_count
        return int(np.sum(counts[counts > 1] - 1))

    def totals(self, m):
        """``M_k = sum_{a in I_k} m_a`` for every Hamiltonian term."""
        m = np.asarray(m, dtype=float)
        return np.bincount(self.flat_terms, weights=m[self.flat_groups], minlength=self.hamiltonian.n_terms)

    def with_coeffs(self, split_coeffs):
        return FragmentSet(self.hamiltonian, self.relation, self.groups, split_coeffs)

    def resplit(self, m):
        """Split coefficients ``c_k m_a / M_k`` for an allocation ``m``."""
        m = np.asarray(m, dtype=float)
        totals = self.totals(m)
        c = self.hamiltonian.coeffs
        for k in self.hamiltonian.measured_terms:
            if totals[k] <= 0:
                raise InfeasibleError(f"term {k} ({self.hamiltonian.paulis[k]}) is never measured", term=k)
        return self.with_coeffs([c[g] * m[a] / totals[g] for a, g in enumerate(self.groups)])

    def fragment(self, a):
        """Fragment ``a`` as ``[(coefficient, PauliProduct), ...]``."""
        ps = self.hamiltonian.paulis
        return [(float(c), ps[k]) for k, c in zip(self.groups[a], self.split_coeffs[a])]

    def reconstruction_error(self):
        """Largest deviation of ``sum_a c_k^(a)`` from ``c_k`` over measured terms."""
        h = self.hamiltonian
        total = np.bincount(self.flat_terms, weights=np.concatenate(self.split_coeffs) if self.groups else None,
                            minlength=h.n_terms)
        measured = h.measured_terms
        if not measured:
            return 0.0
        return float(np.max(np.abs(total[measured] - h.coeffs[measured])))

    def validate(self, tol=1e-12):
        """Re-check every invariant pairwise with the scalar predicates."""
        h = self.hamiltonian
        ps = h.paulis
        for a, g in enumerate(self.groups):
            for i in range(g.size):
                if ps[g[i]].is_identity:
                    raise ValidationError(f"group {a} contains the identity term")
                for j in range(i):
                    if not self.relation.compatible(ps[g[i]], ps[g[j]]):
                        raise ValidationError(f"group {a}: {ps[g[i]]} and {ps[g[j]]} are not {self.relation.value}-compatible")
        missing = [k for k in h.measured_terms if self.membership_count[k] == 0]
        if missing:
            raise ValidationError(f"terms {missing} are not in any group")
        err = self.reconstruction_error()
        if err > tol * max(1.0, float(np.max(np.abs(h.coeffs), initial=0.0))):
            raise ValidationError(f"split coefficients miss the Hamiltonian by {err:.3e}")

    def to_dict(self):
        return {
            "relation": self.relation.value,
            "n_groups": self.n_groups,
            "n_split_variables": self.n_split_variables,
            "groups": [
                {
                    "terms": g.tolist(),
                    "paulis": [str(self.hamiltonian.paulis[k]) for k in g],
                    "coefficients": c.tolist(),
                }
                for g, c in zip(self.groups, self.split_coeffs)
            ],
        }

    @classmethod
    def from_dict(cls, h, data):
        groups = [g["terms"] for g in data["groups"]]
        coeffs = [g["coefficients"] for g in data["groups"]]
        return cls(h, data["relation"], groups, coeffs)


def _measured(h):
    terms = np.asarray(h.measured_terms, dtype=np.int64)
    if terms.size == 0:
        raise ValidationError("Hamiltonian has no terms to measure")
    return terms


def _groups_from_labels(terms, order, labels):
    groups = [[] for _ in range(int(labels.max()) + 1)]
    for t in order:
        groups[labels[t]].append(terms[t])
    return groups


def group_si(h, relation):
    """Sorted insertion: sweep terms by decreasing ``|c_k|``, filling one group per sweep.

    Equal magnitudes keep canonical term order.
    """
    terms = _measured(h)
    compat = compatibility_matrix(h, relation, terms)
    order = np.argsort(-np.abs(h.coeffs[terms]), kind="stable")
    labels = kernels.si_labels(order, compat)
    return FragmentSet.from_partition(h, relation, _groups_from_labels(terms, order, labels))


def group_lf(h, relation):
    """Largest-first greedy colouring of the incompatibility graph."""
    terms = _measured(h)
    compat = compatibility_matrix(h, relation, terms)
    degree = terms.size - compat.sum(axis=1)
    order = np.argsort(-degree, kind="stable")
    labels = kernels.lf_labels(order, compat)
    return FragmentSet.from_partition(h, relation, _groups_from_labels(terms, order, labels))


def extend_overlap(h, base, allocation=None):
    """Add every already-grouped term to later groups it is compatible with.

    Groups are revisited in ``base`` order.  Terms seen so far are kept in a
    list in the order they were first grouped; each is appended to the current
    group when it is compatible with all current members.  Split coefficients
    are ``c_k m_a / M_k`` for ``allocation`` (uniform when omitted).
    """
    if base.is_overlapping:
        raise ValidationError("extend_overlap expects a non-overlapping base")
    terms = np.asarray(sorted(set(base.flat_terms.tolist())), dtype=np.int64)
    local = {int(t): i for i, t in enumerate(terms)}
    compat = compatibility_matrix(h, base.relation, terms)
    members = np.array([local[int(t)] for t in base.flat_terms], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum([g.size for g in base.groups])]).astype(np.int64)
    flat, off = kernels.extend_groups(members, offsets, compat)
    groups = [terms[flat[off[a]:off[a + 1]]] for a in range(base.n_groups)]
    out = FragmentSet.from_partition(h, base.relation, groups)
    m = np.full(out.n_groups, 1.0 / out.n_groups) if allocation is None else np.asarray(getattr(allocation, "m", allocation))
    return out.resplit(m)
