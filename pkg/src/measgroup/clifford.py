"""Clifford rotations that turn a commuting Pauli group into z-strings.

Rows are tracked as ``(x, z, sign)`` with ``sign`` the exponent of ``-1`` in
front of the Hermitian product ``sigma(x, z)``.  Gates act by conjugation,
``P -> G P G^dagger``, and a gate list ``[g1, g2, ...]`` realises
``U = ... g2 g1``.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError
from .pauli import PauliProduct, fully_commutes, index_masks, multiply, qubitwise_commutes
from .statevector import StateVector

GATE_NAMES = ("H", "S", "CNOT", "CZ")


def _bit(v, q):
    return (v >> q) & 1


def conjugate_row(gate, x, z, sign):
    """Image of ``(-1)^sign sigma(x, z)`` under one gate."""
    name, *qs = gate
    if name == "H":
        (q,) = qs
        xq, zq = _bit(x, q), _bit(z, q)
        sign ^= xq & zq
        x ^= (xq ^ zq) << q
        z ^= (xq ^ zq) << q
    elif name == "S":
        (q,) = qs
        xq, zq = _bit(x, q), _bit(z, q)
        sign ^= xq & zq
        z ^= xq << q
    elif name == "CNOT":
        a, b = qs
        xa, za, xb, zb = _bit(x, a), _bit(z, a), _bit(x, b), _bit(z, b)
        sign ^= xa & zb & (xb ^ za ^ 1)
        x ^= xa << b
        z ^= zb << a
    elif name == "CZ":
        a, b = qs
        xa, za, xb, zb = _bit(x, a), _bit(z, a), _bit(x, b), _bit(z, b)
        sign ^= xa & xb & (za ^ zb)
        z ^= (xb << a) | (xa << b)
    else:
        raise ValueError(f"unknown gate {name!r}")
    return x, z, sign


def _signed(p):
    """``(x, z, sign)`` of a Hermitian product; raises for phases +-i."""
    if not p.is_hermitian:
        raise ContractError(f"{p} is not Hermitian")
    return p.x, p.z, p.phase // 2


def _product(n, x, z, sign):
    return PauliProduct(n, x, z, 2 * sign)


@dataclass
class CliffordTableau:
    """Conjugation images of ``X_q`` and ``Z_q`` plus the gates that built them."""

    n_qubits: int
    x_images: list = None
    z_images: list = None
    gates: list = field(default_factory=list)

    def __post_init__(self):
        n = self.n_qubits
        if self.x_images is None:
            self.x_images = [(1 << q, 0, 0) for q in range(n)]
        if self.z_images is None:
            self.z_images = [(0, 1 << q, 0) for q in range(n)]

    def apply(self, gate):
        name, *qs = gate
        if name not in GATE_NAMES or any(not 0 <= q < self.n_qubits for q in qs) or len(set(qs)) != len(qs):
            raise ValueError(f"invalid gate {gate!r}")
        self.x_images = [conjugate_row(gate, *r) for r in self.x_images]
        self.z_images = [conjugate_row(gate, *r) for r in self.z_images]
        self.gates.append(tuple(gate))

    def conjugate(self, p):
        """``U p U^dagger`` assembled from the generator images."""
        n = self.n_qubits
        out = PauliProduct(n, 0, 0, p.phase)
        for q in range(n):
            xq, zq = _bit(p.x, q), _bit(p.z, q)
            if xq:
                out = multiply(out, _product(n, *self.x_images[q]))
            if zq:
                out = multiply(out, _product(n, *self.z_images[q]))
            if xq and zq:
                out = out.with_phase(out.phase + 1)
        return out

    def replay(self, p):
        """``U p U^dagger`` by running the gate list row by row."""
        x, z, sign = _signed(p)
        for g in self.gates:
            x, z, sign = conjugate_row(g, x, z, sign)
        return _product(self.n_qubits, x, z, sign)

    def is_symplectic(self):
        rows = [_product(self.n_qubits, *r) for r in self.x_images + self.z_images]
        n = self.n_qubits
        for i in range(2 * n):
            for j in range(i):
                should_commute = not (i - j == n)
                if fully_commutes(rows[i], rows[j]) != should_commute:
                    return False
        return True

    def circuit(self):
        """Gate list as text, one gate per line."""
        return "\n".join(" ".join(str(t) for t in g) for g in self.gates)

    def to_dict(self):
        n = self.n_qubits
        return {
            "n_qubits": n,
            "gates": [list(g) for g in self.gates],
            "x_images": [str(_product(n, *r)) for r in self.x_images],
            "z_images": [str(_product(n, *r)) for r in self.z_images],
        }


@dataclass
class DiagonalizedGroup:
    """A commuting group, its rotation and the z-strings its members become."""

    paulis: list
    tableau: CliffordTableau
    z_images: list
    coefficients: np.ndarray = None

    @property
    def z_poly(self):
        """The fragment after rotation as ``[(coefficient, unsigned z-string), ...]``."""
        coeffs = np.ones(len(self.paulis)) if self.coefficients is None else self.coefficients
        return [(float(c) * (-1) ** (img.phase // 2), img.with_phase(0)) for c, img in zip(coeffs, self.z_images)]

    def to_dict(self):
        out = self.tableau.to_dict()
        out["paulis"] = [str(p) for p in self.paulis]
        out["z_images"] = [str(p) for p in self.z_images]
        return out


def _check_group(group):
    if not group:
        raise ContractError("empty group")
    n = group[0].n_qubits
    for a, p in enumerate(group):
        if p.n_qubits != n:
            raise DimensionError("group members act on different qubit counts")
        _signed(p)
        for b in range(a):
            if not fully_commutes(p, group[b]):
                raise ContractError(f"{p} and {group[b]} do not commute")
    return n


def _single_qubit_plan(group, n):
    gates = []
    for q in range(n):
        kinds = {p.symbol(q) for p in group} - {"I"}
        if kinds == {"X"}:
            gates.append(("H", q))
        elif kinds == {"Y"}:
            gates += [("S", q), ("H", q)]
    return gates


def _entangling_plan(group, n):
    """Gate list sending every member of a commuting group to a z-string."""
    rows = [(p.x, p.z) for p in group]
    # Gaussian elimination of the x block; rows without x are already diagonal
    basis = []
    pivots = []
    for x, z in rows:
        for (bx, bz), piv in zip(basis, pivots):
            if _bit(x, piv):
                x ^= bx
                z ^= bz
        if x:
            piv = (x & -x).bit_length() - 1
            for i, ((bx, bz), _) in enumerate(zip(basis, pivots)):
                if _bit(bx, piv):
                    basis[i] = (bx ^ x, bz ^ z)
            basis.append((x, z))
            pivots.append(piv)
    gates = []

    def run(g):
        gates.append(g)
        for i, (bx, bz) in enumerate(basis):
            nx, nz, _ = conjugate_row(g, bx, bz, 0)
            basis[i] = (nx, nz)

    pivot_set = set(pivots)
    for i, piv in enumerate(pivots):
        for c in range(n):
            if c not in pivot_set and _bit(basis[i][0], c):
                run(("CNOT", piv, c))
    for i, piv in enumerate(pivots):
        if _bit(basis[i][1], piv):
            run(("S", piv))
    for i, piv in enumerate(pivots):
        for c in range(n):
            if c != piv and _bit(basis[i][1], c) and (c not in pivot_set or pivots.index(c) > i):
                run(("CZ", piv, c))
    for piv in pivots:
        run(("H", piv))
    return gates


def synthesize(group, coefficients=None):
    """Clifford rotation diagonalising a fully commuting group.

    Qubit-wise commuting groups get single-qubit gates only; other groups go
    through elimination of the x block followed by CNOT, S, CZ and H layers.
    """
    group = list(group)
    n = _check_group(group)
    qwc = all(qubitwise_commutes(group[a], group[b]) for a in range(len(group)) for b in range(a))
    plan = _single_qubit_plan(group, n) if qwc else _entangling_plan(group, n)
    tableau = CliffordTableau(n)
    for g in plan:
        tableau.apply(g)
    images = [tableau.replay(p) for p in group]
    for p, img in zip(group, images):
        if img.x != 0:
            raise AssertionError(f"rotation left x bits on {p}")
    coeffs = None if coefficients is None else np.asarray(coefficients, dtype=float)
    return DiagonalizedGroup(group, tableau, images, coeffs)


# ---------------------------------------------------------------------------
# state vectors
# ---------------------------------------------------------------------------

def apply_gates(gates, state):
    """Apply a gate list (first gate first) to a state vector."""
    n = state.n_qubits
    psi = state.amplitudes.reshape((2,) * n).copy()
    for name, *qs in gates:
        if name == "H":
            (q,) = qs
            a0 = np.take(psi, 0, axis=q)
            a1 = np.take(psi, 1, axis=q)
            psi = np.stack(((a0 + a1) / np.sqrt(2), (a0 - a1) / np.sqrt(2)), axis=q)
        elif name == "S":
            (q,) = qs
            idx = [slice(None)] * n
            idx[q] = 1
            psi[tuple(idx)] *= 1j
        elif name == "CNOT":
            a, b = qs
            idx = [slice(None)] * n
            idx[a] = 1
            sub = psi[tuple(idx)]
            axis = b if b < a else b - 1
            psi[tuple(idx)] = np.flip(sub, axis=axis)
        elif name == "CZ":
            a, b = qs
            idx = [slice(None)] * n
            idx[a] = 1
            idx[b] = 1
            psi[tuple(idx)] *= -1
        else:
            raise ValueError(f"unknown gate {name!r}")
    return StateVector(psi.reshape(-1), normalize=True)


def rotate_and_sample(dg, state, shots, seed=None):
    """Rotate ``state`` by the group's Clifford and read each member from bitstrings.

    Returns an ``(shots, len(group))`` array of +-1 outcomes.
    """
    if state.n_qubits != dg.tableau.n_qubits:
        raise DimensionError("state and group sizes differ")
    rotated = apply_gates(dg.tableau.gates, state)
    probs = np.abs(rotated.amplitudes) ** 2
    probs /= probs.sum()
    rng = np.random.default_rng(seed)
    draws = rng.choice(probs.size, size=int(shots), p=probs)
    n = state.n_qubits
    masks = index_masks(np.array([img.z for img in dg.z_images], dtype=np.int64), n)
    signs = np.array([1 - 2 * (img.phase // 2) for img in dg.z_images], dtype=np.int8)
    parity = (np.bitwise_count(draws[:, None] & masks[None, :]) & 1).astype(np.int8)
    return (signs[None, :] * (1 - 2 * parity)).astype(np.int8)
