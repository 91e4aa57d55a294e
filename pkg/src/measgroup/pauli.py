"""Symplectic Pauli products and qubit Hamiltonians.

A Pauli product on ``n`` qubits is stored as two integer bitsets: bit ``q`` of
``x`` / ``z`` describes qubit ``q``.  Qubit ``q`` carries X for (1, 0), Y for
(1, 1), Z for (0, 1) and the identity for (0, 0).  The overall phase is an
exponent of ``i`` (0..3).  Y is the Hermitian Pauli-Y, so a product with
phase 0 is always Hermitian.

Dense matrices and state vectors use big-endian ordering: qubit 0 is the most
significant bit of a basis-state index.
"""
from dataclasses import dataclass
import math
import re

import numpy as np

from .errors import DimensionError, ParseError, ResourceError, ValidationError

MAX_DENSE_QUBITS = 12

_SYMBOL = {(0, 0): "I", (1, 0): "X", (1, 1): "Y", (0, 1): "Z"}
_BITS = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}
_PHASE_STR = {0: "", 1: "i ", 2: "-", 3: "-i "}
_FACTOR_RE = re.compile(r"^([IXYZ])(\d+)$")

_SINGLE = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


@dataclass(frozen=True)
class PauliProduct:
    n_qubits: int
    x: int = 0
    z: int = 0
    phase: int = 0

    def __post_init__(self):
        if self.n_qubits < 0:
            raise ValidationError("n_qubits must be non-negative")
        limit = 1 << self.n_qubits
        if not (0 <= self.x < limit and 0 <= self.z < limit):
            raise DimensionError(f"bitsets exceed {self.n_qubits} qubits")
        object.__setattr__(self, "phase", self.phase % 4)

    @classmethod
    def identity(cls, n_qubits):
        return cls(n_qubits)

    @classmethod
    def from_label(cls, label):
        """Build from a dense label such as ``"XIZY"`` (qubit 0 first)."""
        x = z = 0
        for q, ch in enumerate(label.upper()):
            if ch not in _BITS:
                raise ParseError(f"invalid Pauli letter {ch!r}")
            bx, bz = _BITS[ch]
            x |= bx << q
            z |= bz << q
        return cls(len(label), x, z)

    @classmethod
    def from_factors(cls, n_qubits, factors):
        """Build from sparse factors, either ``"X0 Z3"`` or ``[(0, "X"), (3, "Z")]``.

        Repeated qubits are multiplied together in the given order.
        """
        if isinstance(factors, str):
            parsed = []
            for tok in factors.split():
                m = _FACTOR_RE.match(tok.upper())
                if not m:
                    raise ParseError(f"invalid Pauli factor {tok!r}")
                parsed.append((int(m.group(2)), m.group(1)))
            factors = parsed
        out = cls(n_qubits)
        for q, ch in factors:
            if not 0 <= q < n_qubits:
                raise DimensionError(f"qubit {q} outside 0..{n_qubits - 1}")
            bx, bz = _BITS[ch.upper()]
            out = multiply(out, cls(n_qubits, bx << q, bz << q))
        return out

    @property
    def label(self):
        return "".join(self.symbol(q) for q in range(self.n_qubits))

    def symbol(self, q):
        return _SYMBOL[((self.x >> q) & 1, (self.z >> q) & 1)]

    @property
    def factors(self):
        """Non-identity factors as ``[(qubit, letter), ...]``."""
        return [(q, self.symbol(q)) for q in range(self.n_qubits) if (self.x | self.z) >> q & 1]

    @property
    def weight(self):
        return (self.x | self.z).bit_count()

    @property
    def is_identity(self):
        return self.x == 0 and self.z == 0

    @property
    def is_hermitian(self):
        return self.phase % 2 == 0

    @property
    def key(self):
        """Canonical sort key, independent of phase."""
        return (self.x, self.z)

    def with_phase(self, phase):
        return PauliProduct(self.n_qubits, self.x, self.z, phase)

    def __mul__(self, other):
        return multiply(self, other)

    def __str__(self):
        body = " ".join(f"{ch}{q}" for q, ch in self.factors) or "I"
        return _PHASE_STR[self.phase] + body


def _check_dims(a, b):
    if a.n_qubits != b.n_qubits:
        raise DimensionError(f"qubit counts differ: {a.n_qubits} vs {b.n_qubits}")


def product_phase(x1, z1, x2, z2):
    """Exponent of ``i`` picked up by ``sigma(x1, z1) * sigma(x2, z2)``.

    Works on Python ints and on integer numpy arrays alike.
    """
    plus = (x1 & ~z1 & x2 & z2) | (x1 & z1 & ~x2 & z2) | (~x1 & z1 & x2 & ~z2)
    minus = (x2 & ~z2 & x1 & z1) | (x2 & z2 & ~x1 & z1) | (~x2 & z2 & x1 & ~z1)
    if isinstance(plus, np.ndarray):
        return (np.bitwise_count(plus).astype(np.int64) - np.bitwise_count(minus)) % 4
    return (plus.bit_count() - minus.bit_count()) % 4


def multiply(a, b):
    """Product ``a * b`` with the accumulated phase."""
    _check_dims(a, b)
    ph = a.phase + b.phase + product_phase(a.x, a.z, b.x, b.z)
    return PauliProduct(a.n_qubits, a.x ^ b.x, a.z ^ b.z, ph)


def fully_commutes(a, b):
    _check_dims(a, b)
    return ((a.x & b.z) ^ (a.z & b.x)).bit_count() % 2 == 0


def qubitwise_commutes(a, b):
    _check_dims(a, b)
    clash = (a.x | a.z) & (b.x | b.z) & ((a.x ^ b.x) | (a.z ^ b.z))
    return clash == 0


def to_dense_matrix(p):
    if p.n_qubits > MAX_DENSE_QUBITS:
        raise ResourceError(f"dense matrix for {p.n_qubits} qubits exceeds the {MAX_DENSE_QUBITS}-qubit guard")
    mat = np.ones((1, 1), dtype=complex)
    for q in range(p.n_qubits):
        mat = np.kron(mat, _SINGLE[p.symbol(q)])
    return (1j ** p.phase) * mat


def index_masks(masks, n_qubits):
    """Map qubit bitsets to basis-index bitsets (qubit q -> bit n-1-q)."""
    masks = np.asarray(masks, dtype=np.int64)
    out = np.zeros_like(masks)
    for q in range(n_qubits):
        out |= ((masks >> q) & 1) << (n_qubits - 1 - q)
    return out


class Hamiltonian:
    """Real linear combination of Hermitian Pauli products.

    Terms are merged, stripped of zero coefficients and sorted by the
    canonical ``(x, z)`` key on construction.  The identity term, if present,
    is kept; it contributes a constant and is never measured.
    """

    def __init__(self, n_qubits, terms):
        merged = {}
        for coeff, pauli in terms:
            if pauli.n_qubits != n_qubits:
                raise DimensionError(f"term on {pauli.n_qubits} qubits in a {n_qubits}-qubit Hamiltonian")
            if pauli.phase != 0:
                raise ValidationError(f"term {pauli} carries a non-trivial phase")
            if isinstance(coeff, complex):
                if coeff.imag != 0:
                    raise ValidationError(f"complex coefficient {coeff} for {pauli}")
                coeff = coeff.real
            coeff = float(coeff)
            if not math.isfinite(coeff):
                raise ValidationError(f"non-finite coefficient for {pauli}")
            merged[pauli.key] = merged.get(pauli.key, 0.0) + coeff
        keys = sorted(k for k, c in merged.items() if c != 0.0)
        self.n_qubits = n_qubits
        self.paulis = tuple(PauliProduct(n_qubits, x, z) for x, z in keys)
        self.coeffs = np.array([merged[k] for k in keys], dtype=float)
        self.coeffs.flags.writeable = False
        self.xs = np.array([x for x, _ in keys], dtype=np.int64)
        self.zs = np.array([z for _, z in keys], dtype=np.int64)
        self.xs.flags.writeable = False
        self.zs.flags.writeable = False
        self._index = {k: i for i, k in enumerate(keys)}

    @classmethod
    def from_labels(cls, mapping):
        """``{"XIZ": 0.5, ...}`` -> Hamiltonian."""
        items = list(mapping.items())
        n = len(items[0][0]) if items else 0
        return cls(n, [(c, PauliProduct.from_label(lbl)) for lbl, c in items])

    @property
    def n_terms(self):
        return len(self.paulis)

    def __len__(self):
        return len(self.paulis)

    def __iter__(self):
        return iter(zip(self.coeffs, self.paulis))

    def __eq__(self, other):
        return (
            isinstance(other, Hamiltonian)
            and self.n_qubits == other.n_qubits
            and self.paulis == other.paulis
            and np.array_equal(self.coeffs, other.coeffs)
        )

    def __repr__(self):
        return f"Hamiltonian(n_qubits={self.n_qubits}, n_terms={self.n_terms})"

    def index(self, pauli):
        return self._index[pauli.key]

    @property
    def constant(self):
        i = self._index.get((0, 0))
        return 0.0 if i is None else float(self.coeffs[i])

    @property
    def measured_terms(self):
        """Indices of non-identity terms (the ones that need measuring)."""
        return [i for i, p in enumerate(self.paulis) if not p.is_identity]

    def to_dense_matrix(self):
        if self.n_qubits > MAX_DENSE_QUBITS:
            raise ResourceError(f"dense matrix for {self.n_qubits} qubits exceeds the guard")
        dim = 1 << self.n_qubits
        out = np.zeros((dim, dim), dtype=complex)
        for c, p in self:
            out += c * to_dense_matrix(p)
        return out
