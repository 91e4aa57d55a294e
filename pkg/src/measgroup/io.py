"""Text formats for Hamiltonians and wavefunctions, JSON reports, shipped fixtures.

Hamiltonian files hold one term per line::

    # nqubits: 4
    -0.0971
    0.1712 Z0
    0.0453 X0 Z1 X2

A line is a real coefficient followed by zero or more factors ``X<q>``,
``Y<q>``, ``Z<q>`` with 0-based qubit indices; no factors means the identity.
``#`` starts a comment.  The qubit count is one more than the largest index
unless a ``# nqubits: K`` header says otherwise.

Wavefunction files hold ``2^n`` lines ``<re> <im>``; line ``i`` is the
amplitude of basis state ``i`` with qubit 0 as the most significant bit.
"""
from importlib import resources
import json
import math
from pathlib import Path
import re
import warnings

import numpy as np

from .errors import DimensionError, ParseError, ValidationError
from .pauli import Hamiltonian, PauliProduct
from .statevector import NORM_TOL, StateVector

_HEADER_RE = re.compile(r"^#\s*nqubits\s*:\s*(\d+)\s*$", re.IGNORECASE)
_FACTOR_RE = re.compile(r"^([XYZ])(\d+)$")

FIXTURES = ("fig1", "h2", "lih", "beh2", "h2o", "nh3")


def parse_hamiltonian(text):
    declared = None
    rows = []
    max_q = -1
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = _HEADER_RE.match(line)
        if m:
            declared = int(m.group(1))
            continue
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            coeff = float(tokens[0])
        except ValueError:
            raise ParseError(f"bad coefficient {tokens[0]!r}", lineno) from None
        if not math.isfinite(coeff):
            raise ParseError("non-finite coefficient", lineno)
        factors = {}
        for tok in tokens[1:]:
            fm = _FACTOR_RE.match(tok)
            if not fm:
                raise ParseError(f"invalid factor {tok!r}", lineno)
            q = int(fm.group(2))
            if q in factors:
                raise ParseError(f"qubit {q} repeated", lineno)
            factors[q] = fm.group(1)
            max_q = max(max_q, q)
        rows.append((lineno, coeff, factors))
    n = max_q + 1
    if declared is not None:
        if declared < n:
            raise ParseError(f"nqubits header {declared} smaller than highest qubit index {max_q}")
        n = declared
    terms = [(c, PauliProduct.from_factors(n, sorted(f.items()))) for _, c, f in rows]
    return Hamiltonian(n, terms)


def serialize_hamiltonian(h):
    lines = [f"# nqubits: {h.n_qubits}"]
    for c, p in h:
        factors = " ".join(f"{ch}{q}" for q, ch in p.factors)
        lines.append(f"{float(c)!r} {factors}".rstrip())
    return "\n".join(lines) + "\n"


def fixture_path(name):
    """Path of a shipped fixture (``"h2"``, ``"lih"``, ...)."""
    ref = resources.files("measgroup") / "data" / f"{name}.txt"
    if not ref.is_file():
        raise FileNotFoundError(f"no fixture named {name!r}; available: {', '.join(FIXTURES)}")
    return Path(str(ref))


def read_hamiltonian(source):
    """Load a Hamiltonian from a file path or a shipped fixture name."""
    path = Path(source)
    if not path.exists() and not path.suffix and str(source) in FIXTURES:
        path = fixture_path(str(source))
    return parse_hamiltonian(path.read_text())


def parse_wavefunction(text, n_qubits):
    values = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError("expected '<re> <im>'", lineno)
        try:
            values.append(complex(float(parts[0]), float(parts[1])))
        except ValueError:
            raise ParseError("bad amplitude", lineno) from None
    if len(values) != 1 << n_qubits:
        raise DimensionError(f"{len(values)} amplitudes for {n_qubits} qubits (need {1 << n_qubits})")
    amps = np.array(values)
    norm = np.linalg.norm(amps)
    if norm == 0:
        raise ValidationError("wavefunction is the zero vector")
    if abs(norm - 1) > NORM_TOL:
        warnings.warn(f"wavefunction norm {norm:.12g} renormalised to 1", stacklevel=2)
    return StateVector(amps, normalize=True)


def load_wavefunction(path, n_qubits):
    return parse_wavefunction(Path(path).read_text(), n_qubits)


def serialize_wavefunction(state):
    return "".join(f"{float(a.real)!r} {float(a.imag)!r}\n" for a in state.amplitudes)


def save_wavefunction(state, path):
    Path(path).write_text(serialize_wavefunction(state))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if math.isnan(f) or math.isinf(f):
            return str(f)
        return f
    return obj


def write_report(results):
    """Render a results mapping as stable-key JSON.

    ``results`` must contain a ``"methods"`` mapping (possibly empty); any
    other top-level keys are carried along unchanged.
    """
    body = dict(results) if results else {}
    body.setdefault("methods", {})
    return json.dumps(_jsonable(body), sort_keys=True, indent=2) + "\n"


def read_report(text):
    return json.loads(text)
