"""Matrix-free state-vector routines.

Pauli products act on amplitudes as a permutation with signs, so nothing here
ever builds a ``2^n x 2^n`` matrix.  Expectation values of many Pauli products
sharing an x-pattern are obtained together from one Walsh-Hadamard transform
(see :func:`measgroup.kernels.xz_expectations`).
"""
import numpy as np
from scipy.linalg import eigh_tridiagonal

from . import kernels
from .errors import ContractError, ConvergenceError, DimensionError, ResourceError, ValidationError
from .pauli import fully_commutes, index_masks, multiply

MAX_STATE_QUBITS = 16
NORM_TOL = 1e-10


class StateVector:
    """Normalised pure state on ``n_qubits`` qubits (big-endian amplitudes)."""

    def __init__(self, amplitudes, normalize=False):
        amps = np.array(amplitudes, dtype=np.complex128).reshape(-1)
        dim = amps.size
        n = dim.bit_length() - 1
        if dim == 0 or (1 << n) != dim:
            raise DimensionError(f"{dim} amplitudes is not a power of two")
        norm = np.linalg.norm(amps)
        if norm == 0:
            raise ValidationError("zero state vector")
        if abs(norm - 1) > NORM_TOL:
            if not normalize:
                raise ValidationError(f"state norm {norm} differs from 1")
        amps = amps / norm
        amps.flags.writeable = False
        self.n_qubits = n
        self.amplitudes = amps

    @classmethod
    def basis(cls, n_qubits, index=0):
        amps = np.zeros(1 << n_qubits, dtype=np.complex128)
        amps[index] = 1.0
        return cls(amps)

    @classmethod
    def random(cls, n_qubits, rng=None, real=False):
        rng = np.random.default_rng(rng)
        amps = rng.normal(size=1 << n_qubits)
        if not real:
            amps = amps + 1j * rng.normal(size=1 << n_qubits)
        return cls(amps, normalize=True)

    @property
    def dim(self):
        return self.amplitudes.size

    def __repr__(self):
        return f"StateVector(n_qubits={self.n_qubits})"


def _check(p, s):
    if p.n_qubits != s.n_qubits:
        raise DimensionError(f"Pauli on {p.n_qubits} qubits, state on {s.n_qubits}")


def _kernel_args(p):
    n = p.n_qubits
    x = int(index_masks(p.x, n))
    z = int(index_masks(p.z, n))
    coef = 1j ** ((p.phase + (p.x & p.z).bit_count()) % 4)
    return x, z, complex(coef)


def apply_pauli(p, s):
    _check(p, s)
    x, z, coef = _kernel_args(p)
    return StateVector(kernels.apply_xz(s.amplitudes, x, z, coef))


def expectation(p, s):
    _check(p, s)
    if not p.is_hermitian:
        raise ValidationError(f"{p} is not Hermitian")
    x, z, coef = _kernel_args(p)
    return float((coef * kernels.xz_expectation(s.amplitudes, x, z)).real)


def covariance(p, q, s):
    """``<pq> - <p><q>`` for fully commuting ``p`` and ``q``."""
    _check(p, s)
    _check(q, s)
    if not fully_commutes(p, q):
        raise ContractError(f"covariance requested for anticommuting {p} and {q}")
    pq = multiply(p, q)
    x, z, coef = _kernel_args(pq)
    joint = (coef * kernels.xz_expectation(s.amplitudes, x, z)).real
    return float(joint - expectation(p, s) * expectation(q, s))


class CovarianceOracle:
    """Expectation and covariance provider for one fixed state.

    Raw values ``<X^x Z^z>`` are cached by Pauli key in a sorted array, so
    covariance blocks for overlapping groups reuse everything already seen.
    """

    def __init__(self, state):
        if state.n_qubits > 31:
            raise ResourceError("covariance keys support at most 31 qubits")
        self.state = state
        self.n_qubits = state.n_qubits
        self._keys = np.empty(0, dtype=np.int64)
        self._vals = np.empty(0, dtype=np.complex128)

    def __len__(self):
        return self._keys.size

    def _raw(self, xs, zs):
        xs = np.asarray(xs, dtype=np.int64)
        zs = np.asarray(zs, dtype=np.int64)
        keys = (xs << self.n_qubits) | zs
        uk, inv = np.unique(keys, return_inverse=True)
        pos = np.searchsorted(self._keys, uk)
        hit = np.zeros(uk.size, dtype=bool)
        inside = pos < self._keys.size
        hit[inside] = self._keys[pos[inside]] == uk[inside]
        if not hit.all():
            miss = uk[~hit]
            mx = index_masks(miss >> self.n_qubits, self.n_qubits)
            mz = index_masks(miss & ((1 << self.n_qubits) - 1), self.n_qubits)
            vals = kernels.xz_expectations(self.state.amplitudes, mx, mz)
            keys_all = np.concatenate([self._keys, miss])
            vals_all = np.concatenate([self._vals, vals])
            order = np.argsort(keys_all, kind="stable")
            self._keys, self._vals = keys_all[order], vals_all[order]
            pos = np.searchsorted(self._keys, uk)
        return self._vals[pos][inv]

    def _hermitian_expectations(self, xs, zs):
        xs = np.asarray(xs, dtype=np.int64)
        zs = np.asarray(zs, dtype=np.int64)
        ny = np.bitwise_count(xs & zs).astype(np.int64)
        return ((1j ** (ny % 4)) * self._raw(xs, zs)).real

    def expectation(self, p):
        if p.n_qubits != self.n_qubits:
            raise DimensionError("Pauli and state sizes differ")
        if not p.is_hermitian:
            raise ValidationError(f"{p} is not Hermitian")
        sign = -1.0 if p.phase == 2 else 1.0
        return sign * float(self._hermitian_expectations([p.x], [p.z])[0])

    def covariance(self, p, q):
        if not fully_commutes(p, q):
            raise ContractError(f"covariance requested for anticommuting {p} and {q}")
        pq = multiply(p, q)
        coef = 1j ** ((pq.phase + (pq.x & pq.z).bit_count()) % 4)
        joint = (coef * self._raw([pq.x], [pq.z])[0]).real
        return float(joint - self.expectation(p) * self.expectation(q))

    def term_expectations(self, h):
        return self._hermitian_expectations(h.xs, h.zs)

    def term_variances(self, h):
        """``Var(P_k) = 1 - <P_k>^2`` for every term of ``h``."""
        return 1.0 - self.term_expectations(h) ** 2

    def covariance_blocks(self, h, groups):
        """Covariance matrices of the Hamiltonian terms indexed by each group."""
        if h.n_qubits != self.n_qubits:
            raise DimensionError("Hamiltonian and state sizes differ")
        groups = [np.asarray(g, dtype=np.int64) for g in groups]
        if not groups:
            return []
        ev = self.term_expectations(h)
        ja = np.concatenate([np.repeat(g, g.size) for g in groups])
        ka = np.concatenate([np.tile(g, g.size) for g in groups])
        xj, zj, xk, zk = h.xs[ja], h.zs[ja], h.xs[ka], h.zs[ka]
        sym = (xj & zk) ^ (zj & xk)
        if np.any(np.bitwise_count(sym) & 1):
            raise ContractError("covariance block requested for a group with anticommuting members")
        ny = np.bitwise_count(xj & zj).astype(np.int64) + np.bitwise_count(xk & zk)
        flips = np.bitwise_count(zj & xk).astype(np.int64) * 2
        phase = 1j ** ((ny + flips) % 4)
        joint = (phase * self._raw(xj ^ xk, zj ^ zk)).real
        cov = joint - ev[ja] * ev[ka]
        out, pos = [], 0
        for g in groups:
            size = g.size * g.size
            out.append(cov[pos:pos + size].reshape(g.size, g.size))
            pos += size
        return out

    def covariance_matrix(self, paulis):
        g = len(paulis)
        out = np.empty((g, g))
        for a in range(g):
            for b in range(a, g):
                out[a, b] = out[b, a] = self.covariance(paulis[a], paulis[b])
        return out


def hamiltonian_operator(h, max_bytes=1 << 30):
    """Return ``psi -> H psi`` as a closure over precomputed kernel arguments.

    Terms sharing an x-pattern act as one diagonal followed by a bit flip; the
    diagonals are built once by a Walsh-Hadamard transform when they fit in
    ``max_bytes``, otherwise every term is applied on the fly.
    """
    if h.n_qubits > MAX_STATE_QUBITS:
        raise ResourceError(f"{h.n_qubits} qubits exceeds the {MAX_STATE_QUBITS}-qubit state limit")
    xi = index_masks(h.xs, h.n_qubits)
    zi = index_masks(h.zs, h.n_qubits)
    ny = np.bitwise_count(h.xs & h.zs).astype(np.int64)
    coefs = h.coeffs * (1j ** (ny % 4))
    dim = 1 << h.n_qubits
    ux, inv = np.unique(xi, return_inverse=True)
    if ux.size * dim * 16 > max_bytes:
        def matvec(psi):
            return kernels.pauli_sum_apply(psi, xi, zi, coefs)
        return matvec

    real = not np.any(coefs.imag)
    diags = np.empty((ux.size, dim), dtype=np.float64 if real else np.complex128)
    for u in range(ux.size):
        spikes = np.zeros(dim, dtype=np.complex128)
        sel = inv == u
        np.add.at(spikes, zi[sel], coefs[sel])
        spectrum = kernels.fwht(spikes)
        diags[u] = spectrum.real if real else spectrum

    def matvec(psi):
        psi = np.asarray(psi)
        if not real or np.iscomplexobj(psi):
            psi = psi.astype(np.complex128, copy=False)
        return kernels.diag_sum_apply(psi, ux, diags)

    matvec.is_real = real
    return matvec


def ground_state(h, max_iter=2000, tol=1e-8, seed=0, krylov_dim=120):
    """Lowest eigenpair of ``h`` by restarted Lanczos with full reorthogonalisation.

    Returns ``(energy, StateVector)``; the largest amplitude of the state is
    made real and positive.  Raises :class:`ConvergenceError` when the
    residual ``||H v - E v||`` stays above ``tol`` after ``max_iter``
    Hamiltonian applications.
    """
    matvec = hamiltonian_operator(h)
    dim = 1 << h.n_qubits
    rng = np.random.default_rng(seed)
    real = getattr(matvec, "is_real", False)
    v = rng.normal(size=dim) if real else rng.normal(size=dim) + 1j * rng.normal(size=dim)
    v /= np.linalg.norm(v)
    kdim = min(krylov_dim, dim)
    used = 0
    best = (np.inf, None, None)
    while used < max_iter:
        basis = np.empty((kdim, dim), dtype=v.dtype)
        basis[0] = v
        alphas, betas = [], []
        for j in range(kdim):
            w = matvec(basis[j])
            used += 1
            a = float(np.vdot(basis[j], w).real)
            w -= a * basis[j]
            if j > 0:
                w -= betas[-1] * basis[j - 1]
            for _ in range(2):
                w -= basis[: j + 1].T @ (basis[: j + 1].conj() @ w)
            b = float(np.linalg.norm(w))
            alphas.append(a)
            theta, vecs = eigh_tridiagonal(np.array(alphas), np.array(betas))
            if b * abs(vecs[-1, 0]) < 0.1 * tol or b < 1e-13 or j + 1 == kdim or used >= max_iter:
                break
            betas.append(b)
            basis[j + 1] = w / b
        m = len(alphas)
        x = vecs[:, 0] @ basis[:m]
        x /= np.linalg.norm(x)
        energy = float(theta[0])
        resid = float(np.linalg.norm(matvec(x) - energy * x))
        used += 1
        if resid < best[0]:
            best = (resid, energy, x)
        if resid <= tol:
            break
        v = x
    resid, energy, x = best
    if resid > tol:
        raise ConvergenceError(f"Lanczos residual {resid:.3e} above {tol:.1e}", residual=resid, energy=energy)
    k = int(np.argmax(np.abs(x)))
    x = x * (abs(x[k]) / x[k])
    return energy, StateVector(x.astype(np.complex128), normalize=True)


class GroupSampler:
    """Joint outcomes of a commuting group by sequential projective collapse.

    The collapse tree (branch probabilities and post-measurement states) is
    built lazily and reused across calls, so repeated sampling of the same
    group costs little beyond the random draws.
    """

    def __init__(self, group, state):
        for a in range(len(group)):
            if group[a].n_qubits != state.n_qubits:
                raise DimensionError("group and state sizes differ")
            if not group[a].is_hermitian:
                raise ValidationError(f"{group[a]} is not Hermitian")
            for b in range(a):
                if not fully_commutes(group[a], group[b]):
                    raise ContractError(f"{group[a]} and {group[b]} anticommute")
        self.group = list(group)
        self.state = state
        self._args = [_kernel_args(p) for p in self.group]
        self._nodes = {}

    def _node(self, prefix, vec):
        node = self._nodes.get(prefix)
        if node is None:
            x, z, coef = self._args[len(prefix)]
            pv = kernels.apply_xz(vec, x, z, coef)
            plus = 0.5 * (vec + pv)
            minus = 0.5 * (vec - pv)
            p_plus = float(np.clip(np.vdot(plus, plus).real, 0.0, 1.0))
            p_minus = 1.0 - p_plus
            plus = plus / np.sqrt(p_plus) if p_plus > 0 else None
            minus = minus / np.sqrt(p_minus) if p_minus > 0 else None
            node = (p_plus, plus, minus)
            self._nodes[prefix] = node
        return node

    def counts(self, shots, rng):
        """Multinomial draw over joint outcomes: ``(outcomes[leaf, k], counts[leaf])``."""
        leaves, counts = [], []
        stack = [((), self.state.amplitudes, int(shots))]
        g = len(self.group)
        while stack:
            prefix, vec, n = stack.pop()
            if len(prefix) == g:
                leaves.append(prefix)
                counts.append(n)
                continue
            p_plus, plus, minus = self._node(prefix, vec)
            n_plus = int(rng.binomial(n, p_plus)) if 0 < p_plus < 1 else (n if p_plus >= 1 else 0)
            if n - n_plus > 0:
                stack.append((prefix + (-1,), minus, n - n_plus))
            if n_plus > 0:
                stack.append((prefix + (1,), plus, n_plus))
        outcomes = np.array(leaves, dtype=np.int8).reshape(len(leaves), g)
        return outcomes, np.array(counts, dtype=np.int64)

    def sample(self, shots, rng):
        outcomes, counts = self.counts(shots, rng)
        table = np.repeat(outcomes, counts, axis=0)
        return table[rng.permutation(table.shape[0])]


def sample_group(group, s, shots, seed=None):
    """Per-shot ``+-1`` outcomes (shape ``(shots, len(group))``) of a commuting group."""
    rng = np.random.default_rng(seed)
    return GroupSampler(group, s).sample(shots, rng)
