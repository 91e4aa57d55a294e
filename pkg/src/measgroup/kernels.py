"""Hot inner loops, in a numba flavour and a pure numpy flavour.

All state-vector kernels take *index masks*: bit ``b`` of a mask acts on bit
``b`` of the basis-state index.  Conversion from qubit numbering happens in
:mod:`measgroup.statevector`.  Pauli masks in the compatibility kernels are the
plain qubit masks of :class:`measgroup.pauli.PauliProduct`.

The public names at the bottom of the module are bound to one flavour
according to :data:`measgroup._accel.USE_NUMBA`; both flavours stay importable
as ``NUMBA_KERNELS`` / ``NUMPY_KERNELS`` for tests and benchmarks.
"""
from types import SimpleNamespace

import numpy as np

from ._accel import HAVE_NUMBA, USE_NUMBA, njit

# Pauli x-patterns that appear at least this many times in a batch are
# evaluated with one Walsh-Hadamard transform instead of term by term.
FWHT_MIN_BATCH = 8


# ---------------------------------------------------------------------------
# numpy flavour
# ---------------------------------------------------------------------------

def _signs_np(dim, zs):
    idx = np.arange(dim, dtype=np.int64)
    return 1 - 2 * (np.bitwise_count(idx[None, :] & np.asarray(zs, dtype=np.int64)[:, None]) & 1).astype(np.int8)


def apply_xz_np(psi, x, z, coef):
    """Return ``coef * X^x Z^z psi``."""
    dim = psi.shape[0]
    idx = np.arange(dim, dtype=np.int64)
    signed = psi * (1 - 2 * (np.bitwise_count(idx & z) & 1).astype(np.int8))
    return coef * signed[idx ^ x]


def pauli_sum_apply_np(psi, xs, zs, coefs, chunk=64):
    """Return ``sum_t coefs[t] X^xs[t] Z^zs[t] psi``."""
    dim = psi.shape[0]
    idx = np.arange(dim, dtype=np.int64)
    out = np.zeros(dim, dtype=np.complex128)
    order = np.argsort(xs, kind="stable")
    xs, zs, coefs = xs[order], zs[order], coefs[order]
    ux, starts = np.unique(xs, return_index=True)
    stops = np.append(starts[1:], xs.size)
    for x, lo, hi in zip(ux, starts, stops):
        diag = np.zeros(dim, dtype=np.complex128)
        for c0 in range(lo, hi, chunk):
            c1 = min(c0 + chunk, hi)
            diag += coefs[c0:c1] @ _signs_np(dim, zs[c0:c1])
        out += (diag * psi)[idx ^ x]
    return out


def xz_expectation_np(psi, x, z):
    """``<psi| X^x Z^z |psi>`` (complex, no Hermitian phase applied)."""
    dim = psi.shape[0]
    idx = np.arange(dim, dtype=np.int64)
    sign = 1 - 2 * (np.bitwise_count(idx & z) & 1).astype(np.int8)
    return np.vdot(psi[idx ^ x], psi * sign)


def diag_sum_apply_np(psi, ux, diags):
    """Return ``sum_u (diags[u] * psi)[i ^ ux[u]]`` (one diagonal per x-pattern)."""
    idx = np.arange(psi.shape[0], dtype=np.int64)
    out = np.zeros(psi.shape[0], dtype=np.result_type(psi, diags))
    for u in range(ux.shape[0]):
        out += (diags[u] * psi)[idx ^ ux[u]]
    return out


def fwht_np(a):
    """Unnormalised Walsh-Hadamard transform: ``W[z] = sum_i a[i] (-1)^{|i & z|}``."""
    n = a.shape[0]
    out = np.array(a, dtype=np.complex128, copy=True)
    h = 1
    while h < n:
        out = out.reshape(-1, 2, h)
        out = np.stack((out[:, 0] + out[:, 1], out[:, 0] - out[:, 1]), axis=1)
        h *= 2
    return out.reshape(n)


def _shifted_overlap_np(psi, x):
    idx = np.arange(psi.shape[0], dtype=np.int64)
    return np.conj(psi[idx ^ x]) * psi


def compat_matrix_np(xs, zs, qubitwise, chunk=512):
    xs = np.asarray(xs, dtype=np.int64)
    zs = np.asarray(zs, dtype=np.int64)
    n = xs.size
    out = np.empty((n, n), dtype=np.bool_)
    supp = xs | zs
    for r0 in range(0, n, chunk):
        r1 = min(r0 + chunk, n)
        xa, za = xs[r0:r1, None], zs[r0:r1, None]
        if qubitwise:
            clash = (supp[r0:r1, None] & supp[None, :]) & ((xa ^ xs[None, :]) | (za ^ zs[None, :]))
            out[r0:r1] = clash == 0
        else:
            sym = (xa & zs[None, :]) ^ (za & xs[None, :])
            out[r0:r1] = (np.bitwise_count(sym) & 1) == 0
    return out


def si_labels_np(order, compat):
    """Sorted-insertion sweep; returns the group label of every vertex in ``order``."""
    labels = np.full(compat.shape[0], -1, dtype=np.int64)
    remaining = list(order)
    g = 0
    while remaining:
        ok = np.ones(compat.shape[0], dtype=np.bool_)
        left = []
        for t in remaining:
            if ok[t]:
                labels[t] = g
                ok &= compat[t]
            else:
                left.append(t)
        remaining = left
        g += 1
    return labels


def lf_labels_np(order, compat):
    """Greedy colouring in the given vertex order, lowest feasible colour first."""
    n = compat.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    feasible = []  # per colour: vertices compatible with every member so far
    for v in order:
        for c, ok in enumerate(feasible):
            if ok[v]:
                labels[v] = c
                ok &= compat[v]
                break
        else:
            labels[v] = len(feasible)
            feasible.append(compat[v].copy())
    return labels


def extend_groups_np(members, offsets, compat):
    """Overlapping extension of ordered groups (flat ``members`` + ``offsets``)."""
    tracked = []
    out, out_off = [], [0]
    for g in range(offsets.size - 1):
        group = list(members[offsets[g]:offsets[g + 1]])
        ok = np.ones(compat.shape[0], dtype=np.bool_)
        for t in group:
            ok &= compat[t]
        base = set(group)
        for t in tracked:
            if t not in base and ok[t]:
                group.append(t)
                ok &= compat[t]
        tracked.extend(members[offsets[g]:offsets[g + 1]])
        out.extend(group)
        out_off.append(len(out))
    return np.asarray(out, dtype=np.int64), np.asarray(out_off, dtype=np.int64)


# ---------------------------------------------------------------------------
# numba flavour
# ---------------------------------------------------------------------------

@njit
def _popcount(v):
    c = 0
    while v:
        v &= v - 1
        c += 1
    return c


@njit
def parity_table(dim):
    tab = np.zeros(dim, dtype=np.int8)
    for i in range(1, dim):
        tab[i] = tab[i >> 1] ^ (i & 1)
    return tab


@njit
def _apply_xz_nb(psi, x, z, coef):
    dim = psi.shape[0]
    par = parity_table(dim)
    out = np.empty(dim, dtype=np.complex128)
    for i in range(dim):
        v = coef * psi[i]
        if par[i & z]:
            v = -v
        out[i ^ x] = v
    return out


@njit
def _pauli_sum_apply_nb(psi, xs, zs, coefs):
    dim = psi.shape[0]
    par = parity_table(dim)
    out = np.zeros(dim, dtype=np.complex128)
    for t in range(xs.shape[0]):
        x = xs[t]
        z = zs[t]
        c = coefs[t]
        for i in range(dim):
            if par[i & z]:
                out[i ^ x] -= c * psi[i]
            else:
                out[i ^ x] += c * psi[i]
    return out


@njit
def _diag_sum_apply_nb(psi, ux, diags):
    dim = psi.shape[0]
    out = np.zeros_like(psi)
    for u in range(ux.shape[0]):
        x = ux[u]
        for i in range(dim):
            out[i ^ x] += diags[u, i] * psi[i]
    return out


@njit
def _xz_expectation_nb(psi, x, z):
    dim = psi.shape[0]
    par = parity_table(dim)
    acc = 0.0 + 0.0j
    for i in range(dim):
        w = np.conj(psi[i ^ x]) * psi[i]
        if par[i & z]:
            acc -= w
        else:
            acc += w
    return acc


@njit
def _fwht_nb(a):
    out = a.astype(np.complex128)
    n = out.shape[0]
    h = 1
    while h < n:
        for start in range(0, n, 2 * h):
            for j in range(start, start + h):
                u = out[j]
                v = out[j + h]
                out[j] = u + v
                out[j + h] = u - v
        h *= 2
    return out


@njit
def _shifted_overlap_nb(psi, x):
    dim = psi.shape[0]
    w = np.empty(dim, dtype=np.complex128)
    for i in range(dim):
        w[i] = np.conj(psi[i ^ x]) * psi[i]
    return w


@njit
def _compat_matrix_nb(xs, zs, qubitwise):
    n = xs.shape[0]
    out = np.empty((n, n), dtype=np.bool_)
    for a in range(n):
        out[a, a] = True
        for b in range(a + 1, n):
            if qubitwise:
                ok = ((xs[a] | zs[a]) & (xs[b] | zs[b]) & ((xs[a] ^ xs[b]) | (zs[a] ^ zs[b]))) == 0
            else:
                ok = (_popcount((xs[a] & zs[b]) ^ (zs[a] & xs[b])) & 1) == 0
            out[a, b] = ok
            out[b, a] = ok
    return out


@njit
def _si_labels_nb(order, compat):
    n = compat.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    ok = np.empty(n, dtype=np.bool_)
    left = order.size
    g = 0
    while left > 0:
        ok[:] = True
        for t in order:
            if labels[t] >= 0 or not ok[t]:
                continue
            labels[t] = g
            left -= 1
            for u in range(n):
                ok[u] = ok[u] and compat[t, u]
        g += 1
    return labels


@njit
def _lf_labels_nb(order, compat):
    n = compat.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    feasible = np.empty((n, n), dtype=np.bool_)
    ncol = 0
    for v in order:
        c = 0
        while c < ncol and not feasible[c, v]:
            c += 1
        if c == ncol:
            feasible[c, :] = True
            ncol += 1
        labels[v] = c
        for u in range(n):
            feasible[c, u] = feasible[c, u] and compat[v, u]
    return labels


@njit
def _extend_groups_nb(members, offsets, compat):
    n = compat.shape[0]
    ngroups = offsets.shape[0] - 1
    tracked = np.empty(members.shape[0], dtype=np.int64)
    ntracked = 0
    out = np.empty(members.shape[0] * max(ngroups, 1), dtype=np.int64)
    out_off = np.zeros(ngroups + 1, dtype=np.int64)
    in_base = np.zeros(n, dtype=np.bool_)
    ok = np.empty(n, dtype=np.bool_)
    pos = 0
    for g in range(ngroups):
        ok[:] = True
        for i in range(offsets[g], offsets[g + 1]):
            t = members[i]
            in_base[t] = True
            out[pos] = t
            pos += 1
            for u in range(n):
                ok[u] = ok[u] and compat[t, u]
        for i in range(ntracked):
            t = tracked[i]
            if not in_base[t] and ok[t]:
                out[pos] = t
                pos += 1
                for u in range(n):
                    ok[u] = ok[u] and compat[t, u]
        for i in range(offsets[g], offsets[g + 1]):
            t = members[i]
            in_base[t] = False
            tracked[ntracked] = t
            ntracked += 1
        out_off[g + 1] = pos
    return out[:pos].copy(), out_off


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def _make_batch(xz_expectation, fwht, shifted_overlap):
    def xz_expectations(psi, xs, zs):
        """Batch of ``<psi| X^x Z^z |psi>`` values, grouped by x-pattern."""
        xs = np.asarray(xs, dtype=np.int64)
        zs = np.asarray(zs, dtype=np.int64)
        out = np.empty(xs.size, dtype=np.complex128)
        if xs.size == 0:
            return out
        order = np.argsort(xs, kind="stable")
        sx = xs[order]
        ux, starts = np.unique(sx, return_index=True)
        stops = np.append(starts[1:], sx.size)
        for x, lo, hi in zip(ux, starts, stops):
            sel = order[lo:hi]
            if hi - lo >= FWHT_MIN_BATCH:
                spectrum = fwht(shifted_overlap(psi, int(x)))
                out[sel] = spectrum[zs[sel]]
            else:
                for t in sel:
                    out[t] = xz_expectation(psi, int(x), int(zs[t]))
        return out

    return xz_expectations


NUMPY_KERNELS = SimpleNamespace(
    name="numpy",
    apply_xz=apply_xz_np,
    pauli_sum_apply=pauli_sum_apply_np,
    diag_sum_apply=diag_sum_apply_np,
    xz_expectation=xz_expectation_np,
    xz_expectations=_make_batch(xz_expectation_np, fwht_np, _shifted_overlap_np),
    fwht=fwht_np,
    compat_matrix=compat_matrix_np,
    si_labels=si_labels_np,
    lf_labels=lf_labels_np,
    extend_groups=extend_groups_np,
)

if HAVE_NUMBA:
    NUMBA_KERNELS = SimpleNamespace(
        name="numba",
        apply_xz=_apply_xz_nb,
        pauli_sum_apply=_pauli_sum_apply_nb,
        diag_sum_apply=_diag_sum_apply_nb,
        xz_expectation=_xz_expectation_nb,
        xz_expectations=_make_batch(_xz_expectation_nb, _fwht_nb, _shifted_overlap_nb),
        fwht=_fwht_nb,
        compat_matrix=_compat_matrix_nb,
        si_labels=_si_labels_nb,
        lf_labels=_lf_labels_nb,
        extend_groups=_extend_groups_nb,
    )
else:  # pragma: no cover
    NUMBA_KERNELS = None

ACTIVE = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS

apply_xz = ACTIVE.apply_xz
pauli_sum_apply = ACTIVE.pauli_sum_apply
diag_sum_apply = ACTIVE.diag_sum_apply
xz_expectation = ACTIVE.xz_expectation
xz_expectations = ACTIVE.xz_expectations
fwht = ACTIVE.fwht
compat_matrix = ACTIVE.compat_matrix
si_labels = ACTIVE.si_labels
lf_labels = ACTIVE.lf_labels
extend_groups = ACTIVE.extend_groups
