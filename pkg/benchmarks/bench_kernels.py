"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--qubits 14] [--repeat 5]

Each kernel runs once untimed (so numba compilation is excluded), then the
best of ``--repeat`` runs is reported for both flavours along with the
largest absolute difference between their outputs.
"""
import argparse
import time

import numpy as np

from measgroup import kernels
from measgroup.io import read_hamiltonian


def best_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n, h, rng):
    dim = 1 << n
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    psi /= np.linalg.norm(psi)
    xs = np.array([p.x for p in h.paulis], dtype=np.int64)
    zs = np.array([p.z for p in h.paulis], dtype=np.int64)
    # state kernels use fixture masks truncated to the benchmark register
    sx, sz = xs & (dim - 1), zs & (dim - 1)
    cs = rng.normal(size=sx.size).astype(np.complex128)
    compat = kernels.NUMPY_KERNELS.compat_matrix(xs, zs, False)
    order = np.argsort(-np.abs(h.coeffs), kind="stable").astype(np.int64)
    labels = kernels.NUMPY_KERNELS.si_labels(order, compat)
    members = np.concatenate([order[labels[order] == g] for g in range(labels.max() + 1)]).astype(np.int64)
    offsets = np.concatenate([[0], np.cumsum(np.bincount(labels))]).astype(np.int64)
    x0, z0 = int(sx[len(sx) // 2]), int(sz[len(sz) // 2])
    return {
        "apply_xz": lambda K: K.apply_xz(psi, x0, z0, 0.5 + 0.25j),
        "xz_expectations": lambda K: K.xz_expectations(psi, sx, sz),
        "pauli_sum_apply": lambda K: K.pauli_sum_apply(psi, sx[:200], sz[:200], cs[:200]),
        "compat_matrix fc": lambda K: K.compat_matrix(xs, zs, False),
        "compat_matrix qwc": lambda K: K.compat_matrix(xs, zs, True),
        "si_labels": lambda K: K.si_labels(order, compat),
        "lf_labels": lambda K: K.lf_labels(order, compat),
        "extend_groups": lambda K: K.extend_groups(members, offsets, compat),
    }


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a), np.asarray(b)
    if a.dtype == bool:
        return float(np.count_nonzero(a != b))
    return float(np.max(np.abs(a - b), initial=0.0))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--qubits", type=int, default=14)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--hamiltonian", default="h2o")
    args = ap.parse_args(argv)
    if kernels.NUMBA_KERNELS is None:
        raise SystemExit("numba is not installed; nothing to compare")
    h = read_hamiltonian(args.hamiltonian)
    rng = np.random.default_rng(0)
    print(f"{args.hamiltonian}: {h.n_terms} terms, state kernels on {args.qubits} qubits")
    print(f"{'kernel':<20}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}{'max diff':>12}")
    for name, fn in cases(args.qubits, h, rng).items():
        t_np = best_time(lambda: fn(kernels.NUMPY_KERNELS), args.repeat)
        t_nb = best_time(lambda: fn(kernels.NUMBA_KERNELS), args.repeat)
        diff = max_diff(fn(kernels.NUMPY_KERNELS), fn(kernels.NUMBA_KERNELS))
        print(f"{name:<20}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>10.1f}{diff:>12.1e}")


if __name__ == "__main__":
    main()
