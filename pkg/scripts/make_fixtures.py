"""Regenerate the molecular Hamiltonian fixtures shipped in src/measgroup/data.

Requires pyscf, openfermion and openfermionpyscf, none of which are runtime
dependencies of measgroup.  Every fixture uses the STO-3G basis, all bond
lengths of 1 Angstrom and the Bravyi-Kitaev fermion-to-qubit mapping:

    H2    H-H 1.0
    LiH   Li-H 1.0
    BeH2  linear, Be-H 1.0
    H2O   O-H 1.0, HOH 107.6 deg
    NH3   N-H 1.0, HNH 107.0 deg

Usage:  python scripts/make_fixtures.py [name ...]
"""
import sys
from pathlib import Path

import numpy as np
import openfermion as of
from openfermionpyscf import run_pyscf

BOND = 1.0
OUT = Path(__file__).resolve().parents[1] / "src" / "measgroup" / "data"


def _h2o(angle=107.6):
    half = np.deg2rad(angle) / 2
    return [
        ("O", (0.0, 0.0, 0.0)),
        ("H", (BOND * np.sin(half), BOND * np.cos(half), 0.0)),
        ("H", (-BOND * np.sin(half), BOND * np.cos(half), 0.0)),
    ]


def _nh3(angle=107.0):
    # hydrogens on a cone around the z axis with equal N-H length
    a = np.deg2rad(angle)
    r = np.sqrt(BOND**2 * (1 - np.cos(a)) / 1.5)
    h = np.sqrt(BOND**2 - r**2)
    atoms = [("N", (0.0, 0.0, 0.0))]
    for k in range(3):
        phi = 2 * np.pi * k / 3
        atoms.append(("H", (r * np.cos(phi), r * np.sin(phi), -h)))
    return atoms


GEOMETRIES = {
    "h2": [("H", (0.0, 0.0, 0.0)), ("H", (0.0, 0.0, BOND))],
    "lih": [("Li", (0.0, 0.0, 0.0)), ("H", (0.0, 0.0, BOND))],
    "beh2": [("Be", (0.0, 0.0, 0.0)), ("H", (0.0, 0.0, BOND)), ("H", (0.0, 0.0, -BOND))],
    "h2o": _h2o(),
    "nh3": _nh3(),
}


def build(name):
    mol = of.MolecularData(GEOMETRIES[name], "sto-3g", 1, 0)
    mol = run_pyscf(mol, run_scf=True)
    fermion = of.get_fermion_operator(mol.get_molecular_hamiltonian())
    qubit = of.bravyi_kitaev(fermion, n_qubits=mol.n_qubits)
    qubit.compress(1e-12)
    lines = [
        f"# {name}: STO-3G, Bravyi-Kitaev, bond length {BOND} A",
        f"# geometry: {GEOMETRIES[name]}",
        f"# nqubits: {mol.n_qubits}",
    ]
    for term, coeff in sorted(qubit.terms.items()):
        factors = " ".join(f"{p}{q}" for q, p in term)
        lines.append(f"{float(np.real(coeff))!r} {factors}".rstrip())
    path = OUT / f"{name}.txt"
    path.write_text("\n".join(lines) + "\n")
    print(f"{name}: {mol.n_qubits} qubits, {len(qubit.terms)} terms -> {path}")


if __name__ == "__main__":
    for name in sys.argv[1:] or list(GEOMETRIES):
        build(name)
