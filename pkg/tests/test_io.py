import json

import numpy as np
import pytest

from measgroup.errors import DimensionError, ParseError, ValidationError
from measgroup.io import (
    FIXTURES,
    load_wavefunction,
    parse_hamiltonian,
    parse_wavefunction,
    read_hamiltonian,
    read_report,
    save_wavefunction,
    serialize_hamiltonian,
    write_report,
)
from measgroup.pauli import PauliProduct
from measgroup.pipeline import run_methods
from measgroup.statevector import StateVector

from conftest import random_hamiltonian


class TestParseHamiltonian:
    def test_fig1_shape(self):
        h = parse_hamiltonian("1.0 Z0\n0.5 Z0 Z1\n0.5 X0 X1")
        assert h.n_qubits == 2
        got = {p.label: c for c, p in h}
        assert got == {"ZI": 1.0, "ZZ": 0.5, "XX": 0.5}

    def test_merge(self):
        h = parse_hamiltonian("2.0 Z0\n3.0 Z0")
        assert h.n_terms == 1 and h.coeffs[0] == 5.0

    def test_cancel_dropped(self):
        h = parse_hamiltonian("2.0 Z0\n-2.0 Z0\n1.0 X1")
        assert [p.label for p in h.paulis] == ["IX"]

    def test_bad_letter(self):
        with pytest.raises(ParseError) as err:
            parse_hamiltonian("1.0 Q3")
        assert err.value.line == 1

    def test_bad_coefficient_line_number(self):
        with pytest.raises(ParseError) as err:
            parse_hamiltonian("# c\n1.0 Z0\nabc X1")
        assert err.value.line == 3

    def test_repeated_qubit(self):
        with pytest.raises(ParseError):
            parse_hamiltonian("1.0 X0 Z0")

    def test_identity_and_comments(self):
        h = parse_hamiltonian("# header\n-0.5   # constant\n1.0 Y2\n")
        assert h.n_qubits == 3
        assert h.constant == -0.5

    def test_nqubits_header(self):
        assert parse_hamiltonian("# nqubits: 5\n1.0 Z0").n_qubits == 5
        with pytest.raises(ParseError):
            parse_hamiltonian("# nqubits: 1\n1.0 Z3")

    def test_round_trip(self, rng):
        for _ in range(20):
            h = random_hamiltonian(rng, 5, 12)
            assert parse_hamiltonian(serialize_hamiltonian(h)) == h

    def test_round_trip_awkward_floats(self):
        text = "0.1 Z0\n1e-17 X1\n-2.220446049250313e-16 Y0 Y1\n123456789.123 Z1\n"
        h = parse_hamiltonian(text)
        assert parse_hamiltonian(serialize_hamiltonian(h)) == h


class TestFixtures:
    def test_all_load(self):
        for name in FIXTURES:
            assert read_hamiltonian(name).n_terms > 0

    def test_h2_size(self):
        h = read_hamiltonian("h2")
        assert (h.n_qubits, h.n_terms) == (4, 15)

    def test_nh3_size(self):
        h = read_hamiltonian("nh3")
        assert (h.n_qubits, h.n_terms) == (16, 3609)

    def test_unknown(self):
        with pytest.raises(FileNotFoundError):
            read_hamiltonian("nope")


class TestWavefunction:
    def test_basis(self):
        s = parse_wavefunction("1 0\n0 0\n", 1)
        assert np.allclose(s.amplitudes, [1, 0])

    def test_renormalise(self):
        with pytest.warns(UserWarning):
            s = parse_wavefunction("1 0\n1 0\n", 1)
        assert np.allclose(s.amplitudes, [2 ** -0.5, 2 ** -0.5])

    def test_length(self):
        with pytest.raises(DimensionError):
            parse_wavefunction("1 0\n0 0\n0 0\n", 1)

    def test_zero(self):
        with pytest.raises(ValidationError):
            parse_wavefunction("0 0\n0 0\n", 1)

    def test_file_round_trip(self, tmp_path):
        s = StateVector.random(3, 7)
        path = tmp_path / "psi.txt"
        save_wavefunction(s, path)
        assert np.array_equal(load_wavefunction(path, 3).amplitudes, s.amplitudes)


class TestReport:
    def test_empty(self):
        assert json.loads(write_report({})) == {"methods": {}}

    def test_one_method(self):
        text = write_report({"methods": {"SI": {"variance": 0.5}}})
        assert read_report(text) == {"methods": {"SI": {"variance": 0.5}}}

    def test_stable_keys(self):
        a = write_report({"methods": {"b": {"y": 1, "x": 2}, "a": {}}, "z": np.float64(1.5)})
        b = write_report({"z": 1.5, "methods": {"a": {}, "b": {"x": 2, "y": 1}}})
        assert a == b

    def test_h2_all_methods(self, h2, h2_ground):
        res = run_methods(h2, h2_ground[1], "fc")
        report = read_report(write_report({"methods": {k: r.to_dict() for k, r in res.items()}}))
        vs = [v["variance"] for v in report["methods"].values()]
        assert len(vs) == 5
        assert max(vs) - min(vs) < 1e-3

    def test_pauli_str(self):
        assert str(PauliProduct.from_label("XIZ")) == "X0 Z2"
