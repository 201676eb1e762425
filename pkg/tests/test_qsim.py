import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracle
from qforecast import qsim
from qforecast.qsim import (ENCODING, TRAINABLE, CircuitError, Gate, ParamCircuit, PauliString,
                            StateVector)


def random_circuit(rng, n, n_gates):
    c = ParamCircuit(n)
    for _ in range(n_gates):
        kind = rng.choice(["RX", "RY", "RZ", "H", "CNOT"] if n > 1 else ["RX", "RY", "RZ", "H"])
        if kind == "CNOT":
            a, b = rng.choice(n, 2, replace=False)
            c.add("CNOT", int(b), control=int(a))
        elif kind == "H":
            c.add("H", int(rng.integers(n)))
        else:
            c.add(kind, int(rng.integers(n)), tag=TRAINABLE)
    return c


@st.composite
def circuits(draw, max_qubits=3, max_gates=15):
    n = draw(st.integers(1, max_qubits))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    c = random_circuit(rng, n, draw(st.integers(0, max_gates)))
    return c, rng.uniform(-2 * np.pi, 2 * np.pi, c.n_slots)


def test_initial_states():
    assert np.array_equal(qsim.init_state(3).amplitudes, oracle.zero_state(3))
    assert np.allclose(qsim.init_state(2, "all_plus").amplitudes, oracle.plus_state(2))
    with pytest.raises(CircuitError):
        qsim.init_state(2, "all_minus")
    with pytest.raises(CircuitError):
        qsim.init_state(0)
    with pytest.raises(CircuitError):
        qsim.init_state(qsim.MAX_QUBITS + 1)


def test_state_vector_shape_check():
    with pytest.raises(CircuitError):
        StateVector(2, np.zeros(3, complex))


@pytest.mark.parametrize("kind", ["RX", "RY", "RZ"])
@pytest.mark.parametrize("q", [0, 1, 2])
def test_rotation_matches_matrix_exponential(kind, q):
    rng = np.random.default_rng(1)
    psi = rng.normal(size=8) + 1j * rng.normal(size=8)
    theta = 0.731
    got = qsim.apply_rotation(psi[None], kind, q, 3, theta)[0]
    want = oracle.on_qubit(oracle.rotation(kind, theta), q, 3) @ psi
    assert np.allclose(got, want, atol=1e-12)
    back = qsim.apply_rotation(got[None], kind, q, 3, theta, adjoint=True)[0]
    assert np.allclose(back, psi, atol=1e-12)


def test_ry_pi_flips_zero_to_one():
    s = qsim.apply_gate(qsim.init_state(1), Gate("RY", 0, slot=0), np.pi)
    assert np.allclose(s.amplitudes, [0, 1], atol=1e-15)


def test_qubit_zero_is_least_significant_bit():
    s = qsim.apply_gate(qsim.init_state(3), Gate("RX", 0, slot=0), np.pi)
    assert np.argmax(np.abs(s.amplitudes)) == 1
    s = qsim.apply_gate(qsim.init_state(3), Gate("RX", 2, slot=0), np.pi)
    assert np.argmax(np.abs(s.amplitudes)) == 4


def test_cnot_truth_table():
    # |control=1, target=0> -> |1, 1>
    psi = np.zeros(4, complex)
    psi[0b01] = 1
    out = qsim.apply_gate(StateVector(2, psi), Gate("CNOT", 1, control=0))
    assert out.amplitudes[0b11] == 1
    out = qsim.apply_gate(StateVector(2, out.amplitudes), Gate("CNOT", 1, control=0))
    assert out.amplitudes[0b01] == 1


def test_bell_state():
    c = ParamCircuit(2).add("H", 0).add("CNOT", 1, control=0)
    s = qsim.run_circuit(c, [])
    assert np.allclose(s.amplitudes, [2 ** -0.5, 0, 0, 2 ** -0.5])
    assert qsim.expectation(s, PauliString.parse("Z0 Z1")) == pytest.approx(1.0)
    assert qsim.expectation(s, PauliString.parse("Z0")) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_cnot_permutation_matches_dense(n):
    for c in range(n):
        for t in range(n):
            if c == t:
                continue
            perm = qsim.cnot_permutation(c, t, n)
            assert sorted(perm) == list(range(2 ** n))
            assert np.array_equal(perm[perm], np.arange(2 ** n))
            psi = np.random.default_rng(c * 7 + t).normal(size=2 ** n).astype(complex)
            assert np.allclose(psi[perm], oracle.cnot(c, t, n) @ psi)


def test_fused_cnot_runs_match_gatewise():
    c = ParamCircuit(3)
    for i in range(3):
        c.add("CNOT", (i + 1) % 3, control=i)
    c.add("RY", 1, tag=TRAINABLE)
    c.add("CNOT", 0, control=2).add("CNOT", 2, control=1)
    ops = qsim.compiled(c)
    assert [op[0] for op in ops] == ["PERM", "RY", "PERM"]
    theta = [0.4]
    assert np.allclose(qsim.run_circuit(c, theta).amplitudes,
                       oracle.circuit_unitary(c, theta) @ oracle.zero_state(3), atol=1e-12)


@settings(max_examples=150, deadline=None)
@given(circuits())
def test_random_circuits_match_dense_oracle(case):
    c, theta = case
    n = c.n_qubits
    psi0 = np.random.default_rng(len(c.gates)).normal(size=2 ** n) + 0j
    psi0 /= np.linalg.norm(psi0)
    got = qsim.run_circuit(c, theta, StateVector(n, psi0)).amplitudes
    want = oracle.circuit_unitary(c, theta) @ psi0
    assert np.max(np.abs(got - want)) < 1e-10


@settings(max_examples=60, deadline=None)
@given(circuits(max_qubits=4, max_gates=20))
def test_norm_is_preserved(case):
    c, theta = case
    assert qsim.run_circuit(c, theta).norm() == pytest.approx(1.0, abs=1e-12)


def test_batched_run_matches_single_runs():
    rng = np.random.default_rng(5)
    c = random_circuit(rng, 3, 12)
    angles = rng.uniform(0, 2 * np.pi, (6, c.n_slots))
    batch = qsim.run_batch(c, angles, qsim.init_batch(3, 1))
    for b in range(6):
        assert np.allclose(batch[b], qsim.run_circuit(c, angles[b]).amplitudes, atol=1e-14)


def test_binding_count_is_checked():
    c = ParamCircuit(2).add("RY", 0, tag=ENCODING)
    with pytest.raises(CircuitError):
        qsim.run_circuit(c, [0.1, 0.2])
    with pytest.raises(CircuitError):
        qsim.run_batch(c, np.zeros((3, 2)), qsim.init_batch(2, 1))


def test_gate_validation():
    with pytest.raises(CircuitError):
        ParamCircuit(2).add("CNOT", 0, control=0)
    with pytest.raises(CircuitError):
        ParamCircuit(2).add("RY", 2, tag=TRAINABLE)
    with pytest.raises(CircuitError):
        ParamCircuit(2).add("RY", 0)
    with pytest.raises(CircuitError):
        ParamCircuit(2).add("SWAP", 0)
    with pytest.raises(CircuitError):
        Gate("H", 0, slot=0)
    with pytest.raises(CircuitError):
        qsim.apply_gate(qsim.init_state(2), Gate("H", 3))
    with pytest.raises(CircuitError):
        ParamCircuit(2, [Gate("RY", 0, slot=1)], [TRAINABLE])


def test_extend_renumbers_slots():
    a = ParamCircuit(2).add("RY", 0, tag=ENCODING)
    b = ParamCircuit(2).add("RZ", 1, tag=TRAINABLE).add("RX", 0, tag=TRAINABLE)
    a.extend(b)
    assert [g.slot for g in a.gates] == [0, 1, 2]
    assert a.slot_indices(ENCODING) == [0]
    assert a.slot_indices(TRAINABLE) == [1, 2]
    with pytest.raises(CircuitError):
        a.extend(ParamCircuit(3))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2 ** 32 - 1))
def test_expectations_match_dense_oracle(n, seed):
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=2 ** n) + 1j * rng.normal(size=2 ** n)
    psi /= np.linalg.norm(psi)
    k = int(rng.integers(1, n + 1))
    qubits = rng.choice(n, k, replace=False)
    obs = PauliString({int(q): str(rng.choice(list("XYZ"))) for q in qubits})
    want = np.vdot(psi, oracle.pauli_matrix(obs.factors, n) @ psi)
    assert abs(want.imag) < 1e-12
    got = qsim.expectation(StateVector(n, psi), obs)
    assert got == pytest.approx(want.real, abs=1e-12)
    batch = qsim.expectations(np.stack([psi, psi]), [obs, PauliString.parse("Z0")], n)
    assert batch.shape == (2, 2)
    assert np.allclose(batch[:, 0], want.real)


def test_pauli_eigenstates():
    plus = qsim.init_state(1, "all_plus")
    assert qsim.expectation(plus, PauliString.parse("X0")) == pytest.approx(1)
    assert qsim.expectation(qsim.init_state(2), PauliString.parse("Z1")) == 1
    y_plus = qsim.run_circuit(ParamCircuit(1).add("RX", 0, tag=ENCODING), [-np.pi / 2])
    assert qsim.expectation(y_plus, PauliString.parse("Y0")) == pytest.approx(1)


def test_pauli_string_parsing_and_errors():
    p = PauliString.parse("Z2 X0")
    assert p.factors == {0: "X", 2: "Z"}
    assert str(p) == "X0 Z2"
    assert not p.is_diagonal and PauliString.parse("Z0 Z1").is_diagonal
    with pytest.raises(CircuitError):
        PauliString({0: "W"})
    with pytest.raises(CircuitError):
        qsim.expectation(qsim.init_state(2), PauliString.parse("Z2"))


@pytest.mark.parametrize("n,depth", [(2, 1), (3, 2), (5, 24)])
def test_ring_ansatz_shape(n, depth):
    c = qsim.build_ring_ansatz(n, depth)
    assert c.n_slots == 3 * n * depth
    assert c.count("CNOT") == n * depth
    assert set(c.slots) == {TRAINABLE}
    first_ring = [g for g in c.gates if g.kind == "CNOT"][:n]
    assert [(g.control, g.target) for g in first_ring] == [(i, (i + 1) % n) for i in range(n)]


@pytest.mark.parametrize("n,p,slots", [(3, 1, 9), (4, 2, 16), (3, 3, 15)])
def test_qsann_ansatz_slot_count(n, p, slots):
    c = qsim.build_qsann_ansatz(n, p)
    assert c.n_slots == slots == n * (p + 2)
    kinds = [g.kind for g in c.gates if g.slot is not None]
    assert kinds[:n] == ["RX"] * n and set(kinds[n:]) == {"RY"}


def test_ansatz_argument_checks():
    with pytest.raises(CircuitError):
        qsim.build_ring_ansatz(1, 1)
    with pytest.raises(CircuitError):
        qsim.build_qsann_ansatz(3, 0)
