"""Dense-matrix reference simulator used only by the tests.

Each gate becomes a full 2**n x 2**n matrix; qubit q acts through
kron(I_{2^(n-1-q)}, M, I_{2^q}) so qubit 0 is the least-significant bit.
Rotations come from the matrix exponential rather than closed forms.
"""
import numpy as np
from scipy.linalg import expm

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
PAULI = {"X": X, "Y": Y, "Z": Z}
P0 = np.array([[1, 0], [0, 0]], dtype=complex)
P1 = np.array([[0, 0], [0, 1]], dtype=complex)


def on_qubit(M, q, n):
    return np.kron(np.kron(np.eye(2 ** (n - 1 - q)), M), np.eye(2 ** q))


def rotation(kind, theta):
    return expm(-0.5j * theta * PAULI[kind[1]])


def cnot(control, target, n):
    return on_qubit(P0, control, n) + on_qubit(P1, control, n) @ on_qubit(X, target, n)


def gate_matrix(gate, n, theta=None):
    if gate.kind == "CNOT":
        return cnot(gate.control, gate.target, n)
    if gate.kind == "H":
        return on_qubit(H, gate.target, n)
    return on_qubit(rotation(gate.kind, theta), gate.target, n)


def circuit_unitary(circuit, bindings):
    n = circuit.n_qubits
    U = np.eye(2 ** n, dtype=complex)
    for g in circuit.gates:
        U = gate_matrix(g, n, None if g.slot is None else bindings[g.slot]) @ U
    return U


def pauli_matrix(factors, n):
    M = np.eye(1, dtype=complex)
    for q in reversed(range(n)):
        M = np.kron(M, PAULI[factors[q]] if q in factors else I2)
    return M


def zero_state(n):
    psi = np.zeros(2 ** n, dtype=complex)
    psi[0] = 1
    return psi


def plus_state(n):
    return np.full(2 ** n, 2 ** (-n / 2), dtype=complex)
