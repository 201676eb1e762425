"""Dense statevector simulation for small parameterized circuits.

Bit order: qubit ``q`` is bit ``q`` of the amplitude index, so qubit 0 is the
least-significant bit.  Rotations use half-angle matrices, e.g.
``RY(t) = exp(-i t Y / 2)``.

Everything here works on *batches* of states, shape ``(B, 2**n)``, with one
row of slot values per batch element.  The single-state helpers
(:func:`run_circuit`, :func:`expectation`) are thin wrappers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

MAX_QUBITS = 24

ROTATIONS = ("RX", "RY", "RZ")
GATE_KINDS = ROTATIONS + ("H", "CNOT")

ENCODING = "encoding"
TRAINABLE = "trainable"

_SQRT1_2 = 1.0 / np.sqrt(2.0)


class CircuitError(ValueError):
    pass


@dataclass(frozen=True)
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.amplitudes.shape != (2 ** self.n_qubits,):
            raise CircuitError(
                f"expected {2 ** self.n_qubits} amplitudes, got {self.amplitudes.shape}"
            )

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


@dataclass(frozen=True)
class Gate:
    kind: str
    target: int
    control: int | None = None
    slot: int | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise CircuitError(f"unknown gate kind {self.kind!r}")
        if self.kind == "CNOT":
            if self.control is None:
                raise CircuitError("CNOT needs a control qubit")
            if self.control == self.target:
                raise CircuitError("CNOT control and target must differ")
        elif self.control is not None:
            raise CircuitError(f"{self.kind} takes no control qubit")
        if self.kind in ROTATIONS and self.slot is None:
            raise CircuitError(f"{self.kind} needs a parameter slot")
        if self.kind not in ROTATIONS and self.slot is not None:
            raise CircuitError(f"{self.kind} takes no parameter slot")

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.target,) if self.control is None else (self.control, self.target)


@dataclass
class ParamCircuit:
    """Ordered gate list; every rotation owns exactly one slot.

    ``slots[i]`` is the tag (``"encoding"`` or ``"trainable"``) of slot ``i``.
    """

    n_qubits: int
    gates: list[Gate] = field(default_factory=list)
    slots: list[str] = field(default_factory=list)

    def __post_init__(self):
        _check_qubits(self.n_qubits)
        seen = set()
        for g in self.gates:
            self._validate(g)
            if g.slot is not None:
                seen.add(g.slot)
        if seen != set(range(len(self.slots))) or sum(g.slot is not None for g in self.gates) != len(seen):
            raise CircuitError("every slot must be referenced by exactly one gate")

    def _validate(self, gate: Gate):
        for q in gate.qubits:
            if not 0 <= q < self.n_qubits:
                raise CircuitError(f"qubit {q} out of range for {self.n_qubits} qubits")

    @property
    def n_slots(self) -> int:
        return len(self.slots)

    def add(self, kind: str, target: int, control: int | None = None, tag: str | None = None) -> "ParamCircuit":
        slot = None
        if kind in ROTATIONS:
            if tag not in (ENCODING, TRAINABLE):
                raise CircuitError("rotation needs tag 'encoding' or 'trainable'")
            slot = len(self.slots)
        gate = Gate(kind, target, control, slot)
        self._validate(gate)
        self.gates.append(gate)
        if slot is not None:
            self.slots.append(tag)
        return self

    def extend(self, other: "ParamCircuit") -> "ParamCircuit":
        """Append ``other``'s gates, renumbering its slots after ours."""
        if other.n_qubits != self.n_qubits:
            raise CircuitError("qubit counts differ")
        offset = len(self.slots)
        for g in other.gates:
            slot = None if g.slot is None else g.slot + offset
            self.gates.append(Gate(g.kind, g.target, g.control, slot))
        self.slots.extend(other.slots)
        return self

    def slot_indices(self, tag: str) -> list[int]:
        return [i for i, t in enumerate(self.slots) if t == tag]

    def count(self, kind: str) -> int:
        return sum(g.kind == kind for g in self.gates)


@dataclass(frozen=True)
class PauliString:
    """Tensor product of X/Y/Z factors on selected qubits; identity elsewhere."""

    factors: Mapping[int, str]

    def __post_init__(self):
        for q, p in self.factors.items():
            if p not in ("X", "Y", "Z"):
                raise CircuitError(f"bad Pauli factor {p!r}")
            if q < 0:
                raise CircuitError(f"negative qubit index {q}")
        object.__setattr__(self, "factors", dict(sorted(self.factors.items())))

    @classmethod
    def parse(cls, text: str) -> "PauliString":
        """``"Z0 Z2"`` -> {0: 'Z', 2: 'Z'}."""
        return cls({int(tok[1:]): tok[0] for tok in text.split()})

    def __str__(self):
        return " ".join(f"{p}{q}" for q, p in self.factors.items()) or "I"

    def __hash__(self):
        return hash(tuple(self.factors.items()))

    @property
    def is_diagonal(self) -> bool:
        return all(p == "Z" for p in self.factors.values())

    def max_qubit(self) -> int:
        return max(self.factors, default=-1)


def _check_qubits(n: int):
    if not 1 <= n <= MAX_QUBITS:
        raise CircuitError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n}")


def init_state(n_qubits: int, basis: str = "all_zero") -> StateVector:
    return StateVector(n_qubits, init_batch(n_qubits, 1, basis)[0])


def init_batch(n_qubits: int, batch: int, basis: str = "all_zero") -> np.ndarray:
    _check_qubits(n_qubits)
    dim = 2 ** n_qubits
    if basis == "all_zero":
        psi = np.zeros((batch, dim), dtype=np.complex128)
        psi[:, 0] = 1.0
    elif basis == "all_plus":
        psi = np.full((batch, dim), 2.0 ** (-n_qubits / 2), dtype=np.complex128)
    else:
        raise CircuitError(f"unknown basis {basis!r}")
    return psi


# ---------------------------------------------------------------------------
# gate kernels on batched states, shape (B, 2**n)

def _split(psi: np.ndarray, q: int, n: int):
    v = psi.reshape(psi.shape[0], 2 ** (n - q - 1), 2, 2 ** q)
    return v[:, :, 0, :], v[:, :, 1, :]


def _angles(theta, batch: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim == 0:
        theta = np.full(batch, float(theta))
    return theta.reshape(-1, 1, 1)


def apply_rotation(psi: np.ndarray, kind: str, q: int, n: int, theta, adjoint: bool = False) -> np.ndarray:
    t = _angles(theta, psi.shape[0])
    if adjoint:
        t = -t
    c, s = np.cos(t / 2), np.sin(t / 2)
    a0, a1 = _split(psi, q, n)
    out = np.empty_like(psi)
    b0, b1 = _split(out, q, n)
    if kind == "RY":
        b0[...] = c * a0 - s * a1
        b1[...] = s * a0 + c * a1
    elif kind == "RZ":
        ph = np.exp(-0.5j * t)
        b0[...] = ph * a0
        b1[...] = np.conj(ph) * a1
    elif kind == "RX":
        b0[...] = c * a0 - 1j * s * a1
        b1[...] = c * a1 - 1j * s * a0
    else:
        raise CircuitError(f"{kind} is not a rotation")
    return out


def apply_hadamard(psi: np.ndarray, q: int, n: int) -> np.ndarray:
    a0, a1 = _split(psi, q, n)
    out = np.empty_like(psi)
    b0, b1 = _split(out, q, n)
    b0[...] = (a0 + a1) * _SQRT1_2
    b1[...] = (a0 - a1) * _SQRT1_2
    return out


_PERM_CACHE: dict[tuple, np.ndarray] = {}


def cnot_permutation(control: int, target: int, n: int) -> np.ndarray:
    key = (control, target, n)
    perm = _PERM_CACHE.get(key)
    if perm is None:
        idx = np.arange(2 ** n)
        perm = np.where((idx >> control) & 1, idx ^ (1 << target), idx)
        _PERM_CACHE[key] = perm
    return perm


def apply_gate_batch(psi: np.ndarray, gate: Gate, n: int, theta=None, adjoint: bool = False) -> np.ndarray:
    if gate.kind in ROTATIONS:
        if theta is None:
            raise CircuitError(f"{gate.kind} needs an angle")
        return apply_rotation(psi, gate.kind, gate.target, n, theta, adjoint)
    if theta is not None:
        raise CircuitError(f"{gate.kind} takes no angle")
    if gate.kind == "H":
        return apply_hadamard(psi, gate.target, n)
    # CNOT is self-inverse
    return psi[:, cnot_permutation(gate.control, gate.target, n)]


def apply_gate(state: StateVector, gate: Gate, angle: float | None = None) -> StateVector:
    for q in gate.qubits:
        if not 0 <= q < state.n_qubits:
            raise CircuitError(f"qubit {q} out of range")
    psi = apply_gate_batch(state.amplitudes[None, :], gate, state.n_qubits, angle)
    return StateVector(state.n_qubits, psi[0])


# ---------------------------------------------------------------------------
# circuits

def _compile(circuit: ParamCircuit) -> list[tuple]:
    """Fuse runs of consecutive CNOTs into one index permutation."""
    ops: list[tuple] = []
    n = circuit.n_qubits
    for g in circuit.gates:
        if g.kind == "CNOT":
            perm = cnot_permutation(g.control, g.target, n)
            if ops and ops[-1][0] == "PERM":
                # psi[:, p1][:, p2] == psi[:, p1[p2]]
                ops[-1] = ("PERM", ops[-1][1][perm], None, None)
            else:
                ops.append(("PERM", perm, None, None))
        else:
            ops.append((g.kind, g.target, g.slot, g))
    return ops


def compiled(circuit: ParamCircuit) -> list[tuple]:
    cached = circuit.__dict__.get("_ops")
    if cached is None or cached[0] != len(circuit.gates):
        cached = (len(circuit.gates), _compile(circuit))
        circuit.__dict__["_ops"] = cached
    return cached[1]


def run_batch(circuit: ParamCircuit, angles: np.ndarray, psi0: np.ndarray) -> np.ndarray:
    """Apply ``circuit`` to every row of ``psi0`` with per-row slot values.

    ``angles`` has shape ``(B, n_slots)``; ``psi0`` has shape ``(B, 2**n)``
    or ``(1, 2**n)`` (broadcast).
    """
    angles = np.asarray(angles, dtype=np.float64)
    if angles.ndim != 2 or angles.shape[1] != circuit.n_slots:
        raise CircuitError(
            f"bindings must have shape (B, {circuit.n_slots}), got {angles.shape}"
        )
    n = circuit.n_qubits
    psi = psi0
    if psi.shape[0] != angles.shape[0]:
        psi = np.broadcast_to(psi, (angles.shape[0], psi.shape[1]))
    psi = np.array(psi, dtype=np.complex128)
    for kind, arg, slot, _ in compiled(circuit):
        if kind == "PERM":
            psi = psi[:, arg]
        elif kind == "H":
            psi = apply_hadamard(psi, arg, n)
        else:
            psi = apply_rotation(psi, kind, arg, n, angles[:, slot])
    return psi


def run_circuit(circuit: ParamCircuit, bindings: Sequence[float], initial: StateVector | None = None) -> StateVector:
    bindings = np.asarray(bindings, dtype=np.float64).reshape(-1)
    if bindings.shape[0] != circuit.n_slots:
        raise CircuitError(f"expected {circuit.n_slots} bindings, got {bindings.shape[0]}")
    if initial is None:
        initial = init_state(circuit.n_qubits)
    if initial.n_qubits != circuit.n_qubits:
        raise CircuitError("initial state has the wrong qubit count")
    psi = run_batch(circuit, bindings[None, :], initial.amplitudes[None, :])
    return StateVector(circuit.n_qubits, psi[0])


# ---------------------------------------------------------------------------
# Pauli observables

_PAULI_CACHE: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}


def pauli_action(obs: PauliString, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(src, phase)`` with ``(P psi)[i] = phase[i] * psi[src[i]]``."""
    key = (tuple(obs.factors.items()), n)
    hit = _PAULI_CACHE.get(key)
    if hit is not None:
        return hit
    if obs.max_qubit() >= n:
        raise CircuitError(f"observable {obs} acts outside {n} qubits")
    idx = np.arange(2 ** n)
    flip = 0
    for q, p in obs.factors.items():
        if p in ("X", "Y"):
            flip |= 1 << q
    src = idx ^ flip
    phase = np.ones(2 ** n, dtype=np.complex128)
    for q, p in obs.factors.items():
        bit = (src >> q) & 1
        if p == "Z":
            phase *= np.where(bit, -1.0, 1.0)
        elif p == "Y":
            phase *= np.where(bit, -1j, 1j)
    _PAULI_CACHE[key] = (src, phase)
    return src, phase


def apply_pauli(psi: np.ndarray, obs: PauliString, n: int) -> np.ndarray:
    src, phase = pauli_action(obs, n)
    return psi[:, src] * phase


def expectations(psi: np.ndarray, observables: Sequence[PauliString], n: int) -> np.ndarray:
    """Batched ``<psi|P_j|psi>`` -> shape ``(B, len(observables))``."""
    out = np.empty((psi.shape[0], len(observables)))
    probs = None
    for j, obs in enumerate(observables):
        src, phase = pauli_action(obs, n)
        if obs.is_diagonal:
            if probs is None:
                probs = psi.real ** 2 + psi.imag ** 2
            out[:, j] = probs @ phase.real
        else:
            out[:, j] = np.einsum("bi,bi->b", psi.conj(), psi[:, src] * phase).real
    return out


def expectation(state: StateVector, obs: PauliString) -> float:
    if obs.max_qubit() >= state.n_qubits:
        raise CircuitError(f"observable {obs} acts outside {state.n_qubits} qubits")
    src, phase = pauli_action(obs, state.n_qubits)
    psi = state.amplitudes
    val = np.vdot(psi, psi[src] * phase)
    assert abs(val.imag) < 1e-12, val
    return float(val.real)


def z_observables(qubits: Iterable[int]) -> list[PauliString]:
    return [PauliString({q: "Z"}) for q in qubits]


# ---------------------------------------------------------------------------
# ansatz builders

def _ring(circuit: ParamCircuit, n: int):
    for i in range(n):
        circuit.add("CNOT", (i + 1) % n, control=i)


def build_ring_ansatz(n_qubits: int, depth: int, tag: str = TRAINABLE) -> ParamCircuit:
    """``depth`` x [RZ, RY, RZ on every qubit, then CNOT ring i -> i+1]."""
    if n_qubits < 2:
        raise CircuitError("ring ansatz needs at least 2 qubits")
    if depth < 1:
        raise CircuitError("depth must be >= 1")
    c = ParamCircuit(n_qubits)
    for _ in range(depth):
        for q in range(n_qubits):
            c.add("RZ", q, tag=tag)
            c.add("RY", q, tag=tag)
            c.add("RZ", q, tag=tag)
        _ring(c, n_qubits)
    return c


def build_qsann_ansatz(n_qubits: int, depth_p: int, tag: str = TRAINABLE) -> ParamCircuit:
    """RX row, RY row, then ``depth_p`` x [CNOT ring, RY row]: n(p+2) slots."""
    if n_qubits < 2:
        raise CircuitError("QSANN ansatz needs at least 2 qubits")
    if depth_p < 1:
        raise CircuitError("depth_p must be >= 1")
    c = ParamCircuit(n_qubits)
    for q in range(n_qubits):
        c.add("RX", q, tag=tag)
    for q in range(n_qubits):
        c.add("RY", q, tag=tag)
    for _ in range(depth_p):
        _ring(c, n_qubits)
        for q in range(n_qubits):
            c.add("RY", q, tag=tag)
    return c


def hadamard_layer(n_qubits: int) -> ParamCircuit:
    c = ParamCircuit(n_qubits)
    for q in range(n_qubits):
        c.add("H", q)
    return c
