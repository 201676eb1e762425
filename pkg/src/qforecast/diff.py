"""Small reverse-mode autodiff over numpy arrays, plus quantum nodes.

A :class:`Tensor` records the operation that produced it; calling
``loss.backward()`` walks the graph once in reverse topological order and
accumulates ``.grad`` on leaf tensors that require gradients.

Quantum circuits enter the graph through :func:`quantum_forward`.  Their
backward pass uses either the parameter-shift rule or adjoint
differentiation; both give exact gradients for RX/RY/RZ slots.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import qsim
from .qsim import ParamCircuit, PauliString

_GRAD_ENABLED = True

# incremented by every Tensor.backward() call; training code asserts it is
# unchanged across validation passes
BACKWARD_CALLS = 0


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        global BACKWARD_CALLS
        BACKWARD_CALLS += 1
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise ShapeError(f"upstream gradient {grad.shape} does not match {self.shape}")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(a: np.ndarray, b: np.ndarray):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc


# ---------------------------------------------------------------------------
# elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    out = a.data / b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,))


def square(x: Tensor) -> Tensor:
    return _node(x.data ** 2, (x,), lambda g: (2.0 * g * x.data,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _node(out, (x,), lambda g: (0.5 * g / out,))


# ---------------------------------------------------------------------------
# reductions and shape ops

def _expand(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    return _node(x.data.sum(axis=axis, keepdims=keepdims), (x,),
                 lambda g: (_expand(g, x.shape, axis, keepdims).copy(),))


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size / max(out.size, 1)
    return _node(out, (x,), lambda g: (_expand(g, x.shape, axis, keepdims) / count,))


def reshape(x: Tensor, shape) -> Tensor:
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else np.argsort(axes)
    return _node(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def getitem(x: Tensor, idx) -> Tensor:
    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _node(x.data[idx], (x,), back)


def take(x: Tensor, indices, axis: int) -> Tensor:
    """Gather along ``axis``; repeated indices sum their gradients."""
    indices = np.asarray(indices, dtype=np.intp)

    def back(g):
        full = np.zeros_like(x.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (full,)

    return _node(np.take(x.data, indices, axis=axis), (x,), back)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _node(np.concatenate([x.data for x in xs], axis=axis), xs,
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    return _node(np.stack([x.data for x in xs], axis=axis), xs,
                 lambda g: tuple(np.moveaxis(g, axis, 0)))


# ---------------------------------------------------------------------------
# linear algebra and layers

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(out, (a, b), back)


def affine(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W + b`` over the last axis; W has shape (in, out)."""
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"affine input {x.shape} vs weight {W.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, W.shape[0])
    out = x2 @ W.data
    if b is not None:
        out = out + b.data
    out = out.reshape(lead + (W.shape[1],))

    def back(g):
        g2 = g.reshape(-1, W.shape[1])
        gx = (g2 @ W.data.T).reshape(x.shape)
        gW = x2.T @ g2
        return (gx, gW) if b is None else (gx, gW, g2.sum(axis=0))

    parents = (x, W) if b is None else (x, W, b)
    return _node(out, parents, back)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (x,), back)


def layer_norm(x: Tensor, eps: float = 1e-5, gain: Tensor | None = None,
               bias: Tensor | None = None, axis: int = -1) -> Tensor:
    """Normalize along ``axis`` to zero mean / unit variance (biased var)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = (xc ** 2).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if gain is not None:
        out = out * gain.data
    if bias is not None:
        out = out + bias.data

    def back(g):
        gh = g * gain.data if gain is not None else g
        gx = inv * (gh - gh.mean(axis=axis, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=axis, keepdims=True))
        grads = [gx]
        if gain is not None:
            grads.append(_unbroadcast(g * xhat, gain.shape))
        if bias is not None:
            grads.append(_unbroadcast(g, bias.shape))
        return tuple(grads)

    parents = [x] + [t for t in (gain, bias) if t is not None]
    return _node(out, parents, back)


def mse(pred: Tensor, target) -> Tensor:
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes {pred.shape} vs {target.shape}")
    return mean(square(sub(pred, target)))


# ---------------------------------------------------------------------------
# quantum nodes

@dataclass
class QuantumNode:
    """A circuit wired into the tape.

    Input column ``j`` binds slot ``input_slots[j]`` and parameter ``j``
    binds slot ``param_slots[j]``; together they cover every slot once.
    """

    circuit: ParamCircuit
    observables: list[PauliString]
    input_slots: list[int] = field(default_factory=list)
    param_slots: list[int] = field(default_factory=list)
    init: str = "all_zero"
    grad_method: str = "adjoint"

    def __post_init__(self):
        used = list(self.input_slots) + list(self.param_slots)
        if sorted(used) != list(range(self.circuit.n_slots)):
            raise qsim.CircuitError(
                f"slot mapping must cover slots 0..{self.circuit.n_slots - 1} exactly once"
            )
        if not self.observables:
            raise qsim.CircuitError("need at least one observable")
        for obs in self.observables:
            if obs.max_qubit() >= self.circuit.n_qubits:
                raise qsim.CircuitError(f"observable {obs} outside the circuit")
        if self.grad_method not in ("adjoint", "param_shift"):
            raise ValueError(f"unknown grad_method {self.grad_method!r}")
        self.input_slots = list(self.input_slots)
        self.param_slots = list(self.param_slots)

    @property
    def n_qubits(self) -> int:
        return self.circuit.n_qubits

    @property
    def n_params(self) -> int:
        return len(self.param_slots)

    @property
    def n_inputs(self) -> int:
        return len(self.input_slots)

    def bind(self, inputs: np.ndarray | None, params: np.ndarray | None) -> np.ndarray:
        batch = 1 if inputs is None else inputs.shape[0]
        angles = np.empty((batch, self.circuit.n_slots))
        if self.input_slots:
            if inputs is None or inputs.shape[1] != self.n_inputs:
                raise ShapeError(f"node expects {self.n_inputs} input columns")
            angles[:, self.input_slots] = inputs
        if self.param_slots:
            if params is None or params.shape != (self.n_params,):
                raise ShapeError(f"node expects {self.n_params} parameters")
            angles[:, self.param_slots] = params
        return angles

    def initial(self) -> np.ndarray:
        return qsim.init_batch(self.n_qubits, 1, self.init)

    def evaluate(self, angles: np.ndarray) -> np.ndarray:
        psi = qsim.run_batch(self.circuit, angles, self.initial())
        return qsim.expectations(psi, self.observables, self.n_qubits)


def quantum_forward(node: QuantumNode, inputs: Tensor | None = None, params: Tensor | None = None) -> Tensor:
    """Expectations of ``node.observables``, shape (B, n_observables)."""
    xin = None if inputs is None else inputs.data
    angles = node.bind(xin, None if params is None else params.data)
    psi = qsim.run_batch(node.circuit, angles, node.initial())
    out = qsim.expectations(psi, node.observables, node.n_qubits)
    parents = [t for t in (inputs, params) if t is not None]

    def back(g):
        dang = quantum_backward(node, g, angles, psi)
        grads = []
        if inputs is not None:
            grads.append(dang[:, node.input_slots])
        if params is not None:
            grads.append(dang[:, node.param_slots].sum(axis=0))
        return tuple(grads)

    return _node(out, parents, back)


def quantum_backward(node: QuantumNode, upstream: np.ndarray, angles: np.ndarray,
                     final_state: np.ndarray | None = None, method: str | None = None) -> np.ndarray:
    """Vector-Jacobian product w.r.t. every circuit slot, shape (B, n_slots)."""
    method = method or node.grad_method
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (angles.shape[0], len(node.observables)):
        raise ShapeError(f"upstream gradient shape {upstream.shape}")
    if method == "param_shift":
        jac = param_shift_jacobian(node, angles)
        return np.einsum("bso,bo->bs", jac, upstream)
    if final_state is None:
        final_state = qsim.run_batch(node.circuit, angles, node.initial())
    return adjoint_vjp(node, angles, final_state, upstream)


def param_shift_jacobian(node: QuantumNode, angles: np.ndarray, max_rows: int = 1 << 21) -> np.ndarray:
    """d<P_j>/d slot_s = (<P_j>(s + pi/2) - <P_j>(s - pi/2)) / 2, shape (B, S, O)."""
    batch, n_slots = angles.shape
    dim = 2 ** node.n_qubits
    jac = np.empty((batch, n_slots, len(node.observables)))
    chunk = max(1, max_rows // (2 * batch * dim))
    for start in range(0, n_slots, chunk):
        slots = np.arange(start, min(n_slots, start + chunk))
        k = len(slots)
        shifted = np.repeat(angles[None, None], 2, axis=0).repeat(k, axis=1)  # (2, k, B, S)
        shifted[0, np.arange(k), :, slots] += np.pi / 2
        shifted[1, np.arange(k), :, slots] -= np.pi / 2
        vals = node.evaluate(shifted.reshape(-1, n_slots)).reshape(2, k, batch, -1)
        jac[:, slots, :] = np.transpose((vals[0] - vals[1]) / 2.0, (1, 0, 2))
    return jac


_GENERATOR = {"RX": "X", "RY": "Y", "RZ": "Z"}


def adjoint_vjp(node: QuantumNode, angles: np.ndarray, final_state: np.ndarray,
                upstream: np.ndarray) -> np.ndarray:
    """Adjoint-method gradient of sum_j upstream[:, j] <P_j> for every slot.

    Walks the circuit backwards keeping the state and the co-state
    ``lam = U_{k+1}^dag ... M psi``; for a rotation exp(-i t G/2) the slot
    gradient is Im <lam|G|psi>.
    """
    n = node.n_qubits
    psi = final_state
    lam = np.zeros_like(psi)
    for j, obs in enumerate(node.observables):
        w = upstream[:, j:j + 1]
        if np.any(w):
            lam += w * qsim.apply_pauli(psi, obs, n)
    grad = np.zeros_like(angles)
    for kind, arg, slot, _ in reversed(qsim.compiled(node.circuit)):
        if kind == "PERM":
            inv = np.argsort(arg)
            psi, lam = psi[:, inv], lam[:, inv]
        elif kind == "H":
            psi, lam = qsim.apply_hadamard(psi, arg, n), qsim.apply_hadamard(lam, arg, n)
        else:
            gpsi = qsim.apply_pauli(psi, PauliString({arg: _GENERATOR[kind]}), n)
            grad[:, slot] = np.einsum("bi,bi->b", lam.conj(), gpsi).imag
            psi = qsim.apply_rotation(psi, kind, arg, n, angles[:, slot], adjoint=True)
            lam = qsim.apply_rotation(lam, kind, arg, n, angles[:, slot], adjoint=True)
    return grad


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState | None,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new arrays and state."""
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    if state is None:
        state = AdamState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])
    t = state.t + 1
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not (p.shape == g.shape == m.shape == v.shape):
            raise ShapeError(f"Adam shape mismatch {p.shape} / {g.shape} / {m.shape}")
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        new_p.append(p - lr * mhat / (np.sqrt(vhat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.state: AdamState | None = None

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        new, self.state = adam_step([p.data for p in self.params], grads, self.state,
                                    self.lr, self.beta1, self.beta2, self.eps)
        for p, d in zip(self.params, new):
            p.data = d
