"""Forecasting architectures behind one interface.

Every model maps a batch of lookback windows ``X`` of shape ``(B, T, C)``
(normalized to [0, 1]) to forecasts of shape ``(B, S, C)``.  Target-channel
selection happens outside the model (see :func:`select_target`).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Callable

import numpy as np

from . import diff, qsim
from .diff import Tensor, affine, quantum_forward, relu
from .qsim import ENCODING, TRAINABLE, PauliString, ParamCircuit

KINDS = (
    "vqc_indep",
    "vqc_mlp",
    "dense_obs",
    "dense_qubits",
    "enc_vqc_dec",
    "reupload",
    "itransformer",
    "iqtransformer",
)
SINGLE_STEP = ("vqc_indep", "dense_obs", "dense_qubits", "reupload")

# human-readable names used in reports
DISPLAY_NAMES = {
    "vqc_indep": "VQC (indep.)",
    "vqc_mlp": "VQC + MLP",
    "dense_obs": "DE. (obs.)",
    "dense_qubits": "DE. (qubits)",
    "enc_vqc_dec": "Enc.-VQC-Dec.",
    "reupload": "Data re-upload.",
    "itransformer": "iTransformer",
    "iqtransformer": "iQTransformer",
}


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    kind: str
    T: int
    S: int
    C: int
    n_qubits: int | None = None
    depth_p: int = 24
    p_enc: int = 1
    p_vqc: int = 3
    L: int = 2
    D: int = 9
    D_ff: int = 12
    target_channel: int | None = None
    ln_eps: float = 1e-5
    grad_method: str = "adjoint"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        for name in ("T", "S", "C"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.kind in SINGLE_STEP and self.S != 1:
            raise ConfigError(f"{self.kind} only supports single-step forecasts (S = 1)")
        if self.target_channel is not None and not 0 <= self.target_channel < self.C:
            raise ConfigError(f"target_channel {self.target_channel} outside 0..{self.C - 1}")
        if self.grad_method not in ("adjoint", "param_shift"):
            raise ConfigError(f"unknown grad_method {self.grad_method!r}")
        k = self.kind
        if k in ("vqc_indep", "vqc_mlp", "dense_obs", "dense_qubits") and self.T < 2:
            raise ConfigError(f"{k} needs T >= 2 qubits for the CNOT ring")
        if k in ("dense_obs", "dense_qubits") and self.C != 3:
            raise ConfigError("dense embedding is defined for exactly C = 3 channels")
        if k == "dense_qubits" and self.T < 3:
            raise ConfigError("dense_qubits reads three qubits, needs T >= 3")
        if k == "reupload" and self.C < 2:
            raise ConfigError("reupload uses one qubit per channel and needs C >= 2")
        if k == "enc_vqc_dec" and (self.n_qubits is None or self.n_qubits < 2):
            raise ConfigError("enc_vqc_dec needs n_qubits >= 2")
        if k in ("itransformer", "iqtransformer"):
            if self.L < 0 or self.D < 1 or self.D_ff < 1:
                raise ConfigError("need L >= 0, D >= 1, D_ff >= 1")
        if k == "iqtransformer":
            if self.n_qubits is None or self.n_qubits < 2:
                raise ConfigError("iqtransformer needs n_qubits >= 2")
            if self.D != self.n_qubits * (self.p_enc + 2):
                raise ConfigError(
                    f"D = {self.D} must equal n_qubits * (p_enc + 2) = "
                    f"{self.n_qubits * (self.p_enc + 2)}"
                )
            if self.D > 4 * self.n_qubits:
                raise ConfigError("value observables support at most D = 4 * n_qubits")
        if self.depth_p < 1 or self.p_enc < 1 or self.p_vqc < 1:
            raise ConfigError("circuit depths must be >= 1")

    @property
    def out_channels(self) -> int:
        return 1 if self.target_channel is not None else self.C

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        return cls(**d)


def value_observable_set(n_qubits: int, D: int) -> list[PauliString]:
    """X_i, Y_i, Z_i per qubit, then ring-adjacent Z_i Z_{i+1} pairs up to D."""
    if D < 3 * n_qubits:
        raise ConfigError(f"need D >= 3n = {3 * n_qubits}, got {D}")
    if D > 4 * n_qubits:
        raise ConfigError(f"D = {D} exceeds 3n + n = {4 * n_qubits}")
    obs = [PauliString({q: p}) for q in range(n_qubits) for p in "XYZ"]
    for q in range(D - 3 * n_qubits):
        obs.append(PauliString({q: "Z", (q + 1) % n_qubits: "Z"}))
    return obs


def select_target(pred: Tensor, target_channel: int | None) -> Tensor:
    if target_channel is None:
        return pred
    return pred[:, :, target_channel:target_channel + 1]


class Forecaster:
    """Base class: owns named parameter tensors and a forward pass."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        self.quantum_names: set[str] = set()

    # parameter construction ----------------------------------------------
    def _linear(self, name: str, fan_in: int, fan_out: int):
        bound = 1.0 / np.sqrt(fan_in)
        self.params[f"{name}.W"] = diff.parameter(self.rng.uniform(-bound, bound, (fan_in, fan_out)), f"{name}.W")
        self.params[f"{name}.b"] = diff.parameter(self.rng.uniform(-bound, bound, fan_out), f"{name}.b")

    def _norm(self, name: str, dim: int):
        self.params[f"{name}.gain"] = diff.parameter(np.ones(dim), f"{name}.gain")
        self.params[f"{name}.bias"] = diff.parameter(np.zeros(dim), f"{name}.bias")

    def _angles(self, name: str, count: int):
        self.params[name] = diff.parameter(self.rng.uniform(0.0, 2 * np.pi, count), name)
        self.quantum_names.add(name)

    def lin(self, name: str, x: Tensor) -> Tensor:
        return affine(x, self.params[f"{name}.W"], self.params[f"{name}.b"])

    def mlp(self, a: str, b: str, x: Tensor) -> Tensor:
        return self.lin(b, relu(self.lin(a, x)))

    def norm(self, name: str, x: Tensor, axis: int = -1) -> Tensor:
        return diff.layer_norm(x, self.config.ln_eps, self.params[f"{name}.gain"],
                               self.params[f"{name}.bias"], axis=axis)

    # interface ------------------------------------------------------------
    def forward(self, X: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, X) -> Tensor:
        X = diff.as_tensor(X)
        cfg = self.config
        if X.ndim != 3 or X.shape[1:] != (cfg.T, cfg.C):
            raise diff.ShapeError(f"expected windows of shape (B, {cfg.T}, {cfg.C}), got {X.shape}")
        out = self.forward(X)
        assert out.shape == (X.shape[0], cfg.S, cfg.C), out.shape
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def breakdown(self) -> dict[str, int]:
        return {k: int(v.size) for k, v in self.params.items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        if set(state) != set(self.params):
            missing = set(self.params) - set(state)
            extra = set(state) - set(self.params)
            raise ConfigError(f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ConfigError(f"checkpoint shape mismatch for {k}: {v.shape} vs {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)


def count_parameters(model: Forecaster) -> int:
    return sum(model.breakdown().values())


def _rescale(z: Tensor) -> Tensor:
    return (z + 1.0) * 0.5


def _ry_encoded_ring(n: int, depth: int) -> ParamCircuit:
    c = ParamCircuit(n)
    for q in range(n):
        c.add("RY", q, tag=ENCODING)
    return c.extend(qsim.build_ring_ansatz(n, depth))


def _node(circuit: ParamCircuit, observables, cfg: ModelConfig, init: str = "all_zero") -> diff.QuantumNode:
    return diff.QuantumNode(circuit, observables, circuit.slot_indices(ENCODING),
                            circuit.slot_indices(TRAINABLE), init=init, grad_method=cfg.grad_method)


# ---------------------------------------------------------------------------
# variational-circuit baselines

class IndependentVQC(Forecaster):
    """One T-qubit circuit per channel; <Z_0> rescaled to [0, 1]."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__(config, seed)
        c = config
        self.node = _node(_ry_encoded_ring(c.T, c.depth_p), qsim.z_observables([0]), c)
        for ch in range(c.C):
            self._angles(f"vqc{ch}.theta", self.node.n_params)

    def circuit_outputs(self, X: Tensor) -> Tensor:
        """Raw <Z_0> per channel, shape (B, C)."""
        angles = X * np.pi
        outs = [quantum_forward(self.node, angles[:, :, ch], self.params[f"vqc{ch}.theta"])
                for ch in range(self.config.C)]
        return diff.concat(outs, axis=1)

    def forward(self, X):
        z = self.circuit_outputs(X)
        return _rescale(z).reshape(X.shape[0], 1, self.config.C)


class VQCWithMLP(IndependentVQC):
    """Independent circuits, then W2 ReLU(W1 Z + b1) + b2 across channels."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__(config, seed)
        C, S = config.C, config.S
        self._linear("mlp1", C, 2 * C * S)
        self._linear("mlp2", 2 * C * S, C * S)

    def forward(self, X):
        z = self.circuit_outputs(X)
        return self.mlp("mlp1", "mlp2", z).reshape(X.shape[0], self.config.S, self.config.C)


class DenseEmbedding(Forecaster):
    """Three channels per qubit via RZ(pi x3) RY(pi x2) RZ(pi x1) |+>."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__(config, seed)
        c = config
        circ = ParamCircuit(c.T)
        for t in range(c.T):
            circ.add("RZ", t, tag=ENCODING)
            circ.add("RY", t, tag=ENCODING)
            circ.add("RZ", t, tag=ENCODING)
        circ.extend(qsim.build_ring_ansatz(c.T, c.depth_p))
        if c.kind == "dense_obs":
            obs = [PauliString({0: p}) for p in "XYZ"]
        else:
            obs = qsim.z_observables(range(3))
        self.node = _node(circ, obs, c, init="all_plus")
        self._angles("vqc.theta", self.node.n_params)

    def forward(self, X):
        B = X.shape[0]
        angles = (X * np.pi).reshape(B, self.config.T * 3)
        z = quantum_forward(self.node, angles, self.params["vqc.theta"])
        return _rescale(z).reshape(B, 1, 3)


class EncoderVQCDecoder(Forecaster):
    """Classical encoder C*T -> 2n -> n, n-qubit circuit, decoder n -> 2CS -> CS."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__(config, seed)
        c = config
        n = c.n_qubits
        self._linear("enc1", c.T * c.C, 2 * n)
        self._linear("enc2", 2 * n, n)
        self.node = _node(_ry_encoded_ring(n, c.depth_p), qsim.z_observables(range(n)), c)
        self._angles("vqc.theta", self.node.n_params)
        self._linear("dec1", n, 2 * c.C * c.S)
        self._linear("dec2", 2 * c.C * c.S, c.C * c.S)

    def encode(self, X: Tensor) -> Tensor:
        return self.mlp("enc1", "enc2", X.reshape(X.shape[0], -1))

    def forward(self, X):
        z = quantum_forward(self.node, self.encode(X), self.params["vqc.theta"])
        return self.mlp("dec1", "dec2", z).reshape(X.shape[0], self.config.S, self.config.C)


class DataReuploading(Forecaster):
    """C qubits; T rounds of [RY(pi x_t) per qubit, ``depth_p`` ring layers]."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__(config, seed)
        c = config
        circ = ParamCircuit(c.C)
        for _ in range(c.T):
            for q in range(c.C):
                circ.add("RY", q, tag=ENCODING)
            circ.extend(qsim.build_ring_ansatz(c.C, c.depth_p))
        self.node = _node(circ, qsim.z_observables(range(c.C)), c)
        self._angles("vqc.theta", self.node.n_params)

    def forward(self, X):
        B = X.shape[0]
        angles = (X * np.pi).reshape(B, self.config.T * self.config.C)
        z = quantum_forward(self.node, angles, self.params["vqc.theta"])
        return _rescale(z).reshape(B, 1, self.config.C)


# ---------------------------------------------------------------------------
# inverted transformers

class ITransformer(Forecaster):
    """Variate tokens: per-channel normalization over time, linear tokenizer,
    L pre-norm blocks of single-head attention + FFN, linear projector and
    de-normalization."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__(config, seed)
        c = config
        self._linear("token", c.T, c.D)
        for layer in range(c.L):
            self._init_attention(layer)
            self._norm(f"block{layer}.ln_attn", c.D)
            self._norm(f"block{layer}.ln_ffn", c.D)
            self._linear(f"block{layer}.ffn1", c.D, c.D_ff)
            self._linear(f"block{layer}.ffn2", c.D_ff, c.D)
        self._linear("proj", c.D, c.S)
        self.last_attention: list[np.ndarray] = []

    def _init_attention(self, layer: int):
        D = self.config.D
        bound = 1.0 / np.sqrt(D)
        for m in ("W_Q", "W_K", "W_V"):
            name = f"block{layer}.attn.{m}"
            self.params[name] = diff.parameter(self.rng.uniform(-bound, bound, (D, D)), name)

    def attention(self, layer: int, H: Tensor) -> Tensor:
        p = self.params
        pre = f"block{layer}.attn"
        Q = H @ p[f"{pre}.W_Q"]
        K = H @ p[f"{pre}.W_K"]
        V = H @ p[f"{pre}.W_V"]
        scores = (Q @ K.transpose(0, 2, 1)) * (1.0 / np.sqrt(self.config.D))
        A = diff.softmax(scores, axis=-1)
        self.last_attention.append(A.data)
        return A @ V

    def encode_tokens(self, X: Tensor) -> tuple[Tensor, np.ndarray, np.ndarray]:
        Xc = X.transpose(0, 2, 1)  # (B, C, T)
        mu = Xc.data.mean(axis=2, keepdims=True)
        sigma = np.sqrt(Xc.data.var(axis=2, keepdims=True) + self.config.ln_eps)
        Xn = diff.layer_norm(Xc, self.config.ln_eps)
        return self.lin("token", Xn), mu, sigma

    def forward(self, X):
        self.last_attention = []
        H, mu, sigma = self.encode_tokens(X)
        for layer in range(self.config.L):
            H = H + self.attention(layer, self.norm(f"block{layer}.ln_attn", H))
            H = H + self.mlp(f"block{layer}.ffn1", f"block{layer}.ffn2",
                             self.norm(f"block{layer}.ln_ffn", H))
        Y = self.lin("proj", H) * sigma + mu  # (B, C, S)
        return Y.transpose(0, 2, 1)


def qsal_attention(q: np.ndarray | Tensor, k: np.ndarray | Tensor) -> Tensor:
    """Row-normalized Gaussian kernel exp(-(q_c - k_c')^2), shape (B, C, C).

    ``q`` and ``k`` have shape (B, C).
    """
    q, k = diff.as_tensor(q), diff.as_tensor(k)
    B, C = q.shape
    delta = q.reshape(B, C, 1) - k.reshape(B, 1, C)
    # normalized exp(-d^2) is a softmax over -d^2; the max shift keeps far-apart rows finite
    return diff.softmax(-diff.square(delta), axis=-1)


class IQTransformer(ITransformer):
    """iTransformer with the attention replaced by a quantum self-attention layer."""

    def _init_attention(self, layer: int):
        c = self.config
        n = c.n_qubits
        if not hasattr(self, "q_node"):
            # |psi_c> = U_enc(h_c) H^n |0>, then the query/key/value circuit
            base = qsim.hadamard_layer(n).extend(qsim.build_qsann_ansatz(n, c.p_enc, ENCODING))
            self.q_node = self._qsal_node(base, qsim.z_observables([0]))
            self.k_node = self._qsal_node(base, qsim.z_observables([0]))
            self.v_node = self._qsal_node(base, value_observable_set(n, c.D))
        for role, node in (("q", self.q_node), ("k", self.k_node), ("v", self.v_node)):
            self._angles(f"block{layer}.qsal.theta_{role}", node.n_params)

    def _qsal_node(self, base: ParamCircuit, observables) -> diff.QuantumNode:
        c = self.config
        circ = ParamCircuit(base.n_qubits).extend(base)
        circ.extend(qsim.build_qsann_ansatz(c.n_qubits, c.p_vqc, TRAINABLE))
        return _node(circ, observables, c)

    def attention(self, layer: int, H: Tensor) -> Tensor:
        B, C, D = H.shape
        flat = H.reshape(B * C, D)
        pre = f"block{layer}.qsal"
        q = quantum_forward(self.q_node, flat, self.params[f"{pre}.theta_q"]).reshape(B, C)
        k = quantum_forward(self.k_node, flat, self.params[f"{pre}.theta_k"]).reshape(B, C)
        v = quantum_forward(self.v_node, flat, self.params[f"{pre}.theta_v"]).reshape(B, C, D)
        A = qsal_attention(q, k)
        self.last_attention.append(A.data)
        return A @ v


MODEL_CLASSES: dict[str, Callable[..., Forecaster]] = {
    "vqc_indep": IndependentVQC,
    "vqc_mlp": VQCWithMLP,
    "dense_obs": DenseEmbedding,
    "dense_qubits": DenseEmbedding,
    "enc_vqc_dec": EncoderVQCDecoder,
    "reupload": DataReuploading,
    "itransformer": ITransformer,
    "iqtransformer": IQTransformer,
}


def build_model(config: ModelConfig, seed: int = 0) -> Forecaster:
    config.validate()
    return MODEL_CLASSES[config.kind](config, seed)
