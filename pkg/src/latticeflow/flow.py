"""Affine-coupling normalizing flow over flattened lattice fields.

The flattened field is split into two contiguous halves. Each coupling layer
keeps one half fixed and applies ``y_b = x_b * exp(s(x_a)) + t(x_a)`` to the
other, alternating which half is frozen from layer to layer.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Param, Tape

SCHEMA_VERSION = 1
FIRST_HALF_FROZEN = 0
SECOND_HALF_FROZEN = 1
LOG_2PI = math.log(2.0 * math.pi)


class DenseNet:
    """Fully connected net with tanh on hidden layers and a linear output.

    The output layer starts at zero unless ``zero_output=False``.
    """

    def __init__(self, dims, rng=None, zero_output=True, name="net"):
        self.dims = [int(d) for d in dims]
        if len(self.dims) < 2:
            raise ValueError("DenseNet needs at least input and output dims")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights: list[Param] = []
        self.biases: list[Param] = []
        n_stages = len(self.dims) - 1
        for i, (n_in, n_out) in enumerate(zip(self.dims[:-1], self.dims[1:])):
            if zero_output and i == n_stages - 1:
                W = np.zeros((n_out, n_in))
                b = np.zeros(n_out)
            else:
                bound = 1.0 / math.sqrt(max(n_in, 1))
                W = rng.uniform(-bound, bound, (n_out, n_in))
                b = rng.uniform(-bound, bound, n_out)
            self.weights.append(Param(W, f"{name}.W{i}"))
            self.biases.append(Param(b, f"{name}.b{i}"))

    @property
    def params(self) -> list[Param]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def __call__(self, x: Node) -> Node:
        tape = x.tape
        h = x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.affine(tape.param(W), h, tape.param(b))
            if i < last:
                h = ad.tanh(h)
        return h


def split_sizes(dim: int) -> tuple[int, int]:
    return dim // 2, dim - dim // 2


class CouplingLayer:
    def __init__(self, dim, parity, hidden_width=36, rng=None, scale_clamp=5.0, name="layer"):
        if parity not in (FIRST_HALF_FROZEN, SECOND_HALF_FROZEN):
            raise ValueError(f"invalid parity {parity!r}")
        self.dim = int(dim)
        self.parity = parity
        self.hidden_width = int(hidden_width)
        self.scale_clamp = scale_clamp
        n1, n2 = split_sizes(self.dim)
        n_in, n_out = (n1, n2) if parity == FIRST_HALF_FROZEN else (n2, n1)
        dims = [n_in, self.hidden_width, self.hidden_width, n_out]
        self.s_net = DenseNet(dims, rng, name=f"{name}.s")
        self.t_net = DenseNet(dims, rng, name=f"{name}.t")

    @property
    def params(self):
        return self.s_net.params + self.t_net.params

    def halves(self, x: Node):
        n1 = self.dim // 2
        first, second = ad.take(x, slice(0, n1)), ad.take(x, slice(n1, self.dim))
        if self.parity == FIRST_HALF_FROZEN:
            return first, second
        return second, first

    def join(self, frozen: Node, moved: Node) -> Node:
        if self.parity == FIRST_HALF_FROZEN:
            return ad.concat([frozen, moved])
        return ad.concat([moved, frozen])

    def scale_and_shift(self, x_a: Node):
        raw = self.s_net(x_a)
        c = self.scale_clamp
        s = ad.scale(ad.tanh(ad.scale(raw, 1.0 / c)), c) if c else raw
        return s, self.t_net(x_a)


def _check_finite(node: Node, what: str, index: int):
    if not np.all(np.isfinite(node.value)):
        raise FloatingPointError(f"non-finite values in {what} of coupling layer {index}")


def couple_forward(layer: CouplingLayer, x: Node, index: int = 0):
    """Return ``(y, logdet)`` with ``logdet`` the per-row sum of the scale outputs."""
    x_a, x_b = layer.halves(x)
    s, t = layer.scale_and_shift(x_a)
    y_b = ad.add(ad.mul(x_b, ad.exp(s)), t)
    _check_finite(y_b, "forward output", index)
    return layer.join(x_a, y_b), ad.sum_(s, axis=-1)


def couple_inverse(layer: CouplingLayer, y: Node, index: int = 0):
    """Return ``(x, logdet)`` of the inverse map, ``logdet = -sum(s)``."""
    y_a, y_b = layer.halves(y)
    s, t = layer.scale_and_shift(y_a)
    x_b = ad.mul(ad.sub(y_b, t), ad.exp(ad.neg(s)))
    _check_finite(x_b, "inverse output", index)
    return layer.join(y_a, x_b), ad.neg(ad.sum_(s, axis=-1))


class QuantumLayer:
    """Encoder producing circuit angles from the conditioning half of the latent vector."""

    def __init__(self, n_cond=32, n_qubits=5, depth=2, hidden=16, rng=None):
        from .quantum import QuantumCircuit

        self.n_cond = int(n_cond)
        self.circuit = QuantumCircuit(n_qubits, depth)
        self.encoder = DenseNet([self.n_cond, hidden, depth * n_qubits], rng, name="encoder")

    @property
    def n_qubits(self):
        return self.circuit.n_qubits

    @property
    def depth(self):
        return self.circuit.depth

    @property
    def params(self):
        return self.encoder.params


@dataclass
class FlowModel:
    """Ordered coupling layers, a standard-normal base, and an optional quantum layer."""

    layers: list
    dim: int
    quantum: QuantumLayer | None = None
    hidden_width: int = 36
    meta: dict = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        dim=64,
        n_layers=2,
        hidden_width=36,
        quantum=True,
        seed=0,
        scale_clamp=5.0,
        n_qubits=5,
        depth=2,
        encoder_hidden=16,
    ):
        if n_layers < 1:
            raise ValueError("need at least one coupling layer")
        rng = np.random.Generator(np.random.Philox(int(seed)))
        layers = [
            CouplingLayer(dim, k % 2, hidden_width, rng, scale_clamp, name=f"layer{k}")
            for k in range(n_layers)
        ]
        q = None
        if quantum:
            n_q, n_c = split_sizes(dim)
            if n_q > 2**n_qubits:
                raise ValueError(f"latent half of size {n_q} exceeds {2 ** n_qubits} amplitudes")
            q = QuantumLayer(n_c, n_qubits, depth, encoder_hidden, rng)
        return cls(layers, int(dim), q, int(hidden_width))

    @property
    def n_layers(self):
        return len(self.layers)

    @property
    def parities(self):
        return [layer.parity for layer in self.layers]

    @property
    def flow_params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params]

    @property
    def params(self) -> list[Param]:
        return self.flow_params + (self.quantum.params if self.quantum else [])

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    # numpy conveniences --------------------------------------------------

    def forward(self, z):
        tape = Tape()
        phi, ld = flow_forward(self, tape.constant(_as_2d(z, self.dim)))
        return phi.value, ld.value

    def inverse(self, phi):
        tape = Tape()
        z, ld = flow_inverse(self, tape.constant(_as_2d(phi, self.dim)))
        return z.value, ld.value

    def log_prob(self, phi) -> np.ndarray:
        tape = Tape()
        return log_q(self, tape.constant(_as_2d(phi, self.dim))).value


def _as_2d(x, dim):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"expected rows of length {dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    return x


def flow_forward(model: FlowModel, z: Node):
    x, total = z, None
    for k, layer in enumerate(model.layers):
        x, ld = couple_forward(layer, x, k)
        total = ld if total is None else ad.add(total, ld)
    return x, total


def flow_inverse(model: FlowModel, phi: Node):
    x, total = phi, None
    for k in reversed(range(model.n_layers)):
        x, ld = couple_inverse(model.layers[k], x, k)
        total = ld if total is None else ad.add(total, ld)
    return x, total


def base_log_prob(z: Node) -> Node:
    """Standard-normal log density per row, constant term included."""
    d = z.value.shape[-1]
    return ad.add(ad.scale(ad.sum_(ad.square(z), axis=-1), -0.5), -0.5 * d * LOG_2PI)


def log_q(model: FlowModel, phi: Node) -> Node:
    z, logdet_inv = flow_inverse(model, phi)
    return ad.add(base_log_prob(z), logdet_inv)


def effective_action(model: FlowModel, phi: Node) -> Node:
    return ad.neg(log_q(model, phi))


# --- checkpoints -------------------------------------------------------------


def _net_to_dict(net: DenseNet):
    return {
        "dims": net.dims,
        "weights": [W.value.tolist() for W in net.weights],
        "biases": [b.value.tolist() for b in net.biases],
    }


def _load_net(net: DenseNet, d: dict, where: str):
    if list(d["dims"]) != net.dims:
        raise ValueError(f"{where}: dims {d['dims']} do not match {net.dims}")
    for p, v in zip(net.weights, d["weights"]):
        p.value = np.array(v, dtype=np.float64).reshape(p.shape)
    for p, v in zip(net.biases, d["biases"]):
        p.value = np.array(v, dtype=np.float64).reshape(p.shape)


def model_to_dict(model: FlowModel, action_params=None, seed=None, extra=None) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "dim": model.dim,
        "K": model.n_layers,
        "H": model.hidden_width,
        "parities": model.parities,
        "scale_clamp": model.layers[0].scale_clamp,
        "layers": [
            {"s_net": _net_to_dict(layer.s_net), "t_net": _net_to_dict(layer.t_net)}
            for layer in model.layers
        ],
        "quantum": None,
        "action_params": None,
        "seed": seed,
    }
    if model.quantum is not None:
        q = model.quantum
        doc["quantum"] = {
            "n_qubits": q.n_qubits,
            "depth": q.depth,
            "entangler": "cnot_ring",
            "gate_order": "ry_all_then_cnot_ring",
            "angle_index": "layer_major",
            "encoder": _net_to_dict(q.encoder),
        }
    if action_params is not None:
        doc["action_params"] = {
            "mass_squared": action_params.mass_squared,
            "quartic": action_params.quartic,
        }
    if extra:
        doc.update(extra)
    return doc


def model_from_dict(doc: dict) -> FlowModel:
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported checkpoint schema_version {version!r}")
    q = doc.get("quantum")
    model = FlowModel.build(
        dim=doc["dim"],
        n_layers=doc["K"],
        hidden_width=doc["H"],
        quantum=q is not None,
        scale_clamp=doc.get("scale_clamp", 5.0),
        n_qubits=q["n_qubits"] if q else 5,
        depth=q["depth"] if q else 2,
        encoder_hidden=q["encoder"]["dims"][1] if q else 16,
    )
    if list(doc["parities"]) != model.parities:
        raise ValueError("checkpoint parities do not alternate as expected")
    for k, (layer, ld) in enumerate(zip(model.layers, doc["layers"])):
        _load_net(layer.s_net, ld["s_net"], f"layer {k} s_net")
        _load_net(layer.t_net, ld["t_net"], f"layer {k} t_net")
    if q is not None:
        _load_net(model.quantum.encoder, q["encoder"], "encoder")
    return model


def save_checkpoint(path, model: FlowModel, action_params=None, seed=None, extra=None):
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(model_to_dict(model, action_params, seed, extra)))
    tmp.replace(path)
    return path


def load_checkpoint(path):
    """Return ``(model, document)``."""
    doc = json.loads(Path(path).read_text())
    return model_from_dict(doc), doc
