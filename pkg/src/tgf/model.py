"""A3T-GCN: two stacked TGCN cells, temporal attention readout, linear head.

A TGCN cell runs a two-layer graph convolution on its input and feeds the
result into GRU gates. Samples in a mini-batch are stacked along the row axis,
so every per-timestep tensor is ``(B*N) x width`` and the graph operator is
applied block by block.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tape, Var
from .errors import EmptySequence, SchemaViolation, ShapeError
from .graph import ComposedGraph

GATES = ("lin_u", "lin_r", "lin_c")


@dataclass(frozen=True)
class ModelConfig:
    n_nodes: int
    seq_len: int
    horizon: int = 1
    in_features: int = 8
    hidden: int = 16
    target: str = "offset"  # "offset": one output at t+horizon; "path": outputs t+1..t+horizon
    cell2_gate_input: str = "conv1+conv2+h"  # or "conv2+h" for a canonical second cell
    seed: int = 0

    def __post_init__(self) -> None:
        if self.horizon < 1 or self.seq_len < 1 or self.n_nodes < 1:
            raise SchemaViolation("n_nodes, seq_len and horizon must be >= 1")
        if self.target not in ("offset", "path"):
            raise SchemaViolation(f"unknown target mode {self.target!r}")
        if self.cell2_gate_input not in ("conv1+conv2+h", "conv2+h"):
            raise SchemaViolation(f"unknown cell2_gate_input {self.cell2_gate_input!r}")

    @property
    def n_outputs(self) -> int:
        return self.horizon if self.target == "path" else 1

    def gate_width(self, cell: int) -> int:
        if cell == 2 and self.cell2_gate_input == "conv1+conv2+h":
            return 3 * self.hidden
        return 2 * self.hidden

    def cell_input(self, cell: int) -> int:
        return self.in_features if cell == 1 else self.hidden


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, int]]:
    h = cfg.hidden
    shapes: dict[str, tuple[int, int]] = {}
    for cell in (1, 2):
        p = f"cell{cell}"
        shapes[f"{p}.gcn1.weight"] = (cfg.cell_input(cell), h)
        shapes[f"{p}.gcn2.weight"] = (h, h)
        for gate in GATES:
            shapes[f"{p}.{gate}.weight"] = (cfg.gate_width(cell), h)
            shapes[f"{p}.{gate}.bias"] = (1, h)
    shapes["attention.proj.weight"] = (h, h)
    shapes["attention.proj.bias"] = (1, h)
    shapes["attention.score"] = (h, 1)
    shapes["head.weight"] = (h, cfg.n_outputs)
    shapes["head.bias"] = (1, cfg.n_outputs)
    return shapes


def init_params(cfg: ModelConfig) -> ParameterStore:
    """Glorot-uniform weights, zero biases, drawn in a fixed name order from ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    store = ParameterStore()
    for name, (r, c) in parameter_shapes(cfg).items():
        if name.endswith(".bias"):
            store.add(name, np.zeros((r, c)))
        else:
            store.add(name, glorot(rng, r, c))
    return store


def gcn2(x: Var, a_hat: np.ndarray, w1: Var, w2: Var) -> tuple[Var, Var]:
    """Two graph-convolution layers ``ReLU(A x W)``; returns both layer outputs."""
    if x.shape[0] % a_hat.shape[0]:
        raise ShapeError(f"input rows {x.shape[0]} not a multiple of {a_hat.shape[0]} nodes")
    layer1 = ad.relu(ad.block_propagate(a_hat, ad.matmul(x, w1)))
    layer2 = ad.relu(ad.block_propagate(a_hat, ad.matmul(layer1, w2)))
    return layer1, layer2


def tgcn_cell_step(cell: int, x: Var, h: Var, a_hat: np.ndarray, params: dict[str, Var],
                   cfg: ModelConfig) -> tuple[Var, Var]:
    """One GRU step on graph-convolved input. Returns ``(h_next, conv2_out)``."""
    p = f"cell{cell}"
    conv1, conv2 = gcn2(x, a_hat, params[f"{p}.gcn1.weight"], params[f"{p}.gcn2.weight"])
    conv = [conv1, conv2] if cfg.gate_width(cell) == 3 * cfg.hidden else [conv2]
    z_in = ad.concat_cols(*conv, h)
    u = ad.sigmoid(ad.add(ad.matmul(z_in, params[f"{p}.lin_u.weight"]), params[f"{p}.lin_u.bias"]))
    r = ad.sigmoid(ad.add(ad.matmul(z_in, params[f"{p}.lin_r.weight"]), params[f"{p}.lin_r.bias"]))
    c_in = ad.concat_cols(*conv, ad.hadamard(r, h))
    c = ad.tanh(ad.add(ad.matmul(c_in, params[f"{p}.lin_c.weight"]), params[f"{p}.lin_c.bias"]))
    # u*h + (1-u)*c == c + u*(h - c)
    h_next = ad.add(c, ad.hadamard(u, ad.sub(h, c)))
    return h_next, conv2


def attention_weights(hidden_seq: Sequence[Var], params: dict[str, Var]) -> Var:
    """``T x rows`` matrix of softmax weights; column j holds row j's weights over time."""
    if not hidden_seq:
        raise EmptySequence("attention over an empty sequence")
    scores = []
    for h in hidden_seq:
        proj = ad.tanh(ad.add(ad.matmul(h, params["attention.proj.weight"]), params["attention.proj.bias"]))
        scores.append(ad.matmul(proj, params["attention.score"]))
    return ad.softmax_cols(ad.transpose(ad.concat_cols(*scores)))


def attention_pool(hidden_seq: Sequence[Var], params: dict[str, Var]) -> Var:
    """Per-row convex combination of the hidden states over time."""
    alpha = ad.transpose(attention_weights(hidden_seq, params))
    width = hidden_seq[0].shape[1]
    ones = np.ones((1, width))
    context = None
    for t, h in enumerate(hidden_seq):
        weight = ad.matmul(ad.slice_cols(alpha, t, t + 1), ones)
        term = ad.hadamard(weight, h)
        context = term if context is None else ad.add(context, term)
    return context


class A3TGCN:
    def __init__(self, cfg: ModelConfig, graph: ComposedGraph | np.ndarray,
                 store: ParameterStore | None = None):
        self.cfg = cfg
        self.a_hat = np.asarray(graph.normalized if isinstance(graph, ComposedGraph) else graph,
                                dtype=np.float64)
        if self.a_hat.shape != (cfg.n_nodes, cfg.n_nodes):
            raise ShapeError(f"graph operator {self.a_hat.shape} vs {cfg.n_nodes} nodes")
        self.store = store if store is not None else init_params(cfg)

    def forward(self, tape: Tape, x: np.ndarray, params: dict[str, Var] | None = None) -> Var:
        """``x`` is ``seq_len x N x F`` or ``B x seq_len x N x F``; output is ``(B*N) x n_outputs``."""
        cfg = self.cfg
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[1:] != (cfg.seq_len, cfg.n_nodes, cfg.in_features):
            raise ShapeError(
                f"expected (B, {cfg.seq_len}, {cfg.n_nodes}, {cfg.in_features}) input, got {x.shape}"
            )
        params = params if params is not None else tape.params(self.store)
        batch = x.shape[0]
        rows = batch * cfg.n_nodes
        h1 = tape.constant(np.zeros((rows, cfg.hidden)))
        h2 = tape.constant(np.zeros((rows, cfg.hidden)))
        states = []
        for t in range(cfg.seq_len):
            x_t = tape.constant(x[:, t].reshape(rows, cfg.in_features))
            h1, _ = tgcn_cell_step(1, x_t, h1, self.a_hat, params, cfg)
            h2, _ = tgcn_cell_step(2, h1, h2, self.a_hat, params, cfg)
            states.append(h2)
        context = attention_pool(states, params)
        return ad.add(ad.matmul(context, params["head.weight"]), params["head.bias"])

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Numpy predictions shaped ``B x N x n_outputs`` (or ``N x n_outputs`` for one sample)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 3
        out = self.forward(Tape(), x).value
        out = out.reshape(-1, self.cfg.n_nodes, self.cfg.n_outputs)
        return out[0] if single else out

    def loss(self, tape: Tape, x: np.ndarray, y: np.ndarray) -> Var:
        """Mean squared error against ``y`` shaped ``B x N x n_outputs``."""
        pred = self.forward(tape, x)
        target = np.asarray(y, dtype=np.float64).reshape(pred.shape)
        return ad.mse(pred, target)

    def describe(self) -> str:
        cfg = self.cfg
        h = cfg.hidden
        lines = ["A3TGCN("]
        for cell in (1, 2):
            lines.append(f"  (cell{cell}): TGCNCell(in_channels={cfg.cell_input(cell)}, out_channels={h})(")
            lines.append(f"    (conv1): GCNConv({cfg.cell_input(cell)}, {h})")
            lines.append(f"    (conv2): GCNConv({h}, {h})")
            for gate in GATES:
                lines.append(f"    ({gate}): Linear(in_features={cfg.gate_width(cell)}, out_features={h}, bias=True)")
            lines.append("  )")
        lines.append(f"  (attention): TemporalAttention(hidden={h}, periods={cfg.seq_len})")
        lines.append(f"  (linear): Linear(in_features={h}, out_features={cfg.n_outputs}, bias=True)")
        lines.append(")")
        lines.append(f"nodes={cfg.n_nodes} seq_len={cfg.seq_len} horizon={cfg.horizon} "
                     f"target={cfg.target} parameters={self.store.n_values()}")
        return "\n".join(lines)
