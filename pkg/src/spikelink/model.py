"""Spiking graph auto-encoder: encoder blocks, probabilistic decoder, readout.

Architecture
------------
Node features are rate-encoded into T-step spike trains. Each encoder
block is a *propagation* layer (normalized-adjacency product followed by
spiking neurons) and a *transformation* layer (weight product followed by
spiking neurons). Decoupling the two keeps every linear map's input
binary, so on spike-driven hardware each would be pure accumulation. A
skip connection feeds a block's propagation output past its
transformation into the next block's propagation input, widening it.

The decoder applies a linear map to the last block's spikes and samples
binary latents from probabilistic units; edges are scored by a weighted
inner product of latent rows, accumulated over time by a decaying
non-firing readout.

The first propagation layer is weight-free: because its input is the
Poisson-encoded feature train, its output distribution is fixed for a
given encoding draw, so it is precomputed once per run (see
:class:`GraphEncoding`). With two blocks, the skip half of the second
propagation depends only on those constants and is folded as well.

``coupled=True`` (the non-decoupled ablation) fuses each block into the
classical form spikes -> operator -> weights -> spiking neurons, whose
weight product consumes real-valued inputs and therefore multiplies.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import autograd as ag
from . import neurons
from .neurons import LifLayer, NeuronConfig, SpikeTensor, poisson_encode
from .sparse import CsrMatrix

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    num_blocks: int = 1
    hidden_dim: int = 64
    latent_dim: int = 64
    time_window: int = 10
    skip_connections: bool = True
    decoupled: bool = True
    prior_pi: float = 0.1
    neuron: NeuronConfig = field(default_factory=NeuronConfig)
    dtype: str = "float32"

    def __post_init__(self) -> None:
        if self.num_blocks not in (1, 2):
            raise ValueError("num_blocks must be 1 or 2")
        if min(self.hidden_dim, self.latent_dim) < 1:
            raise ValueError("layer dimensions must be >= 1")
        if self.time_window < 1:
            raise ValueError("time_window must be >= 1")
        if not (0.0 < self.prior_pi < 1.0):
            raise ValueError(f"prior_pi must be in (0, 1), got {self.prior_pi}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be 'float32' or 'float64'")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def encoder_widths(self, feature_dim: int) -> list[tuple[int, int]]:
        """(input_width, output_width) of each block's transformation."""
        widths = []
        prop_out = feature_dim  # block-0 propagation preserves the feature width
        for block in range(self.num_blocks):
            if block == 0:
                t_in = feature_dim
            elif self.decoupled and self.skip_connections:
                t_in = self.hidden_dim + prop_out
            else:
                t_in = self.hidden_dim
            widths.append((t_in, self.hidden_dim))
            prop_out = t_in  # propagation of the NEXT block sees this width
        return widths

    def to_json(self) -> dict:
        return {
            "num_blocks": self.num_blocks,
            "hidden_dim": self.hidden_dim,
            "latent_dim": self.latent_dim,
            "time_window": self.time_window,
            "skip_connections": self.skip_connections,
            "decoupled": self.decoupled,
            "prior_pi": self.prior_pi,
            "dtype": self.dtype,
            "neuron": {
                "tau": self.neuron.tau,
                "v_th": self.neuron.v_th,
                "surrogate_width": self.neuron.surrogate_width,
                "tau_out": self.neuron.tau_out,
            },
        }

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        neuron = NeuronConfig(**d.pop("neuron", {}))
        return cls(neuron=neuron, **d)


@dataclass
class ModelParams:
    """Trainable weights: one matrix per encoder block, the decoder map,
    and the readout gate vector."""

    encoder_weights: list[np.ndarray]
    decoder_weight: np.ndarray
    wip_weight: np.ndarray

    def items(self) -> list[tuple[str, np.ndarray]]:
        out = [(f"encoder.{i}", w) for i, w in enumerate(self.encoder_weights)]
        out.append(("decoder", self.decoder_weight))
        out.append(("wip", self.wip_weight))
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            encoder_weights=[w.copy() for w in self.encoder_weights],
            decoder_weight=self.decoder_weight.copy(),
            wip_weight=self.wip_weight.copy(),
        )

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) for _, w in self.items())


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def init_params(feature_dim: int, cfg: ModelConfig, rng: np.random.Generator) -> ModelParams:
    dtype = cfg.np_dtype
    enc = [_glorot(rng, w_in, w_out, dtype) for (w_in, w_out) in cfg.encoder_widths(feature_dim)]
    dec = _glorot(rng, cfg.hidden_dim, cfg.latent_dim, dtype)
    limit = np.sqrt(6.0 / (cfg.latent_dim + 1))
    wip = rng.uniform(-limit, limit, size=cfg.latent_dim).astype(dtype)
    return ModelParams(encoder_weights=enc, decoder_weight=dec, wip_weight=wip)


# -- per-layer occupancy bookkeeping (consumed by the energy ledger) ---------


@dataclass
class LayerStats:
    name: str
    kind: str  # "propagation" | "transformation"
    coupled: bool
    in_width: int
    out_width: int
    num_nodes: int
    steps: int
    input_nnz: list[int]
    output_nnz: list[int]
    input_degree_weighted: list[int] | None = None  # propagation only
    operator_nnz: int | None = None  # propagation only
    input_binary: bool = True


@dataclass
class WipStats:
    steps: int
    latent_dim: int
    num_nodes: int
    z_nnz: list[int]
    pair_count: int = 0
    pair_intersections_total: int = 0


@dataclass
class ForwardTrace:
    """Everything the backward pass and the energy ledger need."""

    steps: int
    mode: str
    layer_stats: list[LayerStats]
    wip_stats: WipStats
    z_steps: list[ag.Tensor]
    q_steps: list[ag.Tensor]
    param_tensors: dict[str, ag.Tensor] = field(default_factory=dict)
    dense_logits: ag.Tensor | None = None
    pair_logits: ag.Tensor | None = None
    layer_outputs: dict[str, list[np.ndarray]] | None = None

    def spike_rate_per_layer(self) -> dict[str, float]:
        rates = {}
        for st in self.layer_stats:
            size = st.num_nodes * st.out_width * st.steps
            rates[st.name] = float(sum(st.output_nnz)) / size if size else 0.0
        z_size = self.wip_stats.num_nodes * self.wip_stats.latent_dim * self.steps
        rates["decoder.latent"] = float(sum(self.wip_stats.z_nnz)) / z_size if z_size else 0.0
        return rates


def _nnz(a: np.ndarray) -> int:
    return int(np.count_nonzero(a))


def _check_binary(a: np.ndarray, where: str) -> None:
    if a.size and not ((a == 0) | (a == 1)).all():
        raise AssertionError(f"non-binary spikes feeding {where}")


# -- kernel-level layer operations (stateful, one step at a time) ------------


def propagation_forward(
    spikes_t: np.ndarray,
    skip_t: np.ndarray | None,
    op: CsrMatrix,
    state: LifLayer,
) -> np.ndarray:
    """One propagation step: spiking neurons over op @ [spikes | skip]."""
    x = spikes_t if skip_t is None else np.concatenate([spikes_t, skip_t], axis=1)
    if x.shape[0] != op.num_cols:
        raise ValueError(f"operator {op.shape} cannot propagate input of shape {x.shape}")
    return state.step(op @ x)


def transformation_forward(h_tilde_t: np.ndarray, weight: np.ndarray, state: LifLayer) -> np.ndarray:
    """One transformation step: spiking neurons over h_tilde @ W."""
    if h_tilde_t.shape[1] != weight.shape[0]:
        raise ValueError(f"shape mismatch: {h_tilde_t.shape} @ {weight.shape}")
    return state.step(h_tilde_t @ weight)


def coupled_gcn_forward(
    spikes_t: np.ndarray, op: CsrMatrix, weight: np.ndarray, state: LifLayer
) -> np.ndarray:
    """One fused (non-decoupled) step: neurons over (op @ spikes) @ W.

    The inner product against W consumes the real-valued propagation
    output, which is what makes this mode multiply instead of accumulate.
    """
    if spikes_t.shape[0] != op.num_cols:
        raise ValueError(f"operator {op.shape} cannot propagate input of shape {spikes_t.shape}")
    if spikes_t.shape[1] != weight.shape[0]:
        raise ValueError(f"shape mismatch: {spikes_t.shape} @ {weight.shape}")
    return state.step((op @ spikes_t) @ weight)


def rate_fire(pre_t: np.ndarray, rng: np.random.Generator | None, relaxed: bool = False) -> np.ndarray:
    """Weight-free firing for the first propagation layer.

    Fires Bernoulli(clamp(pre, 0, 1)); the relaxation is the clamped rate
    itself. Keeps the first layer a pure re-encoding of the inputs.
    """
    rate = np.clip(pre_t, 0.0, 1.0)
    if relaxed:
        return rate
    if rng is None:
        raise ValueError("rate firing requires an rng")
    return (rng.random(size=rate.shape) < rate).astype(pre_t.dtype)


def decoder_forward(
    h_t: np.ndarray,
    decoder_weight: np.ndarray,
    state: LifLayer,
    rng: np.random.Generator | None,
) -> tuple[np.ndarray, np.ndarray]:
    """One decoder step: returns (sampled latents, firing probabilities)."""
    z = state.step(h_t @ decoder_weight, rng)
    return z, state.fire_probs[-1]


def wip_logit(z_n: np.ndarray, z_m: np.ndarray, w: np.ndarray) -> float:
    """Edge logit: sum_c w_c * z_n[c] * z_m[c]."""
    z_n, z_m, w = np.asarray(z_n), np.asarray(z_m), np.asarray(w)
    if not (z_n.shape == z_m.shape == w.shape):
        raise ValueError("latent/weight length mismatch")
    return float(np.sum(w * z_n * z_m))


# -- per-run constant encoding ------------------------------------------------


def _to_csr(a: np.ndarray, dtype) -> sp.csr_matrix:
    return sp.csr_matrix(np.asarray(a, dtype=dtype))


@dataclass
class GraphEncoding:
    """Input spike trains plus every constant stage derived from them.

    Sampled once per run: the feature encoding and the weight-free first
    propagation have no trainable ancestors, so their spike trains (and,
    with two blocks, the skip-driven half of the second propagation) are
    fixed for the run and shared across epochs.
    """

    steps: int
    num_nodes: int
    feature_dim: int
    relaxed: bool
    feature_spikes: SpikeTensor | None  # logical {0,1} train (None when relaxed)
    feature_csr: list[sp.csr_matrix]  # X^t, per step
    feature_nnz: list[int]
    feature_degree_weighted: list[int]
    h_tilde1: list[sp.csr_matrix]  # first propagation output, per step
    h_tilde1_nnz: list[int]
    h_tilde1_degree_weighted: list[int]
    block1_const: list[sp.csr_matrix] | None  # skip half of second propagation output
    block1_const_nnz: list[int] | None
    coupled_pre: list[sp.csr_matrix] | None  # (op @ X^t) for the coupled ablation


def encode_graph(
    op: CsrMatrix,
    rates: np.ndarray,
    cfg: ModelConfig,
    rng: np.random.Generator,
    relaxed: bool = False,
) -> GraphEncoding:
    """Rate-encode the features and fold every weight-free spiking stage."""
    rates = np.asarray(rates, dtype=np.float64)
    n, c0 = rates.shape
    steps = cfg.time_window
    dtype = cfg.np_dtype
    degree = op.row_nnz().astype(np.int64)

    if relaxed:
        spike_steps = [rates.astype(dtype) for _ in range(steps)]
        feature_spikes = None
    else:
        feature_spikes = poisson_encode(rates, steps, rng)
        spike_steps = [feature_spikes.step(t).astype(dtype) for t in range(steps)]

    feature_csr = [_to_csr(s, dtype) for s in spike_steps]
    feature_nnz = [int(m.nnz) for m in feature_csr]
    feature_degree_weighted = [
        int(np.dot(degree, np.diff(m.indptr))) for m in feature_csr
    ]

    coupled_pre = None
    if not cfg.decoupled:
        coupled_pre = [
            sp.csr_matrix(op.scipy_csr() @ m).astype(dtype) for m in feature_csr
        ]

    h1_csr: list[sp.csr_matrix] = []
    h1_nnz: list[int] = []
    h1_dw: list[int] = []
    for t in range(steps):
        pre = op @ spike_steps[t]
        spikes = rate_fire(pre.astype(dtype), rng, relaxed=relaxed)
        m = _to_csr(spikes, dtype)
        h1_csr.append(m)
        h1_nnz.append(int(m.nnz))
        h1_dw.append(int(np.dot(degree, np.diff(m.indptr))))

    block1_const = None
    block1_const_nnz = None
    if cfg.decoupled and cfg.num_blocks == 2 and cfg.skip_connections:
        block1_const = []
        block1_const_nnz = []
        # lean LIF over the wide constant channels: keep only the rolling state
        u = None
        o = None
        for t in range(steps):
            pre = (op.scipy_csr() @ h1_csr[t]).toarray().astype(dtype)
            u = pre if u is None else cfg.neuron.tau * (u - cfg.neuron.v_th * o) + pre
            if relaxed:
                o = neurons.relaxed_fire(u, cfg.neuron)
            else:
                o = neurons.heaviside_fire(u, cfg.neuron)
            m = _to_csr(o, dtype)
            block1_const.append(m)
            block1_const_nnz.append(int(m.nnz))

    return GraphEncoding(
        steps=steps,
        num_nodes=n,
        feature_dim=c0,
        relaxed=relaxed,
        feature_spikes=feature_spikes,
        feature_csr=feature_csr,
        feature_nnz=feature_nnz,
        feature_degree_weighted=feature_degree_weighted,
        h_tilde1=h1_csr,
        h_tilde1_nnz=h1_nnz,
        h_tilde1_degree_weighted=h1_dw,
        block1_const=block1_const,
        block1_const_nnz=block1_const_nnz,
        coupled_pre=coupled_pre,
    )


# -- tape forward --------------------------------------------------------------


def _lif_unroll(
    pre_steps: list[ag.Tensor], cfg: NeuronConfig, relaxed: bool
) -> tuple[list[ag.Tensor], list[ag.Tensor]]:
    """Tape LIF over time: u[t] = tau*(u[t-1] - o[t-1]*v_th) + x[t]."""
    spikes: list[ag.Tensor] = []
    membranes: list[ag.Tensor] = []
    u_prev: ag.Tensor | None = None
    o_prev: ag.Tensor | None = None
    for x in pre_steps:
        if u_prev is None:
            u = x
        else:
            u = ag.add(ag.mul(ag.add(u_prev, ag.mul(o_prev, -cfg.v_th)), cfg.tau), x)
        o = ag.fire(u, cfg, relaxed=relaxed)
        membranes.append(u)
        spikes.append(o)
        u_prev, o_prev = u, o
    return spikes, membranes


def full_forward(
    op: CsrMatrix,
    encoding: GraphEncoding,
    params: ModelParams,
    cfg: ModelConfig,
    rng: np.random.Generator,
    mode: str = "train",
    pairs: np.ndarray | None = None,
    dense_pairs: bool = False,
    pair_selectors: tuple[sp.spmatrix, sp.spmatrix] | None = None,
    record_wip_pairs: bool = False,
    keep_layer_outputs: bool = False,
) -> ForwardTrace:
    """Run the unrolled network, building the tape for the backward pass.

    ``pairs`` (or ``dense_pairs`` for the all-pairs logit matrix) selects
    which edge logits are produced. The trace is identical between train
    and eval modes given the same rng state; only the logit selection
    differs.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown forward mode: {mode!r}")
    relaxed = encoding.relaxed
    steps = cfg.time_window
    n = encoding.num_nodes
    neuron = cfg.neuron
    dtype = cfg.np_dtype
    degree = op.row_nnz().astype(np.int64)
    op_nnz = op.nnz

    layer_stats: list[LayerStats] = []
    outputs: dict[str, list[np.ndarray]] = {} if keep_layer_outputs else None

    weights = [ag.parameter(w, name=f"encoder.{i}") for i, w in enumerate(params.encoder_weights)]
    w_dec = ag.parameter(params.decoder_weight, name="decoder")
    w_wip = ag.parameter(params.wip_weight, name="wip")

    if cfg.decoupled:
        h_steps = _decoupled_encoder(
            op, encoding, cfg, weights, layer_stats, outputs, degree, op_nnz, relaxed
        )
    else:
        h_steps = _coupled_encoder(
            op, encoding, cfg, weights, layer_stats, outputs, degree, op_nnz, relaxed
        )

    # decoder: linear map + probabilistic units
    dec_in_nnz = [_nnz(h.data) for h in h_steps]
    pre_steps = [ag.matmul(h, w_dec) for h in h_steps]
    z_steps: list[ag.Tensor] = []
    q_steps: list[ag.Tensor] = []
    u_prev: ag.Tensor | None = None
    z_prev: ag.Tensor | None = None
    for x in pre_steps:
        if u_prev is None:
            u = x
        else:
            u = ag.add(ag.mul(ag.add(u_prev, ag.mul(z_prev, -neuron.v_th)), neuron.tau), x)
        q = ag.fire_prob(u, neuron)
        z = ag.bernoulli_sample(q, rng, relaxed=relaxed)
        q_steps.append(q)
        z_steps.append(z)
        u_prev, z_prev = u, z
    if not relaxed:
        for h in h_steps:
            _check_binary(h.data, "decoder.linear")
    layer_stats.append(
        LayerStats(
            name="decoder.linear",
            kind="transformation",
            coupled=False,
            in_width=cfg.hidden_dim,
            out_width=cfg.latent_dim,
            num_nodes=n,
            steps=steps,
            input_nnz=dec_in_nnz,
            output_nnz=[_nnz(z.data) for z in z_steps],
            input_binary=not relaxed,
        )
    )
    if outputs is not None:
        outputs["decoder.latent"] = [z.data for z in z_steps]
        outputs["decoder.fire_prob"] = [q.data for q in q_steps]

    wip_stats = WipStats(
        steps=steps,
        latent_dim=cfg.latent_dim,
        num_nodes=n,
        z_nnz=[_nnz(z.data) for z in z_steps],
    )

    decay = neurons.readout_decay_weights(steps, neuron, dtype)
    dense_logits = None
    pair_logits = None
    if dense_pairs:
        a_parts = []
        b_parts = []
        for t, z in enumerate(z_steps):
            s = float(np.sqrt(decay[t]))
            a_parts.append(ag.mul(ag.mul(z, w_wip), s))
            b_parts.append(ag.mul(z, s))
        dense_logits = ag.matmul_nt(ag.concat_cols(a_parts), ag.concat_cols(b_parts))
    elif pairs is not None and len(pairs):
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if pairs.min() < 0 or pairs.max() >= n:
            raise ValueError("pair node index out of range")
        if pair_selectors is None:
            pair_selectors = build_pair_selectors(pairs, n, dtype)
        src_sel, dst_sel = pair_selectors
        acc = None
        for t, z in enumerate(z_steps):
            eta = ag.pair_wip(z, w_wip, src_sel, dst_sel)
            term = ag.mul(eta, float(decay[t]))
            acc = term if acc is None else ag.add(acc, term)
        pair_logits = acc
        if record_wip_pairs and not relaxed:
            total = 0
            for z in z_steps:
                zu = np.asarray(src_sel @ z.data)
                zv = np.asarray(dst_sel @ z.data)
                total += int(np.sum(zu * zv))
            wip_stats.pair_count = int(pairs.shape[0])
            wip_stats.pair_intersections_total = total

    param_tensors = {t.name: t for t in weights}
    param_tensors["decoder"] = w_dec
    param_tensors["wip"] = w_wip
    return ForwardTrace(
        steps=steps,
        mode=mode,
        layer_stats=layer_stats,
        wip_stats=wip_stats,
        z_steps=z_steps,
        q_steps=q_steps,
        param_tensors=param_tensors,
        dense_logits=dense_logits,
        pair_logits=pair_logits,
        layer_outputs=outputs,
    )


def _decoupled_encoder(
    op, encoding, cfg, weights, layer_stats, outputs, degree, op_nnz, relaxed
) -> list[ag.Tensor]:
    steps = cfg.time_window
    n = encoding.num_nodes
    neuron = cfg.neuron

    # block 0: the weight-free propagation was folded into the encoding
    layer_stats.append(
        LayerStats(
            name="block0.propagation",
            kind="propagation",
            coupled=False,
            in_width=encoding.feature_dim,
            out_width=encoding.feature_dim,
            num_nodes=n,
            steps=steps,
            input_nnz=list(encoding.feature_nnz),
            output_nnz=list(encoding.h_tilde1_nnz),
            input_degree_weighted=list(encoding.feature_degree_weighted),
            operator_nnz=op_nnz,
            input_binary=not relaxed,
        )
    )
    if outputs is not None:
        outputs["block0.propagation"] = [m.toarray() for m in encoding.h_tilde1]

    pre0 = [ag.sparse_const_matmul(encoding.h_tilde1[t], weights[0]) for t in range(steps)]
    h_steps, _ = _lif_unroll(pre0, neuron, relaxed)
    layer_stats.append(
        LayerStats(
            name="block0.transformation",
            kind="transformation",
            coupled=False,
            in_width=encoding.feature_dim,
            out_width=cfg.hidden_dim,
            num_nodes=n,
            steps=steps,
            input_nnz=list(encoding.h_tilde1_nnz),
            output_nnz=[_nnz(h.data) for h in h_steps],
            input_binary=not relaxed,
        )
    )
    if outputs is not None:
        outputs["block0.transformation"] = [h.data for h in h_steps]

    if cfg.num_blocks == 1:
        return h_steps

    # block 1
    with_skip = cfg.skip_connections
    prop_in_width = cfg.hidden_dim + (encoding.feature_dim if with_skip else 0)
    dyn_pre = [ag.csr_matmul(op, h) for h in h_steps]
    dyn_spikes, _ = _lif_unroll(dyn_pre, neuron, relaxed)
    in_nnz = []
    in_dw = []
    out_nnz = []
    for t in range(steps):
        h_nnz = _nnz(h_steps[t].data)
        h_dw = int(np.dot(degree, (h_steps[t].data != 0).sum(axis=1)))
        if with_skip:
            in_nnz.append(h_nnz + encoding.h_tilde1_nnz[t])
            in_dw.append(h_dw + encoding.h_tilde1_degree_weighted[t])
        else:
            in_nnz.append(h_nnz)
            in_dw.append(h_dw)
    if with_skip:
        const_spikes = encoding.block1_const
        out_nnz = [
            _nnz(dyn_spikes[t].data) + encoding.block1_const_nnz[t] for t in range(steps)
        ]
    else:
        const_spikes = None
        out_nnz = [_nnz(s.data) for s in dyn_spikes]
    layer_stats.append(
        LayerStats(
            name="block1.propagation",
            kind="propagation",
            coupled=False,
            in_width=prop_in_width,
            out_width=prop_in_width,
            num_nodes=n,
            steps=steps,
            input_nnz=in_nnz,
            output_nnz=out_nnz,
            input_degree_weighted=in_dw,
            operator_nnz=op_nnz,
            input_binary=not relaxed,
        )
    )
    if outputs is not None:
        key = "block1.propagation"
        outputs[key] = []
        for t in range(steps):
            dyn = dyn_spikes[t].data
            if with_skip:
                outputs[key].append(np.concatenate([dyn, const_spikes[t].toarray()], axis=1))
            else:
                outputs[key].append(dyn)

    w1 = weights[1]
    pre1 = []
    for t in range(steps):
        term = ag.matmul(dyn_spikes[t], _slice_rows(w1, 0, cfg.hidden_dim))
        if with_skip:
            skip_term = ag.sparse_const_matmul(
                const_spikes[t], _slice_rows(w1, cfg.hidden_dim, prop_in_width)
            )
            term = ag.add(term, skip_term)
        pre1.append(term)
    h2_steps, _ = _lif_unroll(pre1, neuron, relaxed)
    layer_stats.append(
        LayerStats(
            name="block1.transformation",
            kind="transformation",
            coupled=False,
            in_width=prop_in_width,
            out_width=cfg.hidden_dim,
            num_nodes=n,
            steps=steps,
            input_nnz=list(out_nnz),
            output_nnz=[_nnz(h.data) for h in h2_steps],
            input_binary=not relaxed,
        )
    )
    if outputs is not None:
        outputs["block1.transformation"] = [h.data for h in h2_steps]
    return h2_steps


def _slice_rows(w: ag.Tensor, lo: int, hi: int) -> ag.Tensor:
    data = w.data[lo:hi]

    def grad_fn(g):
        full = np.zeros_like(w.data)
        full[lo:hi] = g
        return (full,)

    return ag.Tensor(data, parents=(w,), grad_fn=grad_fn)


def _coupled_encoder(
    op, encoding, cfg, weights, layer_stats, outputs, degree, op_nnz, relaxed
) -> list[ag.Tensor]:
    steps = cfg.time_window
    n = encoding.num_nodes
    neuron = cfg.neuron
    h_steps: list[ag.Tensor] | None = None
    for block in range(cfg.num_blocks):
        if block == 0:
            in_width = encoding.feature_dim
            in_nnz = list(encoding.feature_nnz)
            in_dw = list(encoding.feature_degree_weighted)
            pre = [
                ag.sparse_const_matmul(encoding.coupled_pre[t], weights[0])
                for t in range(steps)
            ]
        else:
            in_width = cfg.hidden_dim
            in_nnz = [_nnz(h.data) for h in h_steps]
            in_dw = [int(np.dot(degree, (h.data != 0).sum(axis=1))) for h in h_steps]
            pre = [ag.matmul(ag.csr_matmul(op, h), weights[block]) for h in h_steps]
        h_steps, _ = _lif_unroll(pre, neuron, relaxed)
        out_nnz = [_nnz(h.data) for h in h_steps]
        layer_stats.append(
            LayerStats(
                name=f"block{block}.propagation",
                kind="propagation",
                coupled=True,
                in_width=in_width,
                out_width=in_width,
                num_nodes=n,
                steps=steps,
                input_nnz=in_nnz,
                output_nnz=in_nnz,  # real-valued intermediate, occupancy tracks input
                input_degree_weighted=in_dw,
                operator_nnz=op_nnz,
                input_binary=not relaxed,
            )
        )
        layer_stats.append(
            LayerStats(
                name=f"block{block}.transformation",
                kind="transformation",
                coupled=True,
                in_width=in_width,
                out_width=cfg.hidden_dim,
                num_nodes=n,
                steps=steps,
                input_nnz=in_nnz,
                output_nnz=out_nnz,
                input_binary=False,  # consumes the real-valued propagation output
            )
        )
        if outputs is not None:
            outputs[f"block{block}.transformation"] = [h.data for h in h_steps]
    return h_steps


def build_pair_selectors(
    pairs: np.ndarray, num_nodes: int, dtype
) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """One-hot row selectors (P x N) for the two endpoints of each pair."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    p = pairs.shape[0]
    ones = np.ones(p, dtype=dtype)
    rows = np.arange(p)
    src = sp.csr_matrix((ones, (rows, pairs[:, 0])), shape=(p, num_nodes))
    dst = sp.csr_matrix((ones, (rows, pairs[:, 1])), shape=(p, num_nodes))
    return src, dst


def predict_edges(
    trace: ForwardTrace,
    pairs: np.ndarray,
    params: ModelParams,
    cfg: ModelConfig,
) -> np.ndarray:
    """Edge probabilities for the given pairs from a completed trace."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    n = trace.wip_stats.num_nodes
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
        raise ValueError("pair node index out of range")
    w = params.wip_weight
    etas = np.empty((trace.steps, pairs.shape[0]), dtype=np.float64)
    for t, z in enumerate(trace.z_steps):
        zd = z.data
        etas[t] = (zd[pairs[:, 0]] * zd[pairs[:, 1]]) @ w
    probs, _ = neurons.readout_accumulate(etas, cfg.neuron)
    return probs


# -- checkpointing --------------------------------------------------------------


def save_checkpoint(
    path: str | Path,
    cfg: ModelConfig,
    params: ModelParams,
    meta: dict | None = None,
) -> None:
    """Write a self-describing, bit-exact checkpoint (npz container)."""
    arrays = {f"encoder_{i}": w for i, w in enumerate(params.encoder_weights)}
    arrays["decoder"] = params.decoder_weight
    arrays["wip"] = params.wip_weight
    header = {
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_json(),
        "num_encoder_weights": len(params.encoder_weights),
        "meta": meta or {},
    }
    buf = io.BytesIO()
    np.savez(buf, header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, ModelParams, dict]:
    with np.load(path) as zf:
        header = json.loads(bytes(zf["header"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version: {header.get('version')}")
        cfg = ModelConfig.from_json(header["config"])
        enc = [zf[f"encoder_{i}"] for i in range(header["num_encoder_weights"])]
        params = ModelParams(
            encoder_weights=enc, decoder_weight=zf["decoder"], wip_weight=zf["wip"]
        )
    return cfg, params, header.get("meta", {})
