"""Loss, optimizers, and the training loop.

The loss is a weighted reconstruction cross-entropy over node pairs plus
a KL regularizer pulling the decoder's firing probabilities toward a
sparse Bernoulli prior. Reconstruction is dense (all N^2 pairs,
positives re-weighted) on small graphs and positive-plus-sampled-negative
above ``dense_pair_limit``. The KL contribution is divided by the number
of reconstruction pair terms so the two terms keep the ratio of the
plain summed objective regardless of graph size.

Gradients come from the tape built during the forward pass; spiking
nonlinearities backpropagate through their surrogate windows, including
the soft-reset pathway of the membrane recurrence.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .data import (
    EdgeSplit,
    GraphDataset,
    build_normalized_operator,
    edge_key_set,
    normalize_features,
    sample_training_negatives,
)
from .metrics import MetricReport, auc, average_precision
from .model import (
    ForwardTrace,
    GraphEncoding,
    ModelConfig,
    ModelParams,
    encode_graph,
    full_forward,
    init_params,
)
from .neurons import sigmoid


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the epoch and offending component."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    max_epochs: int = 300
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    kl_weight: float = 1.0
    neg_sampling_ratio: int = 1
    dense_pair_limit: int = 5000
    patience: int = 50
    seed: int = 1
    feature_mode: str = "binarize"

    def __post_init__(self) -> None:
        if not (0.001 <= self.learning_rate <= 0.05):
            raise ValueError(
                f"learning_rate must lie in [0.001, 0.05], got {self.learning_rate}"
            )
        if not (1 <= self.max_epochs <= 500):
            raise ValueError(f"max_epochs must lie in [1, 500], got {self.max_epochs}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.kl_weight < 0:
            raise ValueError("kl_weight must be >= 0")
        if self.neg_sampling_ratio < 1:
            raise ValueError("neg_sampling_ratio must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.feature_mode not in ("binarize", "minmax-per-feature", "none"):
            raise ValueError(f"unknown feature_mode: {self.feature_mode!r}")

    def to_json(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "max_epochs": self.max_epochs,
            "optimizer": self.optimizer,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "kl_weight": self.kl_weight,
            "neg_sampling_ratio": self.neg_sampling_ratio,
            "dense_pair_limit": self.dense_pair_limit,
            "patience": self.patience,
            "seed": self.seed,
            "feature_mode": self.feature_mode,
        }

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class LossBreakdown:
    recon: float
    kl: float
    total: float

    def finite(self) -> bool:
        return all(np.isfinite(v) for v in (self.recon, self.kl, self.total))


# -- loss terms ----------------------------------------------------------------


def reconstruction_loss(
    logits: ag.Tensor, labels: np.ndarray, pos_weight: float = 1.0
) -> ag.Tensor:
    """Mean weighted binary cross-entropy over the scored pairs."""
    return ag.weighted_bce_with_logits(logits, labels, pos_weight)


def kl_term(z_steps: list[ag.Tensor], q_steps: list[ag.Tensor], prior: float) -> ag.Tensor:
    """Prior divergence summed over nodes and channels, averaged over steps."""
    if len(z_steps) != len(q_steps) or not z_steps:
        raise ValueError("need matching, non-empty z and fire-probability traces")
    acc = None
    for z, q in zip(z_steps, q_steps):
        term = ag.bernoulli_kl_sum(z, q, prior)
        acc = term if acc is None else ag.add(acc, term)
    return ag.mul(acc, 1.0 / len(z_steps))


def build_loss(
    trace: ForwardTrace,
    labels: np.ndarray,
    pos_weight: float,
    kl_weight: float,
    prior: float,
    pair_norm: int,
) -> tuple[ag.Tensor, LossBreakdown]:
    logits = trace.dense_logits if trace.dense_logits is not None else trace.pair_logits
    if logits is None:
        raise ValueError("forward trace carries no logits to reconstruct from")
    recon = reconstruction_loss(logits, labels, pos_weight)
    kl_scaled = ag.mul(kl_term(trace.z_steps, trace.q_steps, prior), 1.0 / pair_norm)
    total = ag.add(recon, ag.mul(kl_scaled, kl_weight))
    breakdown = LossBreakdown(
        recon=float(recon.data), kl=float(kl_scaled.data), total=float(total.data)
    )
    return total, breakdown


def backward(trace: ForwardTrace, loss: ag.Tensor) -> dict[str, np.ndarray]:
    """Run the tape backward and collect per-parameter gradients."""
    loss.backward()
    grads = {}
    for name, tensor in trace.param_tensors.items():
        grads[name] = (
            tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        )
    return grads


# -- optimizers -----------------------------------------------------------------


class SgdOptimizer:
    """Plain W <- W - lr * grad."""

    def __init__(self, lr: float):
        self.lr = lr
        self.step_count = 0

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        for name, w in params.items():
            g = grads[name]
            _check_grad_finite(name, g)
            w -= (self.lr * g).astype(w.dtype)


class AdamOptimizer:
    """First/second-moment adaptive update with bias correction."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        for name, w in params.items():
            g = grads[name].astype(np.float64)
            _check_grad_finite(name, g)
            m = self._m.setdefault(name, np.zeros(w.shape, dtype=np.float64))
            v = self._v.setdefault(name, np.zeros(w.shape, dtype=np.float64))
            m += (1 - self.beta1) * (g - m)
            v += (1 - self.beta2) * (g * g - v)
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            w -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(w.dtype)


def _check_grad_finite(name: str, g: np.ndarray) -> None:
    if not np.all(np.isfinite(g)):
        raise TrainingDiverged(f"non-finite gradient for parameter {name!r}")


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SgdOptimizer(cfg.learning_rate)
    return AdamOptimizer(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)


def optimizer_step(optimizer, params: ModelParams, grads: dict[str, np.ndarray]) -> ModelParams:
    """Apply one update in place; returns the same params for convenience."""
    optimizer.step(params, grads)
    return params


# -- training loop ----------------------------------------------------------------


@dataclass
class TrainResult:
    params: ModelParams
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    history: list[LossBreakdown]
    epoch_records: list[dict]
    best_epoch: int
    best_val_auc: float
    test_auc: float
    test_ap: float
    spike_rates: dict[str, float]
    wall_time_s: float
    encoding: GraphEncoding = field(repr=False, default=None)  # type: ignore[assignment]
    operator: object = field(repr=False, default=None)


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(list(key))


def _pair_scores(trace: ForwardTrace) -> np.ndarray:
    return sigmoid(trace.pair_logits.data.astype(np.float64))


def _dense_labels(num_nodes: int, edges: np.ndarray, dtype) -> np.ndarray:
    labels = np.zeros((num_nodes, num_nodes), dtype=dtype)
    labels[edges[:, 0], edges[:, 1]] = 1
    labels[edges[:, 1], edges[:, 0]] = 1
    np.fill_diagonal(labels, 1)
    return labels


def evaluate_pairs(
    operator,
    encoding: GraphEncoding,
    params: ModelParams,
    model_cfg: ModelConfig,
    pairs: np.ndarray,
    rng: np.random.Generator,
    record_wip_pairs: bool = False,
) -> tuple[np.ndarray, ForwardTrace]:
    """Fresh stochastic forward scoring the given pairs."""
    trace = full_forward(
        operator,
        encoding,
        params,
        model_cfg,
        rng,
        mode="eval",
        pairs=pairs,
        record_wip_pairs=record_wip_pairs,
    )
    return _pair_scores(trace), trace


def train(
    dataset: GraphDataset,
    split: EdgeSplit,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    log_path: str | Path | None = None,
    progress=None,
) -> TrainResult:
    """Full training run on the split's training graph.

    Keeps the checkpoint with the best validation AUC (early stopping
    after ``patience`` epochs without improvement) and reports test
    metrics for that checkpoint. Writes one JSON line per epoch to
    ``log_path`` when given.
    """
    t_start = time.perf_counter()
    n = dataset.num_nodes
    seed = train_cfg.seed

    features01 = normalize_features(dataset, train_cfg.feature_mode)
    operator = build_normalized_operator(n, split.train_pos)
    encoding = encode_graph(operator, features01, model_cfg, _rng(seed, 1))
    params = init_params(dataset.feature_dim, model_cfg, _rng(seed, 2))

    dense = n <= train_cfg.dense_pair_limit
    dtype = model_cfg.np_dtype
    if dense:
        labels = _dense_labels(n, split.train_pos, dtype)
        n_positive = int(labels.sum())
        pos_weight = (labels.size - n_positive) / n_positive
        pair_norm = labels.size
    else:
        train_keys = edge_key_set(split.train_pos, n)
        n_pos = split.train_pos.shape[0]
        n_neg = n_pos * train_cfg.neg_sampling_ratio
        pos_weight = float(train_cfg.neg_sampling_ratio)
        pair_norm = n_pos + n_neg

    val_pairs = np.concatenate([split.val_pos, split.val_neg])
    val_labels = np.concatenate(
        [np.ones(len(split.val_pos)), np.zeros(len(split.val_neg))]
    )

    optimizer = make_optimizer(train_cfg)
    history: list[LossBreakdown] = []
    records: list[dict] = []
    best_val = -1.0
    best_epoch = 0
    best_params = params.copy()
    log_file = open(log_path, "w") if log_path is not None else None

    try:
        for epoch in range(1, train_cfg.max_epochs + 1):
            t0 = time.perf_counter()
            rng_epoch = _rng(seed, 3, epoch)
            if dense:
                trace = full_forward(
                    operator, encoding, params, model_cfg, rng_epoch,
                    mode="train", dense_pairs=True,
                )
                epoch_labels = labels
            else:
                negs = sample_training_negatives(n, n_neg, train_keys, _rng(seed, 4, epoch))
                pairs = np.concatenate([split.train_pos, negs])
                trace = full_forward(
                    operator, encoding, params, model_cfg, rng_epoch,
                    mode="train", pairs=pairs,
                )
                epoch_labels = np.concatenate(
                    [np.ones(n_pos, dtype=dtype), np.zeros(n_neg, dtype=dtype)]
                )

            loss, breakdown = build_loss(
                trace, epoch_labels, pos_weight, train_cfg.kl_weight,
                model_cfg.prior_pi, pair_norm,
            )
            if not breakdown.finite():
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}: recon={breakdown.recon}, "
                    f"kl={breakdown.kl}"
                )
            grads = backward(trace, loss)
            optimizer.step(params, grads)

            val_scores, _ = evaluate_pairs(
                operator, encoding, params, model_cfg, val_pairs, _rng(seed, 5, epoch)
            )
            val_auc = auc(val_scores[val_labels == 1], val_scores[val_labels == 0])

            history.append(breakdown)
            record = {
                "epoch": epoch,
                "recon": breakdown.recon,
                "kl": breakdown.kl,
                "total": breakdown.total,
                "val_auc": val_auc,
                "spike_rate_per_layer": [
                    {"layer": k, "rate": v} for k, v in trace.spike_rate_per_layer().items()
                ],
                "wall_ms": (time.perf_counter() - t0) * 1e3,
            }
            records.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
            if progress is not None:
                progress(record)

            if val_auc > best_val:
                best_val = val_auc
                best_epoch = epoch
                best_params = params.copy()
            elif epoch - best_epoch >= train_cfg.patience:
                break
    finally:
        if log_file is not None:
            log_file.close()

    test_pairs = np.concatenate([split.test_pos, split.test_neg])
    test_labels = np.concatenate(
        [np.ones(len(split.test_pos)), np.zeros(len(split.test_neg))]
    )
    test_scores, _ = evaluate_pairs(
        operator, encoding, best_params, model_cfg, test_pairs, _rng(seed, 9)
    )
    test_auc = auc(test_scores[test_labels == 1], test_scores[test_labels == 0])
    test_ap = average_precision(test_scores, test_labels)

    return TrainResult(
        params=best_params,
        model_cfg=model_cfg,
        train_cfg=train_cfg,
        history=history,
        epoch_records=records,
        best_epoch=best_epoch,
        best_val_auc=best_val,
        test_auc=test_auc,
        test_ap=test_ap,
        spike_rates=(
            {e["layer"]: e["rate"] for e in records[best_epoch - 1]["spike_rate_per_layer"]}
            if records
            else {}
        ),
        wall_time_s=time.perf_counter() - t_start,
        encoding=encoding,
        operator=operator,
    )


def run_seeds(
    dataset: GraphDataset,
    split: EdgeSplit,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    seeds: list[int],
    log_dir: str | Path | None = None,
    progress=None,
) -> tuple[MetricReport, list[TrainResult]]:
    """Independent runs over the given seeds, aggregated into a report."""
    results = []
    for s in seeds:
        cfg_s = TrainConfig.from_json({**train_cfg.to_json(), "seed": int(s)})
        log_path = None
        if log_dir is not None:
            log_path = Path(log_dir) / f"train_seed{s}.jsonl"
        results.append(
            train(dataset, split, model_cfg, cfg_s, log_path=log_path, progress=progress)
        )
    report = MetricReport(
        dataset=dataset.name,
        seeds=[int(s) for s in seeds],
        auc_values=[r.test_auc for r in results],
        ap_values=[r.test_ap for r in results],
    )
    return report, results
