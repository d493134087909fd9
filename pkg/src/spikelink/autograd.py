"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough of a tape for a time-unrolled spiking network: dense and
sparse linear maps, elementwise arithmetic, the spiking nonlinearities
with their surrogate derivatives, and fused loss kernels. Each
:class:`Tensor` remembers its parents and a function producing the
parents' gradient contributions; ``backward`` walks the tape in reverse
topological order.

Spiking ops pair a hard forward with a surrogate backward. In relaxed
mode the forward is the continuous relaxation whose true derivative is
the surrogate, so the whole graph becomes finite-difference checkable.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from . import neurons
from .neurons import NeuronConfig
from .sparse import CsrMatrix


class Tensor:
    """Array node on the tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn", "name")

    def __init__(
        self,
        data: np.ndarray,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        grad_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None,
        name: str = "",
    ):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._grad_fn = grad_fn if self.requires_grad else None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad}{tag})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate gradients of this (scalar) tensor into the tape."""
        if not self.requires_grad:
            raise ValueError("backward on a tensor that does not require grad")
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward without seed requires a scalar output")
            seed = np.ones_like(self.data)
        order = _topo_order(self)
        self.grad = np.asarray(seed, dtype=self.data.dtype)
        for node in order:
            if node._grad_fn is None or node.grad is None:
                continue
            contribs = node._grad_fn(node.grad)
            for parent, contrib in zip(node._parents, contribs):
                if contrib is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += contrib


def _topo_order(root: Tensor) -> list[Tensor]:
    """Reverse topological order via iterative post-order DFS."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def parameter(data: np.ndarray, name: str = "") -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True, name=name)


def constant(data: np.ndarray, name: str = "") -> Tensor:
    return Tensor(np.asarray(data), requires_grad=False, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over axes that broadcasting expanded."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise and linear ops ---------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def grad_fn(g):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape))

    return Tensor(out_data, parents=(a, b), grad_fn=grad_fn)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def grad_fn(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return Tensor(out_data, parents=(a, b), grad_fn=grad_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data @ b.data

    def grad_fn(g):
        return (g @ b.data.T, a.data.T @ g)

    return Tensor(out_data, parents=(a, b), grad_fn=grad_fn)


def matmul_nt(a: Tensor, b: Tensor) -> Tensor:
    """a @ b.T without materializing the transpose on the tape."""
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data @ b.data.T

    def grad_fn(g):
        return (g @ b.data, g.T @ a.data)

    return Tensor(out_data, parents=(a, b), grad_fn=grad_fn)


def csr_matmul(op: CsrMatrix, x: Tensor) -> Tensor:
    """Constant CSR operator times a tape tensor (graph propagation)."""
    x = _as_tensor(x)
    mat = op.scipy_csr()
    mat_t = mat.T.tocsr()
    out_data = np.asarray(mat @ x.data, dtype=x.data.dtype)

    def grad_fn(g):
        return (np.asarray(mat_t @ g, dtype=x.data.dtype),)

    return Tensor(out_data, parents=(x,), grad_fn=grad_fn)


def sparse_const_matmul(spikes: sp.spmatrix, w: Tensor) -> Tensor:
    """Constant sparse (binary spike) matrix times a weight tensor.

    The spike side carries no gradient; only the weight side does. Used
    where the spiking input has no trainable ancestors, so the product
    reduces to gathering weight rows.
    """
    w = _as_tensor(w)
    mat = spikes.tocsr()
    mat_t = mat.T.tocsr()
    out_data = np.asarray(mat @ w.data, dtype=w.data.dtype)

    def grad_fn(g):
        return (np.asarray(mat_t @ g, dtype=w.data.dtype),)

    return Tensor(out_data, parents=(w,), grad_fn=grad_fn)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=1)
    widths = [p.data.shape[1] for p in parts]
    splits = np.cumsum(widths)[:-1]

    def grad_fn(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=1))

    return Tensor(out_data, parents=tuple(parts), grad_fn=grad_fn)


def sum_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out_data = np.asarray(x.data.sum())

    def grad_fn(g):
        return (np.broadcast_to(g, x.data.shape).astype(x.data.dtype),)

    return Tensor(out_data, parents=(x,), grad_fn=grad_fn)


# -- spiking nonlinearities ---------------------------------------------------


def fire(u: Tensor, cfg: NeuronConfig, relaxed: bool = False) -> Tensor:
    """Deterministic firing with the rectangular surrogate backward.

    Forward is the Heaviside step (or its clipped-linear relaxation);
    backward multiplies by 1/a inside the window |u - v_th| < a/2.
    """
    u = _as_tensor(u)
    if relaxed:
        out_data = neurons.relaxed_fire(u.data, cfg).astype(u.data.dtype)
    else:
        out_data = neurons.heaviside_fire(u.data, cfg)
    window = neurons.rectangular_surrogate(u.data, cfg)

    def grad_fn(g):
        return (g * window,)

    return Tensor(out_data, parents=(u,), grad_fn=grad_fn)


def fire_prob(u: Tensor, cfg: NeuronConfig) -> Tensor:
    """sigmoid(u - v_th); backward is the sigmoid surrogate."""
    u = _as_tensor(u)
    q = neurons.fire_probability(u.data, cfg).astype(u.data.dtype)

    def grad_fn(g):
        return (g * q * (1.0 - q),)

    return Tensor(q, parents=(u,), grad_fn=grad_fn)


def bernoulli_sample(
    q: Tensor, rng: np.random.Generator | None, relaxed: bool = False
) -> Tensor:
    """Sample spikes from firing probabilities, straight-through backward.

    The sample's pathwise gradient is routed as identity to ``q``; chained
    after :func:`fire_prob` this gives d(z)/d(u) = sigma'(u - v_th). In
    relaxed mode the "sample" is the probability itself, making the
    straight-through path exact.
    """
    q = _as_tensor(q)
    if relaxed:
        out_data = q.data.copy()
    else:
        if rng is None:
            raise ValueError("sampling requires an rng")
        out_data = (rng.random(size=q.data.shape) < q.data).astype(q.data.dtype)

    def grad_fn(g):
        return (g,)

    return Tensor(out_data, parents=(q,), grad_fn=grad_fn)


# -- fused pair scoring and losses -------------------------------------------


def pair_wip(z: Tensor, w: Tensor, src_sel: sp.spmatrix, dst_sel: sp.spmatrix) -> Tensor:
    """Weighted inner product of latent rows for a fixed pair list.

    ``src_sel``/``dst_sel`` are P x N one-hot row selectors (constant for
    an epoch). Returns a length-P vector eta[p] = sum_c w_c z[u_p,c] z[v_p,c].
    """
    z, w = _as_tensor(z), _as_tensor(w)
    zu = np.asarray(src_sel @ z.data)
    zv = np.asarray(dst_sel @ z.data)
    prod = zu * zv
    out_data = prod @ w.data

    def grad_fn(g):
        gw = g[:, None] * w.data[None, :]
        dz = np.asarray(src_sel.T @ (gw * zv)) + np.asarray(dst_sel.T @ (gw * zu))
        dw = g @ prod
        return (dz.astype(z.data.dtype), dw.astype(w.data.dtype))

    return Tensor(out_data, parents=(z, w), grad_fn=grad_fn)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def weighted_bce_with_logits(logits: Tensor, labels: np.ndarray, pos_weight: float = 1.0) -> Tensor:
    """Mean binary cross-entropy from logits, positives scaled by pos_weight.

    Stable for large |logit| via the softplus form:
    loss = pos_weight * y * softplus(-eta) + (1 - y) * softplus(eta).
    """
    logits = _as_tensor(logits)
    y = np.asarray(labels, dtype=logits.data.dtype)
    eta = logits.data
    per_elem = pos_weight * y * _softplus(-eta) + (1.0 - y) * _softplus(eta)
    count = max(eta.size, 1)
    out_data = np.asarray(per_elem.sum(dtype=np.float64) / count, dtype=logits.data.dtype)
    sig = neurons.sigmoid(eta)

    def grad_fn(g):
        d = (-pos_weight * y * (1.0 - sig) + (1.0 - y) * sig) / count
        return ((g * d).astype(logits.data.dtype),)

    return Tensor(out_data, parents=(logits,), grad_fn=grad_fn)


def bernoulli_kl_sum(z: Tensor, q: Tensor, prior: float, eps: float = 1e-7) -> Tensor:
    """Sum over elements of z*log(q/pi) + (1-z)*log((1-q)/(1-pi)).

    ``q`` is clamped to [eps, 1-eps] before the logs; gradient flows to
    both the sampled latents and the firing probabilities.
    """
    z, q = _as_tensor(z), _as_tensor(q)
    if not (0.0 < prior < 1.0):
        raise ValueError("prior must lie strictly inside (0, 1)")
    qc = np.clip(q.data, eps, 1.0 - eps)
    inside = (q.data > eps) & (q.data < 1.0 - eps)
    log_q_ratio = np.log(qc) - np.log(prior)
    log_1q_ratio = np.log1p(-qc) - np.log1p(-prior)
    per_elem = z.data * log_q_ratio + (1.0 - z.data) * log_1q_ratio
    out_data = np.asarray(per_elem.sum(dtype=np.float64), dtype=q.data.dtype)

    def grad_fn(g):
        dq = g * (z.data / qc - (1.0 - z.data) / (1.0 - qc)) * inside
        dz = g * (log_q_ratio - log_1q_ratio)
        return (dz.astype(z.data.dtype), dq.astype(q.data.dtype))

    return Tensor(out_data, parents=(z, q), grad_fn=grad_fn)
