"""Spiking neuron primitives.

The encoder uses leaky integrate-and-fire (LIF) units with a soft reset:

    u[t] = tau * (u[t-1] - o[t-1] * v_th) + x[t]
    o[t] = 1  if u[t] >= v_th  else 0

Backpropagation through the Heaviside firing uses a rectangular
surrogate, (1/a) inside the window |u - v_th| < a/2 and 0 outside. The
decoder uses probabilistic units that fire with probability
sigmoid(u - v_th); their surrogate is the sigmoid derivative.

"Relaxed" mode replaces the hard nonlinearities with their continuous
counterparts (a clipped-linear ramp for the deterministic unit, the
firing probability itself for the probabilistic unit). The surrogate
derivatives are the exact derivatives of these relaxations almost
everywhere, which is what makes finite-difference gradient checks of the
relaxed network meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DETERMINISTIC = "deterministic"
PROBABILISTIC = "probabilistic"
RELAXED = "relaxed"


@dataclass(frozen=True)
class NeuronConfig:
    """Shared neuron hyperparameters.

    tau       membrane decay in [0, 1); 0 is memoryless
    v_th      firing threshold (> 0)
    surrogate_width  width `a` of the rectangular surrogate window (> 0)
    tau_out   decay of the non-firing readout accumulator in (0, 1]
    """

    tau: float = 0.25
    v_th: float = 0.2
    surrogate_width: float = 1.0
    tau_out: float = 0.8

    def __post_init__(self) -> None:
        if not (0.0 <= self.tau < 1.0):
            raise ValueError(f"tau must be in [0, 1), got {self.tau}")
        if not (0.0 < self.tau_out <= 1.0):
            raise ValueError(f"tau_out must be in (0, 1], got {self.tau_out}")
        if self.v_th <= 0.0:
            raise ValueError(f"v_th must be > 0, got {self.v_th}")
        if self.surrogate_width <= 0.0:
            raise ValueError(f"surrogate_width must be > 0, got {self.surrogate_width}")


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64) if np.asarray(x).dtype.kind != "f" else np.asarray(x)
    out = np.empty_like(x, dtype=x.dtype)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def heaviside_fire(u: np.ndarray, cfg: NeuronConfig) -> np.ndarray:
    """Binary spikes; fires at threshold (u >= v_th)."""
    return (np.asarray(u) >= cfg.v_th).astype(np.asarray(u).dtype)


def rectangular_surrogate(u: np.ndarray, cfg: NeuronConfig) -> np.ndarray:
    """d(spike)/d(membrane) stand-in: 1/a inside |u - v_th| < a/2, else 0."""
    a = cfg.surrogate_width
    u = np.asarray(u)
    return (np.abs(u - cfg.v_th) < a / 2).astype(u.dtype) / a


def relaxed_fire(u: np.ndarray, cfg: NeuronConfig) -> np.ndarray:
    """Continuous firing in [0, 1]: clamp((u - v_th)/a + 1/2, 0, 1).

    Its exact derivative equals :func:`rectangular_surrogate` everywhere
    except the two clip points.
    """
    a = cfg.surrogate_width
    u = np.asarray(u)
    return np.clip((u - cfg.v_th) / a + 0.5, 0.0, 1.0)


def fire_probability(u: np.ndarray, cfg: NeuronConfig) -> np.ndarray:
    """Probabilistic unit firing probability sigmoid(u - v_th)."""
    return sigmoid(np.asarray(u) - cfg.v_th)


def sigmoid_surrogate(u: np.ndarray, cfg: NeuronConfig) -> np.ndarray:
    """Sigmoid-derivative surrogate sigma'(u - v_th)."""
    s = fire_probability(u, cfg)
    return s * (1.0 - s)


class LifLayer:
    """A layer of LIF units unrolled over time, retaining traces.

    ``kind`` is "deterministic" (Heaviside firing) or "probabilistic"
    (Bernoulli firing at probability sigmoid(u - v_th)); ``relaxed=True``
    swaps in the continuous relaxation of the chosen firing rule. The
    membrane and spike traces of every step stay available for the
    backward pass.
    """

    def __init__(self, cfg: NeuronConfig, kind: str = DETERMINISTIC, relaxed: bool = False):
        if kind not in (DETERMINISTIC, PROBABILISTIC):
            raise ValueError(f"unknown neuron kind: {kind!r}")
        self.cfg = cfg
        self.kind = kind
        self.relaxed = relaxed
        self.membranes: list[np.ndarray] = []
        self.spikes: list[np.ndarray] = []
        self.fire_probs: list[np.ndarray] = []  # probabilistic kind only
        self._u: np.ndarray | float = 0.0
        self._o: np.ndarray | float = 0.0

    @property
    def mode(self) -> str:
        return RELAXED if self.relaxed else self.kind

    def reset(self) -> None:
        self.membranes.clear()
        self.spikes.clear()
        self.fire_probs.clear()
        self._u = 0.0
        self._o = 0.0

    def step(self, x_t: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        """Advance one time step with pre-synaptic input ``x_t``.

        Starts from u = 0, o = 0. Raises on non-finite input; requires an
        rng for the (non-relaxed) probabilistic kind.
        """
        x_t = np.asarray(x_t)
        if not np.all(np.isfinite(x_t)):
            raise ValueError("non-finite pre-synaptic input")
        cfg = self.cfg
        u = cfg.tau * (self._u - self._o * cfg.v_th) + x_t
        if self.kind == DETERMINISTIC:
            o = relaxed_fire(u, cfg) if self.relaxed else heaviside_fire(u, cfg)
        else:
            q = fire_probability(u, cfg)
            self.fire_probs.append(q)
            if self.relaxed:
                o = q
            else:
                if rng is None:
                    raise ValueError("probabilistic LIF requires an rng")
                o = (rng.random(size=q.shape) < q).astype(u.dtype)
        self.membranes.append(u)
        self.spikes.append(o)
        self._u = u
        self._o = o
        return o

    def surrogate_grads(self) -> list[np.ndarray]:
        """Per-step d(spike)/d(membrane) from the stored membranes."""
        fn = rectangular_surrogate if self.kind == DETERMINISTIC else sigmoid_surrogate
        return [fn(u, self.cfg) for u in self.membranes]


def lif_step(
    state: LifLayer,
    x_t: np.ndarray,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Functional alias for :meth:`LifLayer.step`."""
    return state.step(x_t, rng)


def lif_surrogate_grad(u_t: np.ndarray, cfg: NeuronConfig) -> np.ndarray:
    return rectangular_surrogate(u_t, cfg)


def prob_lif_surrogate_grad(u_t: np.ndarray, cfg: NeuronConfig) -> np.ndarray:
    return sigmoid_surrogate(u_t, cfg)


# -- spike trains ----------------------------------------------------------


@dataclass
class SpikeTensor:
    """Binary N x C x T spike train, stored one dense step at a time.

    ``payload`` has shape (T, N, C) with values in {0, 1};
    ``occupancy[t]`` caches the number of ones at step t.
    """

    payload: np.ndarray
    occupancy: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.payload = np.asarray(self.payload)
        if self.payload.ndim != 3:
            raise ValueError("payload must have shape (T, N, C)")
        vals = np.unique(self.payload)
        if not np.isin(vals, (0, 1)).all():
            raise ValueError("spike payload must be binary")
        if self.occupancy is None:
            self.occupancy = np.array(
                [int(np.count_nonzero(self.payload[t])) for t in range(self.payload.shape[0])],
                dtype=np.int64,
            )

    @property
    def shape(self) -> tuple[int, int, int]:
        t, n, c = self.payload.shape
        return (n, c, t)

    @property
    def steps(self) -> int:
        return int(self.payload.shape[0])

    def step(self, t: int) -> np.ndarray:
        return self.payload[t]

    def check_occupancy(self) -> bool:
        actual = np.array(
            [int(np.count_nonzero(self.payload[t])) for t in range(self.steps)], dtype=np.int64
        )
        return bool(np.array_equal(actual, self.occupancy))


def poisson_encode(rates: np.ndarray, steps: int, rng: np.random.Generator) -> SpikeTensor:
    """Rate-encode intensities in [0, 1] as independent Bernoulli spikes.

    Every (node, channel, step) entry fires independently with its rate.
    Deterministic for a fixed generator state.
    """
    rates = np.asarray(rates, dtype=np.float64)
    if rates.size and (rates.min() < 0.0 or rates.max() > 1.0):
        raise ValueError("rates must lie in [0, 1]")
    if steps < 1:
        raise ValueError("need at least one time step")
    draws = rng.random(size=(steps,) + rates.shape)
    return SpikeTensor(payload=(draws < rates).astype(np.uint8))


def readout_accumulate(etas: np.ndarray, cfg: NeuronConfig) -> tuple[np.ndarray, np.ndarray]:
    """Non-firing readout: decayed logit sum and its sigmoid.

    ``etas`` has the time axis first (shape (T, ...)). Returns
    (probability, logit) where logit = sum_t tau_out^(T-t) * eta_t.
    """
    etas = np.asarray(etas, dtype=np.float64)
    if etas.shape[0] < 1:
        raise ValueError("need at least one time step")
    if not np.all(np.isfinite(etas)):
        raise ValueError("non-finite logits")
    steps = etas.shape[0]
    weights = cfg.tau_out ** np.arange(steps - 1, -1, -1, dtype=np.float64)
    logit = np.tensordot(weights, etas, axes=(0, 0))
    return sigmoid(logit), logit


def readout_decay_weights(steps: int, cfg: NeuronConfig, dtype=np.float64) -> np.ndarray:
    """Weights tau_out^(T-t) for t = 1..T."""
    return (cfg.tau_out ** np.arange(steps - 1, -1, -1)).astype(dtype)
