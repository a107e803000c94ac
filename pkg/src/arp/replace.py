"""Replacement training: binarized per-element indicators with hysteresis.

Each activation element carries a binary indicator m (1 = keep ReLU,
0 = polynomial) derived from a real auxiliary parameter m_w.  The auxiliary
parameters descend on a surrogate gradient (softplus STE) of the task loss
plus a count penalty that is active only while the global ReLU count exceeds
the budget.  After every update the indicators are re-derived through a
two-threshold hysteresis rule so that small fluctuations of m_w around zero
cannot flip them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .dapa import ChannelStats, PolyCoeffs, channelwise_coeffs
from .nn import Adam, AdamArray, Sequential, cosine_lr, loss_cross_entropy

__all__ = [
    "IndicatorState",
    "ReplacementConfig",
    "HybridActivation",
    "ReplacementPlan",
    "TrainHistory",
    "ste_softplus_grad",
    "apply_hysteresis",
    "hysteresis_step",
    "acc_grad_aux",
    "penalty_grad_aux",
    "count_relu",
    "refresh_coeffs",
    "hybrid_forward",
    "train_supervised",
    "train_replace",
    "evaluate",
]


def ste_softplus_grad(m_w: np.ndarray) -> np.ndarray:
    """Surrogate derivative of the binarization: softplus' = sigmoid."""
    return expit(np.asarray(m_w, dtype=np.float64))


@dataclass
class IndicatorState:
    """Per-element indicator m, auxiliary parameter m_w, hysteresis threshold."""

    m: np.ndarray
    m_w: np.ndarray
    t_h: float

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=np.float64)
        self.m_w = np.asarray(self.m_w, dtype=np.float64)
        if self.m.shape != self.m_w.shape:
            raise ValueError("m and m_w must share one shape")
        if self.t_h < 0:
            raise ValueError("hysteresis threshold must be >= 0")

    @classmethod
    def all_relu(cls, shape, t_h: float = 0.003, m_w_init: float = 0.1) -> "IndicatorState":
        return cls(np.ones(shape), np.full(shape, m_w_init), t_h)


def count_relu(state: IndicatorState) -> int:
    return int(np.sum(state.m == 1))


def apply_hysteresis(m: np.ndarray, m_w: np.ndarray, t_h: float) -> np.ndarray:
    """Re-derive indicators: a 1 survives until m_w <= -t_h, a 0 until m_w > +t_h.

    At t_h = 0 both rows collapse to the plain sign rule m = [m_w > 0].
    """
    return np.where(m == 1, m_w > -t_h, m_w > t_h).astype(np.float64)


def hysteresis_step(state: IndicatorState, grad: np.ndarray,
                    opt: AdamArray | None = None, lr: float = 1e-3) -> IndicatorState:
    """Descend m_w on the surrogate gradient, then re-derive m."""
    if grad.shape != state.m_w.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match {state.m_w.shape}")
    m_w = opt.update(state.m_w, grad) if opt is not None else state.m_w - lr * grad
    return IndicatorState(apply_hysteresis(state.m, m_w, state.t_h), m_w, state.t_h)


def acc_grad_aux(dl_dx: np.ndarray, z: np.ndarray, act: "HybridActivation") -> np.ndarray:
    """Task-loss gradient piece for m_w: dL/dX * (relu(Z) - poly(Z)) * sigmoid(m_w).

    Elementwise over the batch; either sign is reachable, which is what makes
    replaced elements recoverable.  The caller reduces over the batch axis.
    """
    if dl_dx.shape != z.shape:
        raise ValueError("dL/dX and Z shapes differ")
    gap = np.maximum(z, 0.0) - act.poly(z)
    return dl_dx * gap * ste_softplus_grad(act.indicator.m_w)


def penalty_grad_aux(state: IndicatorState, mu_effective: float, over_budget: bool) -> np.ndarray:
    """Count-penalty gradient: mu * sigmoid(m_w) while over budget, else exactly zero."""
    if not over_budget:
        return np.zeros_like(state.m_w)
    return mu_effective * ste_softplus_grad(state.m_w)


class HybridActivation:
    """Activation layer mixing ReLU and a fitted polynomial per element.

    Tracks channel-wise running statistics of its pre-activations and caches
    what the backward pass and the indicator gradients need.
    """

    def __init__(self, feat_shape, channel_axis: int = 0, degree: int = 2,
                 t_h: float = 0.003, m_w_init: float = 0.1):
        self.feat_shape = tuple(feat_shape)
        self.channel_axis = channel_axis
        self.degree = degree
        channels = self.feat_shape[channel_axis]
        self.indicator = IndicatorState.all_relu(self.feat_shape, t_h, m_w_init)
        self.stats = ChannelStats(channels)
        # identity polynomial until the first refresh
        eye = np.zeros((channels, degree + 1))
        eye[:, 1] = 1.0
        self.coeffs = PolyCoeffs(eye)
        self._z = None
        self.last_dldx = None

    def params(self):
        return []

    def _cast(self, per_channel: np.ndarray, z_ndim: int) -> np.ndarray:
        """Reshape a (channels,) vector to broadcast over (batch,) + feat_shape."""
        shape = [1] * z_ndim
        shape[1 + self.channel_axis] = -1
        return per_channel.reshape(shape)

    def poly(self, z: np.ndarray) -> np.ndarray:
        out = np.zeros_like(z)
        for i in range(self.degree, -1, -1):
            out = out * z + self._cast(self.coeffs.term(i), z.ndim)
        return out

    def poly_deriv(self, z: np.ndarray) -> np.ndarray:
        out = np.zeros_like(z)
        for i in range(self.degree, 0, -1):
            out = out * z + i * self._cast(self.coeffs.term(i), z.ndim)
        return out

    def forward(self, z: np.ndarray, training: bool = False) -> np.ndarray:
        if z.shape[1:] != self.feat_shape:
            raise ValueError(f"activation expects {self.feat_shape}, got {z.shape[1:]}")
        if training:
            self.stats.update(z, channel_axis=1 + self.channel_axis)
        self._z = z
        m = self.indicator.m
        return m * np.maximum(z, 0.0) + (1.0 - m) * self.poly(z)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        self.last_dldx = dy
        m = self.indicator.m
        return dy * (m * (self._z > 0) + (1.0 - m) * self.poly_deriv(self._z))

    def indicator_grad(self) -> np.ndarray:
        """Batch-reduced task gradient for m_w from the cached backward pass."""
        return acc_grad_aux(self.last_dldx, self._z, self).sum(axis=0)


def hybrid_forward(z: np.ndarray, act: HybridActivation, training: bool = False) -> np.ndarray:
    return act.forward(z, training=training)


def refresh_coeffs(act: HybridActivation) -> HybridActivation:
    """Re-fit the polynomial to current running stats; idempotent for fixed stats."""
    act.coeffs = channelwise_coeffs(act.stats, act.degree)
    return act


# ---- training loops -------------------------------------------------------------


@dataclass
class ReplacementConfig:
    relu_budget: int
    mu: float = 1.0  # normalized: effective penalty is mu / total activation elements
    lr_indicator: float = 1e-3
    lr_weights: float = 1e-4
    epochs: int = 40
    t_h: float = 0.003
    batch_size: int = 64
    seed: int = 0
    log_transitions: bool = False
    # convergence tail: if the budget is unmet when the schedule ends, keep
    # training with a geometrically escalating penalty until it is
    tail_epochs: int = 60
    tail_escalation: float = 2.0

    def validate(self, total_elements: int) -> None:
        if self.relu_budget < 0:
            raise ValueError("budget must be non-negative")
        if self.relu_budget > total_elements:
            raise ValueError(
                f"budget {self.relu_budget} exceeds {total_elements} activation elements"
            )
        if self.lr_indicator <= 0 or self.lr_weights <= 0:
            raise ValueError("learning rates must be positive")
        if self.mu <= 0:
            raise ValueError("penalty must be positive")


@dataclass
class ReplacementPlan:
    masks: list
    coeffs: list
    relu_count: int
    budget: int


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)  # dicts: epoch, accuracy, relu_count, flips
    transitions: list = field(default_factory=list)  # (m_before, m_w_after, m_after) per step

    def to_csv(self) -> str:
        lines = ["epoch,accuracy,relu_count,flips"]
        for row in self.epochs:
            lines.append(f"{row['epoch']},{row['accuracy']:.6f},{row['relu_count']},{row['flips']}")
        return "\n".join(lines) + "\n"


def evaluate(model: Sequential, x: np.ndarray, y: np.ndarray, batch_size: int = 256) -> float:
    hits = 0
    for i in range(0, len(x), batch_size):
        logits = model.forward(x[i : i + batch_size], training=False)
        hits += int(np.sum(np.argmax(logits, axis=1) == y[i : i + batch_size]))
    return hits / len(x)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def train_supervised(model: Sequential, x: np.ndarray, y: np.ndarray, *, epochs: int = 100,
                     lr: float = 1e-3, batch_size: int = 64, seed: int = 0,
                     optimizer: str = "adam", momentum: float = 0.9) -> Sequential:
    """Plain baseline training; indicators stay all-ReLU, stats warm up."""
    from .nn import SGD

    rng = np.random.default_rng(seed)
    if optimizer == "adam":
        opt = Adam(model.params(), lr=lr)
    else:
        opt = SGD(model.params(), lr=lr, momentum=momentum)
    total = epochs * max(1, (len(x) + batch_size - 1) // batch_size)
    step = 0
    for _ in range(epochs):
        for idx in _batches(len(x), batch_size, rng):
            logits = model.forward(x[idx], training=True)
            _, dlog = loss_cross_entropy(logits, y[idx])
            model.backward(dlog)
            opt.lr = cosine_lr(lr, step, total)
            opt.step()
            step += 1
    return model


def train_replace(model: Sequential, train_data, cfg: ReplacementConfig,
                  eval_data=None) -> tuple[Sequential, ReplacementPlan, TrainHistory]:
    """Jointly train weights and indicators until the budget is met.

    Weights descend on the task loss with the indicators frozen within the
    step; indicators descend on the task plus count-penalty surrogate
    gradients with a hysteresis re-derivation per iteration.  Polynomial
    coefficients are re-fitted from running stats once per epoch and treated
    as constants in between.  Both learning rates follow cosine decay.

    If the scheduled epochs end with the count still over budget (a constant
    penalty can stall against persistently useful ReLUs), a bounded tail
    keeps training with the penalty doubled each extra epoch until the count
    drops to the budget; the tail stops at the first feasible iteration.
    """
    x, y = train_data
    if len(x) == 0:
        raise ValueError("empty dataset")
    ex, ey = eval_data if eval_data is not None else (x, y)
    acts = model.hybrid_layers()
    total_elements = sum(int(np.prod(a.feat_shape)) for a in acts)
    cfg.validate(total_elements)
    for a in acts:
        a.indicator = IndicatorState(a.indicator.m, a.indicator.m_w, cfg.t_h)
    mu_eff = cfg.mu / total_elements

    rng = np.random.default_rng(cfg.seed)
    w_opt = Adam(model.params(), lr=cfg.lr_weights)
    i_opts = [AdamArray(lr=cfg.lr_indicator) for _ in acts]
    history = TrainHistory()
    steps_per_epoch = max(1, (len(x) + cfg.batch_size - 1) // cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    step = 0

    def count() -> int:
        return sum(count_relu(a.indicator) for a in acts)

    def one_epoch(epoch: int, w_lr: float, i_lr: float, boost: float, stop_when_met: bool) -> int:
        nonlocal step
        flips = 0
        for idx in _batches(len(x), cfg.batch_size, rng):
            logits = model.forward(x[idx], training=True)
            _, dlog = loss_cross_entropy(logits, y[idx])
            model.backward(dlog)
            w_opt.lr = w_lr if boost > 1 else cosine_lr(cfg.lr_weights, step, total_steps)
            w_opt.step()

            over = count() > cfg.relu_budget
            for a, opt in zip(acts, i_opts):
                opt.lr = i_lr if boost > 1 else cosine_lr(cfg.lr_indicator, step, total_steps)
                grad = a.indicator_grad() + penalty_grad_aux(a.indicator, mu_eff * boost, over)
                before = a.indicator.m
                a.indicator = hysteresis_step(a.indicator, grad, opt)
                flips += int(np.sum(a.indicator.m != before))
                if cfg.log_transitions:
                    history.transitions.append(
                        (before.copy(), a.indicator.m_w.copy(), a.indicator.m.copy(), cfg.t_h)
                    )
            step += 1
            if stop_when_met and count() <= cfg.relu_budget:
                break
        for a in acts:
            refresh_coeffs(a)
        history.epochs.append({
            "epoch": epoch,
            "accuracy": evaluate(model, ex, ey),
            "relu_count": count(),
            "flips": flips,
        })
        return flips

    for epoch in range(cfg.epochs):
        one_epoch(epoch, cfg.lr_weights, cfg.lr_indicator, boost=1.0, stop_when_met=False)

    boost = cfg.tail_escalation
    for extra in range(cfg.tail_epochs):
        if count() <= cfg.relu_budget:
            break
        one_epoch(cfg.epochs + extra, 0.1 * cfg.lr_weights, cfg.lr_indicator,
                  boost=boost, stop_when_met=True)
        boost = min(boost * cfg.tail_escalation, 1e9)
    if count() > cfg.relu_budget:
        raise RuntimeError(
            f"replacement did not reach the budget: {count()} > {cfg.relu_budget} "
            f"after {cfg.tail_epochs} tail epochs"
        )

    plan = ReplacementPlan(
        masks=[a.indicator.m.copy() for a in acts],
        coeffs=[a.coeffs.coeffs.copy() for a in acts],
        relu_count=count(),
        budget=cfg.relu_budget,
    )
    return model, plan, history
