"""Parametric primal-dual training of the routing policy.

Each mini-batch is scored with both actions enumerated, reweighted by the
batch-mean exponential tilts (reward tilted down, cost tilted up), and the
policy takes one gradient-ascent step on the entropy-regularized Lagrangian
while the budget multiplier takes one projected dual step on the tilt-
weighted cost. Checkpoints are scored on a held-out split and the best
feasible one is returned.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    Dataset,
    FeedForwardPolicy,
    LinearPolicy,
    Metrics,
    PolicySpec,
    ValidationError,
    evaluate_policy,
    policy_from_dict,
    policy_to_dict,
    sigmoid,
)
from .reweight import RobustConfig, WeightVector, tilt_weights, uniform_weights
from .saddle import dual_update


class TrainingDivergenceError(RuntimeError):
    """The forward pass or objective became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run.

    The defaults are the reference configuration: 60 epochs of adaptive-
    moment ascent at learning rate 1e-4 with batch size 64, dual step 1e-3,
    and entropy coefficient 0.005.
    """

    budget: float
    beta: float = 0.005
    robust: RobustConfig = field(default_factory=RobustConfig)
    epochs: int = 60
    batch_size: int = 64
    primal_lr: float = 1e-4
    dual_lr: float = 1e-3
    seed: int = 0
    val_fraction: float = 0.1
    lambda_init: float = 0.0
    init_bias: float = 0.0
    policy_kind: str = "linear"
    hidden: tuple[int, ...] = (256, 128, 64)
    optimizer: str = "adam"
    sample_weight_inputs: bool = False
    dual_update_per_epoch: bool = False

    def __post_init__(self):
        if not self.budget > 0:
            raise ValueError(f"budget must be positive, got {self.budget}")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not (self.primal_lr > 0 and self.dual_lr > 0):
            raise ValueError("learning rates must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.lambda_init < 0:
            raise ValueError("lambda_init must be non-negative")
        if self.policy_kind not in ("linear", "feedforward"):
            raise ValueError(f"policy_kind must be linear or feedforward, got {self.policy_kind!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self) -> dict:
        def num(x):
            return "inf" if isinstance(x, float) and math.isinf(x) else x

        return {
            "budget": self.budget,
            "beta": self.beta,
            "robust": {
                "tau_reward": num(self.robust.tau_reward),
                "tau_cost": num(self.robust.tau_cost),
                "delta": self.robust.delta,
                "mode": self.robust.mode,
            },
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "primal_lr": self.primal_lr,
            "dual_lr": self.dual_lr,
            "seed": self.seed,
            "val_fraction": self.val_fraction,
            "lambda_init": self.lambda_init,
            "init_bias": self.init_bias,
            "policy_kind": self.policy_kind,
            "hidden": list(self.hidden),
            "optimizer": self.optimizer,
            "sample_weight_inputs": self.sample_weight_inputs,
            "dual_update_per_epoch": self.dual_update_per_epoch,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def config_from_dict(payload: dict) -> TrainConfig:
    def num(x):
        return math.inf if x == "inf" else x

    robust = payload.get("robust", {})
    return TrainConfig(
        budget=payload["budget"],
        beta=payload.get("beta", 0.005),
        robust=RobustConfig(
            tau_reward=num(robust.get("tau_reward", math.inf)),
            tau_cost=num(robust.get("tau_cost", math.inf)),
            delta=robust.get("delta"),
            mode=robust.get("mode", "racer"),
        ),
        epochs=payload.get("epochs", 60),
        batch_size=payload.get("batch_size", 64),
        primal_lr=payload.get("primal_lr", 1e-4),
        dual_lr=payload.get("dual_lr", 1e-3),
        seed=payload.get("seed", 0),
        val_fraction=payload.get("val_fraction", 0.1),
        lambda_init=payload.get("lambda_init", 0.0),
        init_bias=payload.get("init_bias", 0.0),
        policy_kind=payload.get("policy_kind", "linear"),
        hidden=tuple(payload.get("hidden", (256, 128, 64))),
        optimizer=payload.get("optimizer", "adam"),
        sample_weight_inputs=payload.get("sample_weight_inputs", False),
        dual_update_per_epoch=payload.get("dual_update_per_epoch", False),
    )


@dataclass
class DualState:
    """Budget multiplier with its step size and regularization strength."""

    lam: float = 0.0
    eta: float = 1e-3
    beta: float = 0.005

    def step(self, weighted_cost: float, budget: float) -> None:
        self.lam = dual_update(self.lam, self.eta, weighted_cost, budget, self.beta)


@dataclass(frozen=True)
class Checkpoint:
    epoch: int
    policy: PolicySpec
    metrics: Metrics
    lam: float


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_reward: float
    train_cost: float
    lam: float
    val_accuracy: float
    val_cost: float
    reasoning_fraction: float
    reward_weight_range: tuple[float, float]
    cost_weight_range: tuple[float, float]


@dataclass(frozen=True)
class TrainResult:
    best: Checkpoint
    history: tuple[EpochRecord, ...]
    checkpoints: tuple[Checkpoint, ...]


# ---------------------------------------------------------------------------
# entropy and the objective
# ---------------------------------------------------------------------------

def entropy(p: float) -> float:
    """Binary entropy -p log p - (1-p) log(1-p) in nats, 0 at the boundary."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if p in (0.0, 1.0):
        return 0.0
    return float(-p * math.log(p) - (1.0 - p) * math.log(1.0 - p))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def _entropy_from_logits(u: np.ndarray, p: np.ndarray) -> np.ndarray:
    # H(sigma(u)) = p*softplus(-u) + (1-p)*softplus(u); exact 0 at saturation
    return p * _softplus(-u) + (1.0 - p) * _softplus(u)


def _params(policy: PolicySpec) -> list[np.ndarray]:
    if isinstance(policy, LinearPolicy):
        return [policy.weights.copy(), np.array([policy.bias])]
    if isinstance(policy, FeedForwardPolicy):
        out = []
        for w, b in zip(policy.weights, policy.biases):
            out.append(w.copy())
            out.append(b.copy())
        return out
    raise TypeError(f"{type(policy).__name__} has no trainable parameters")


def _rebuild(policy: PolicySpec, params: Sequence[np.ndarray]) -> PolicySpec:
    if isinstance(policy, LinearPolicy):
        return LinearPolicy(params[0].copy(), float(params[1][0]))
    weights = tuple(p.copy() for p in params[0::2])
    biases = tuple(p.copy() for p in params[1::2])
    return FeedForwardPolicy(weights, biases)


def _forward(params: Sequence[np.ndarray], kind: str, x: np.ndarray):
    if kind == "linear":
        u = x @ params[0] + params[1][0]
        return u, (x,)
    acts = [x]
    h = x
    n_layers = len(params) // 2
    for i in range(n_layers - 1):
        h = np.maximum(h @ params[2 * i].T + params[2 * i + 1], 0.0)
        acts.append(h)
    u = (h @ params[-2].T + params[-1]).ravel()
    return u, tuple(acts)


def _backward(params: Sequence[np.ndarray], kind: str, cache, gu: np.ndarray):
    if kind == "linear":
        (x,) = cache
        return [x.T @ gu, np.array([gu.sum()])]
    acts = cache
    n_layers = len(params) // 2
    grads: list[np.ndarray | None] = [None] * len(params)
    delta = gu[:, None]  # gradient w.r.t. the final pre-activation, shape (B, 1)
    for i in range(n_layers - 1, -1, -1):
        grads[2 * i] = delta.T @ acts[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params[2 * i]) * (acts[i] > 0)
    return grads


def _policy_kind(policy: PolicySpec) -> str:
    return "linear" if isinstance(policy, LinearPolicy) else "feedforward"


def batch_objective(policy: PolicySpec, batch: Dataset, weights_r: WeightVector,
                    weights_c: WeightVector, dual: DualState):
    """Reweighted, entropy-regularized batch objective and its gradient.

    value = mean_i[ wr_i * E_pi[r] - lambda * wc_i * E_pi[c] + beta * H(pi) ]
    with the action expectation enumerated exactly. The tilt weights are
    treated as constants: no gradient flows through them.
    """
    wr = weights_r.weights
    wc = weights_c.weights
    if wr.shape[0] != len(batch) or wc.shape[0] != len(batch):
        raise ValueError("weight vectors must align with the batch")
    kind = _policy_kind(policy)
    params = _params(policy)
    value, grads, _ = _objective_on_params(
        params, kind, batch.features, batch.correct, batch.cost, wr, wc,
        dual.lam, dual.beta,
    )
    return value, grads


def _objective_on_params(params, kind, x, correct, cost, wr, wc, lam, beta,
                         where: str = "batch"):
    n = x.shape[0]
    u, cache = _forward(params, kind, x)
    if not np.all(np.isfinite(u)):
        bad = int(np.argmax(~np.isfinite(u)))
        raise TrainingDivergenceError(f"non-finite logit at {where} index {bad}")
    p = sigmoid(u)
    dr = correct[:, 1] - correct[:, 0]
    dc = cost[:, 1] - cost[:, 0]
    exp_r = correct[:, 0] + p * dr
    exp_c = cost[:, 0] + p * dc
    ent = _entropy_from_logits(u, p)
    value = float(np.mean(wr * exp_r - lam * wc * exp_c + beta * ent))
    if not math.isfinite(value):
        raise TrainingDivergenceError(f"non-finite objective value in {where}")
    # d value / d u_i; dH/du = -u * p * (1 - p)
    gu = (wr * dr - lam * wc * dc - beta * u) * p * (1.0 - p) / n
    grads = _backward(params, kind, cache, gu)
    return value, grads, (p, exp_r, exp_c)


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def ascend(self, params, grads):
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for i, g in enumerate(grads):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            params[i] += self.lr * (self.m[i] / b1t) / (np.sqrt(self.v[i] / b2t) + self.eps)


class _Sgd:
    def __init__(self, params, lr):
        self.lr = lr

    def ascend(self, params, grads):
        for i, g in enumerate(grads):
            params[i] += self.lr * g


def init_policy(kind: str, dim: int, hidden: Sequence[int],
                rng: np.random.Generator, bias: float = 0.0) -> PolicySpec:
    """Fresh policy: zero-initialized linear, He-initialized network.

    bias shifts the initial logit, e.g. a negative value starts the policy
    near all-instruct so the budget is approached from the feasible side.
    """
    if kind == "linear":
        return LinearPolicy(np.zeros(dim), bias)
    sizes = [dim, *hidden, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        scale = math.sqrt(2.0 / fan_in)
        weights.append(rng.standard_normal((fan_out, fan_in)) * scale)
        biases.append(np.zeros(fan_out))
    biases[-1] = biases[-1] + bias
    return FeedForwardPolicy(tuple(weights), tuple(biases))


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------

def train(data: Dataset, config: TrainConfig) -> TrainResult:
    """Run the full primal-dual loop and return the best checkpoint.

    Deterministic in (data, config): splitting, initialization, shuffling
    and optional action sampling all derive from config.seed.
    """
    n = len(data)
    if n <= config.batch_size:
        raise ValidationError(
            f"dataset size {n} must exceed batch_size {config.batch_size}"
        )
    seq = np.random.SeedSequence(config.seed)
    split_rng, init_rng, shuffle_rng, action_rng = (
        np.random.default_rng(s) for s in seq.spawn(4)
    )

    perm = split_rng.permutation(n)
    n_val = int(round(config.val_fraction * n))
    if n_val < 1 or n - n_val <= 0:
        raise ValidationError("validation split is empty")
    train_idx = perm[: n - n_val]
    val_data = data.subset(perm[n - n_val:])
    train_data = data.subset(train_idx)

    policy0 = init_policy(config.policy_kind, data.n_features, config.hidden,
                          init_rng, bias=config.init_bias)
    kind = _policy_kind(policy0)
    params = _params(policy0)
    opt = (_Adam(params, config.primal_lr) if config.optimizer == "adam"
           else _Sgd(params, config.primal_lr))
    dual = DualState(lam=config.lambda_init, eta=config.dual_lr, beta=config.beta)

    tau_r = config.robust.effective_tau_reward
    tau_c = config.robust.effective_tau_cost

    x_all = train_data.features
    r_all = train_data.correct
    c_all = train_data.cost
    n_train = len(train_data)

    history: list[EpochRecord] = []
    checkpoints: list[Checkpoint] = []
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n_train)
        reward_sum = cost_sum = 0.0
        wr_lo = wc_lo = math.inf
        wr_hi = wc_hi = -math.inf
        epoch_costs: list[float] = []
        n_batches = 0
        for start in range(0, n_train, config.batch_size):
            idx = order[start: start + config.batch_size]
            x, r, c = x_all[idx], r_all[idx], c_all[idx]
            where = f"epoch {epoch} batch {n_batches}"

            # step 1: per-instance reward/cost summaries under the current policy
            u, _ = _forward(params, kind, x)
            if not np.all(np.isfinite(u)):
                raise TrainingDivergenceError(f"non-finite logit in {where}")
            p = sigmoid(u)
            if config.sample_weight_inputs:
                a = (action_rng.random(idx.size) < p).astype(np.int64)
                rows = np.arange(idx.size)
                f_r, f_c = r[rows, a], c[rows, a]
            else:
                f_r = r[:, 0] + p * (r[:, 1] - r[:, 0])
                f_c = c[:, 0] + p * (c[:, 1] - c[:, 0])

            # step 2: adversarial tilts (uniform when tau = inf)
            w_r = (uniform_weights(idx.size, float(f_r.mean())) if math.isinf(tau_r)
                   else tilt_weights(f_r, tau_r, "worst_low"))
            w_c = (uniform_weights(idx.size, float(f_c.mean())) if math.isinf(tau_c)
                   else tilt_weights(f_c, tau_c, "worst_high"))
            wr_lo = min(wr_lo, float(w_r.weights.min()))
            wr_hi = max(wr_hi, float(w_r.weights.max()))
            wc_lo = min(wc_lo, float(w_c.weights.min()))
            wc_hi = max(wc_hi, float(w_c.weights.max()))

            # step 3: one ascent step on the reweighted objective
            _, grads, (p_cur, exp_r, exp_c) = _objective_on_params(
                params, kind, x, r, c, w_r.weights, w_c.weights,
                dual.lam, config.beta, where=where,
            )
            opt.ascend(params, grads)

            # step 4: projected dual step on the tilt-weighted cost of the
            # updated policy
            u_new, _ = _forward(params, kind, x)
            if not np.all(np.isfinite(u_new)):
                raise TrainingDivergenceError(f"non-finite logit after update in {where}")
            p_new = sigmoid(u_new)
            exp_c_new = c[:, 0] + p_new * (c[:, 1] - c[:, 0])
            weighted_cost = float(np.mean(w_c.weights * exp_c_new))
            if config.dual_update_per_epoch:
                epoch_costs.append(weighted_cost)
            else:
                dual.step(weighted_cost, config.budget)

            reward_sum += float(exp_r.mean())
            cost_sum += float(exp_c.mean())
            n_batches += 1

        if config.dual_update_per_epoch:
            dual.step(float(np.mean(epoch_costs)), config.budget)

        snapshot = _rebuild(policy0, params)
        val_metrics = evaluate_policy(snapshot, val_data, mode="expected")
        checkpoints.append(Checkpoint(epoch, snapshot, val_metrics, dual.lam))
        history.append(EpochRecord(
            epoch=epoch,
            train_reward=reward_sum / n_batches,
            train_cost=cost_sum / n_batches,
            lam=dual.lam,
            val_accuracy=val_metrics.accuracy,
            val_cost=val_metrics.realized_cost,
            reasoning_fraction=val_metrics.reasoning_fraction,
            reward_weight_range=(wr_lo, wr_hi),
            cost_weight_range=(wc_lo, wc_hi),
        ))

    best = select_checkpoint(checkpoints, config.budget)
    return TrainResult(best, tuple(history), tuple(checkpoints))


def select_checkpoint(checkpoints: Sequence[Checkpoint], budget: float) -> Checkpoint:
    """Highest validation accuracy among budget-feasible checkpoints.

    If no checkpoint is feasible, the one with validation cost closest to
    the budget wins (ties: higher accuracy, then later epoch).
    """
    if not checkpoints:
        raise ValueError("no checkpoints to select from")
    feasible = [c for c in checkpoints if c.metrics.realized_cost <= budget]
    if feasible:
        return max(feasible, key=lambda c: (c.metrics.accuracy, c.epoch))
    return max(checkpoints,
               key=lambda c: (-abs(c.metrics.realized_cost - budget),
                              c.metrics.accuracy, c.epoch))


def history_to_csv(history: Sequence[EpochRecord], path) -> None:
    """Spec columns only: epoch, reward, cost, lambda and validation metrics."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_reward,train_cost,lambda,val_acc,val_cost,reasoning_frac\n")
        for rec in history:
            fh.write(
                f"{rec.epoch},{rec.train_reward!r},{rec.train_cost!r},{rec.lam!r},"
                f"{rec.val_accuracy!r},{rec.val_cost!r},{rec.reasoning_fraction!r}\n"
            )


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------

_MODEL_FORMAT = "racer-model-v1"


def save_model(path, policy: PolicySpec, instruct_cost_mean: float,
               config: TrainConfig | None = None) -> None:
    """Versioned JSON serialization; floats keep full round-trip precision."""
    payload = {
        "format": _MODEL_FORMAT,
        "policy": policy_to_dict(policy),
        "instruct_cost_mean": float(instruct_cost_mean),
        "config": config.to_dict() if config is not None else None,
        "config_digest": config.digest() if config is not None else None,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_model(path) -> tuple[PolicySpec, float, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != _MODEL_FORMAT:
        raise ValidationError(f"unsupported model format {payload.get('format')!r}")
    policy = policy_from_dict(payload["policy"])
    return policy, float(payload["instruct_cost_mean"]), payload
