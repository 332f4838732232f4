"""Optimizers, losses, the training loop, and refinement training.

Training is deterministic under a fixed seed: initialization and batch
shuffling draw from one seeded generator, and gradients come off a freshly
built tape each step.  Refinement training starts every block at one time
step and one basis interval, then at scheduled epochs splits the weight
coefficients (exact), doubles the manifested step count, and split-copies
the optimizer moments so the embedded coarse model keeps its trajectory.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tape, Var, backward, cross_entropy, mse
from .basis import param_count, refine_split
from .blocks import Manifestation, ModelSpec, classifier_forward, model_with_params, params_of


class TrainingDivergedError(RuntimeError):
    """The loss became non-finite during training."""


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def one_step_loss(forward_fn, pairs, params=None):
    """Mean squared one-step prediction error (1/N) sum ||F(x_k) - x_{k+1}||^2.

    ``forward_fn(x_batch)`` maps the stacked (N, d) inputs to predictions;
    when it builds Vars the result is a Var and differentiable.
    """
    if len(pairs) == 0:
        raise ValueError("one_step_loss needs at least one pair")
    x = np.stack([np.asarray(a, dtype=np.float64) for a, _ in pairs])
    y = np.stack([np.asarray(b, dtype=np.float64) for _, b in pairs])
    pred = forward_fn(x)
    width = y.shape[1]
    # mse averages over all elements; scaling by the width recovers the
    # per-pair squared-norm mean.
    return mse(pred, y) * float(width) if isinstance(pred, Var) else float(width) * mse(pred, y)


def cross_entropy_loss(logits, labels):
    """Mean negative log softmax probability of the true class."""
    return cross_entropy(logits, labels)


# ---------------------------------------------------------------------------
# optimizers (functional steps: return new state and new parameters)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdamState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    stabilizer: float = 1e-8
    decay_schedule: dict[int, float] = field(default_factory=dict)  # epoch -> multiplier
    lr_scale: float = 1.0


def init_adam(params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              stabilizer: float = 1e-8, decay_schedule: dict[int, float] | None = None) -> AdamState:
    zeros = lambda: {k: np.zeros_like(p) for k, p in params.items()}
    return AdamState(step=0, m=zeros(), v=zeros(), lr=lr, beta1=beta1, beta2=beta2,
                     stabilizer=stabilizer, decay_schedule=dict(decay_schedule or {}))


def adam_step(state: AdamState, params, grads):
    t = state.step + 1
    m, v, new_params = {}, {}, {}
    b1, b2 = state.beta1, state.beta2
    lr = state.lr * state.lr_scale
    for k, p in params.items():
        g = grads[k]
        m[k] = b1 * state.m[k] + (1.0 - b1) * g
        v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = m[k] / (1.0 - b1 ** t)
        v_hat = v[k] / (1.0 - b2 ** t)
        new_params[k] = p - lr * m_hat / (np.sqrt(v_hat) + state.stabilizer)
    return replace(state, step=t, m=m, v=v), new_params


@dataclass(frozen=True)
class SgdMomentumState:
    velocity: dict[str, np.ndarray]
    lr: float = 0.1
    momentum: float = 0.9
    decay_schedule: dict[int, float] = field(default_factory=dict)  # epoch -> multiplier
    lr_scale: float = 1.0


def init_sgd(params, lr: float = 0.1, momentum: float = 0.9,
             decay_schedule: dict[int, float] | None = None) -> SgdMomentumState:
    return SgdMomentumState(
        velocity={k: np.zeros_like(p) for k, p in params.items()},
        lr=lr, momentum=momentum, decay_schedule=dict(decay_schedule or {}),
    )


def sgd_momentum_step(state: SgdMomentumState, params, grads):
    vel, new_params = {}, {}
    lr = state.lr * state.lr_scale
    for k, p in params.items():
        vel[k] = state.momentum * state.velocity[k] + grads[k]
        new_params[k] = p - lr * vel[k]
    return replace(state, velocity=vel), new_params


def optimizer_step(state, params, grads):
    if isinstance(state, AdamState):
        return adam_step(state, params, grads)
    if isinstance(state, SgdMomentumState):
        return sgd_momentum_step(state, params, grads)
    raise TypeError(f"unknown optimizer state {type(state).__name__}")


def _apply_decay(state, epoch: int):
    if epoch in state.decay_schedule:
        return replace(state, lr_scale=state.lr_scale * state.decay_schedule[epoch])
    return state


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    accuracy: float
    seconds: float
    num_steps: int = 0
    param_count: int = 0


@dataclass
class RefinementEvent:
    epoch: int
    num_steps: int
    num_basis: int
    param_count: int
    loss_before: float
    loss_after: float


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    metrics: list[EpochMetrics]
    events: list[RefinementEvent] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.metrics[-1].loss if self.metrics else float("nan")


def _grads_by_name(tape: Tape, loss: Var, leaves: dict[str, Var]):
    g = backward(tape, loss.nid)
    return {name: g[var.nid] for name, var in leaves.items()}


def train(loss_fn, data, params, opt, *, epochs: int, batch_size: int | None = None,
          seed: int = 0, accuracy_fn=None) -> TrainResult:
    """Generic seeded loop: shuffle, build tape, backprop, optimizer step.

    ``loss_fn(params_vars, batch)`` must return a scalar Var built on the
    leaves' tape.  ``data`` is an indexable collection of samples; with
    batch_size None every epoch is one full-batch step.
    """
    if len(data) == 0:
        raise ValueError("train: data must be non-empty")
    rng = np.random.default_rng(seed)
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    metrics: list[EpochMetrics] = []
    n = len(data)
    for epoch in range(epochs):
        started = time.perf_counter()
        opt = _apply_decay(opt, epoch)
        if batch_size is None:
            batches = [list(range(n))]
        else:
            order = rng.permutation(n)
            batches = [order[i:i + batch_size].tolist() for i in range(0, n, batch_size)]
        epoch_loss = 0.0
        for idx in batches:
            batch = [data[i] for i in idx]
            tape = Tape()
            leaves = {k: tape.var(v) for k, v in params.items()}
            loss = loss_fn(leaves, batch)
            value = float(loss.value)
            if not np.isfinite(value):
                raise TrainingDivergedError(f"non-finite loss {value} at epoch {epoch}")
            grads = _grads_by_name(tape, loss, leaves)
            opt, params = optimizer_step(opt, params, grads)
            epoch_loss += value * len(idx)
        accuracy = float("nan") if accuracy_fn is None else float(accuracy_fn(params))
        metrics.append(EpochMetrics(
            epoch=epoch,
            loss=epoch_loss / n,
            accuracy=accuracy,
            seconds=time.perf_counter() - started,
        ))
    return TrainResult(params=params, metrics=metrics)


@dataclass(frozen=True)
class RefinementSchedule:
    epochs: tuple[int, ...]
    total_epochs: int

    def __post_init__(self):
        if list(self.epochs) != sorted(set(self.epochs)):
            raise ValueError(f"refinement epochs must be strictly increasing, got {self.epochs}")
        if self.epochs and self.epochs[-1] >= self.total_epochs:
            raise ValueError("refinement epochs must lie before total_epochs")
        if any(e < 0 for e in self.epochs):
            raise ValueError("refinement epochs must be non-negative")


def _split_block_entry(arr: np.ndarray) -> np.ndarray:
    return np.repeat(arr, 2, axis=0)


def _split_optimizer(opt, block_param_names):
    """Split-copy moments along the interval axis so the update of a split
    pair stays identical until their gradients diverge."""
    def split_map(d):
        return {k: (_split_block_entry(v) if k in block_param_names else v.copy())
                for k, v in d.items()}

    if isinstance(opt, AdamState):
        return replace(opt, m=split_map(opt.m), v=split_map(opt.v))
    if isinstance(opt, SgdMomentumState):
        return replace(opt, velocity=split_map(opt.velocity))
    raise TypeError(f"unknown optimizer state {type(opt).__name__}")


def refinement_train(model: ModelSpec, data, opt, schedule: RefinementSchedule, seed: int = 0,
                     *, scheme: str = "rk4", batch_size: int | None = None,
                     held_batch=None, accuracy_fn=None) -> tuple[ModelSpec, Manifestation, TrainResult]:
    """Train a classifier, deepening it at the scheduled epochs.

    Every block must start at one step and one basis interval.  At each
    event the weight coefficients are split (theta(t) is unchanged), the
    manifested step count doubles, and optimizer moments are split-copied.
    ``data`` is a list of (x, label) samples; ``held_batch`` an optional
    (x, labels) pair used to log the loss right before and after events.
    """
    for i, block in enumerate(model.blocks):
        if block.weights.num_basis != 1:
            raise ValueError(f"block {i} must start with one basis interval, has {block.weights.num_basis}")
    mani = Manifestation(scheme, 1)
    params = params_of(model)
    rng = np.random.default_rng(seed)
    current_model = model
    block_names = lambda m: {f"block{i}.{name}"
                             for i, b in enumerate(m.blocks) for name in b.weights.group.names()}

    def batch_loss(p, batch, manifestation, the_model):
        xs = np.stack([np.asarray(x, dtype=np.float64) for x, _ in batch])
        labels = np.array([int(label) for _, label in batch])
        tape = next(iter(p.values())).tape
        logits = classifier_forward(the_model, manifestation, tape.var(xs), params=p)
        return cross_entropy(logits, labels)

    def held_loss(p, manifestation, the_model):
        if held_batch is None:
            return float("nan")
        xs, labels = held_batch
        logits = classifier_forward(the_model, manifestation, np.asarray(xs), params=p)
        return cross_entropy(logits, labels)

    metrics: list[EpochMetrics] = []
    events: list[RefinementEvent] = []
    n = len(data)
    if n == 0:
        raise ValueError("refinement_train: data must be non-empty")
    event_epochs = set(schedule.epochs)

    for epoch in range(schedule.total_epochs):
        started = time.perf_counter()
        if epoch in event_epochs:
            loss_before = held_loss(params, mani, current_model)
            new_blocks = tuple(replace(b, weights=refine_split(b.weights))
                               for b in current_model.blocks)
            names = block_names(current_model)
            params = {k: (_split_block_entry(v) if k in names else v.copy())
                      for k, v in params.items()}
            opt = _split_optimizer(opt, names)
            current_model = replace(current_model, blocks=new_blocks)
            mani = Manifestation(mani.scheme, 2 * mani.num_steps)
            loss_after = held_loss(params, mani, current_model)
            events.append(RefinementEvent(
                epoch=epoch,
                num_steps=mani.num_steps,
                num_basis=current_model.blocks[0].weights.num_basis,
                param_count=sum(param_count(b.weights) for b in current_model.blocks),
                loss_before=loss_before,
                loss_after=loss_after,
            ))
        opt = _apply_decay(opt, epoch)
        if batch_size is None:
            batches = [list(range(n))]
        else:
            order = rng.permutation(n)
            batches = [order[i:i + batch_size].tolist() for i in range(0, n, batch_size)]
        epoch_loss = 0.0
        for idx in batches:
            batch = [data[i] for i in idx]
            tape = Tape()
            leaves = {k: tape.var(v) for k, v in params.items()}
            loss = batch_loss(leaves, batch, mani, current_model)
            value = float(loss.value)
            if not np.isfinite(value):
                raise TrainingDivergedError(f"non-finite loss {value} at epoch {epoch}")
            grads = _grads_by_name(tape, loss, leaves)
            opt, params = optimizer_step(opt, params, grads)
            epoch_loss += value * len(idx)
        accuracy = float("nan") if accuracy_fn is None else float(accuracy_fn(current_model, mani, params))
        metrics.append(EpochMetrics(
            epoch=epoch,
            loss=epoch_loss / n,
            accuracy=accuracy,
            seconds=time.perf_counter() - started,
            num_steps=mani.num_steps,
            param_count=sum(param_count(b.weights) for b in current_model.blocks),
        ))

    final_model = model_with_params(current_model, params)
    return final_model, mani, TrainResult(params=params, metrics=metrics, events=events)
