"""Reproducible experiment pipelines.

Pendulum side: datasets sampled from the closed-form solution (never from a
numerical solver), one-step models embedding a small tanh network into a
single integrator step, convergence and integrator-interchange studies.
Classifier side: a synthetic two-class annulus task, test-error evaluation,
and manifestation sweeps over (scheme, step count) cells with frozen weights.
"""

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Var, cross_entropy
from .basis import param_count
from .blocks import (
    Manifestation,
    ModelSpec,
    classifier_forward,
    default_classifier,
    dense_residual,
    params_checksum,
    params_of,
)
from .integrators import StageOverflowError, TimeGrid, order_fit, solve, step, tableau
from .pendulum import PendulumConfig, pendulum_exact, true_rhs
from .training import (
    RefinementSchedule,
    TrainResult,
    init_adam,
    init_sgd,
    one_step_loss,
    refinement_train,
    train,
)

DIVERGED_ERROR_CAP = 1e6


# ---------------------------------------------------------------------------
# pendulum data and one-step models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrajectoryDataset:
    dt_data: float
    states: np.ndarray  # (n_pairs + 1, 2) samples of the exact solution
    config: PendulumConfig

    @property
    def n_pairs(self) -> int:
        return self.states.shape[0] - 1

    @property
    def horizon(self) -> float:
        return self.dt_data * self.n_pairs

    @property
    def pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.states[k], self.states[k + 1]) for k in range(self.n_pairs)]


def make_pendulum_dataset(dt_data: float, n_pairs: int, cfg: PendulumConfig) -> TrajectoryDataset:
    """Consecutive exact states at t_k = k * dt_data."""
    if dt_data <= 0.0:
        raise ValueError("dt_data must be positive")
    if n_pairs < 1:
        raise ValueError("need at least one pair")
    states = np.array([pendulum_exact(k * dt_data, cfg) for k in range(n_pairs + 1)])
    return TrajectoryDataset(dt_data=dt_data, states=states, config=cfg)


@dataclass
class PendulumModel:
    """A tanh network G embedded in one integrator step of size dt_data."""

    scheme: str
    dt_data: float
    hidden: int
    params: dict[str, np.ndarray]  # A (2, D), W (D, 2), b (D,)
    config: PendulumConfig
    provenance: dict = field(default_factory=dict)

    def g(self, x):
        """The learned vector field; polymorphic over arrays and Vars."""
        return dense_residual(x, self.params, "tanh_mlp")

    def step_fn(self, dt: float | None = None, scheme: str | None = None):
        """One-step map F(x) for an (n, 2) batch; defaults to the training graph."""
        tab = tableau(scheme if scheme is not None else self.scheme)
        h = dt if dt is not None else self.dt_data

        def f(x):
            return step(tab, lambda s, t: self.g(s), x, 0.0, h)

        return f


def init_pendulum_params(rng: np.random.Generator, hidden: int) -> dict[str, np.ndarray]:
    return {
        "A": rng.normal(0.0, 1.0 / math.sqrt(hidden), size=(2, hidden)),
        "W": rng.normal(0.0, 1.0 / math.sqrt(2.0), size=(hidden, 2)),
        "b": np.zeros(hidden),
    }


def train_odenet(scheme: str, dataset: TrajectoryDataset, hidden: int = 50, seed: int = 0,
                 *, epochs: int = 6000, lr: float = 1e-2,
                 lr_drops: tuple[int, ...] = ()) -> PendulumModel:
    """Fit G so one integrator step of size dt_data maps x_k to x_{k+1}.

    Full-batch Adam; the dataset is small and deterministic, so every epoch
    is one gradient step.  lr_drops lists epochs at which the learning rate
    is halved (helps to push the one-step loss below 1e-6).
    """
    tab = tableau(scheme)
    rng = np.random.default_rng(seed)
    params = init_pendulum_params(rng, hidden)
    pairs = dataset.pairs
    dt = dataset.dt_data

    def loss_fn(leaves, batch):
        def forward(x):
            tape = leaves["A"].tape
            xv = tape.var(x)
            return step(tab, lambda s, t: dense_residual(s, leaves, "tanh_mlp"), xv, 0.0, dt)

        return one_step_loss(forward, batch)

    opt = init_adam(params, lr=lr, decay_schedule={e: 0.5 for e in lr_drops})
    result = train(loss_fn, pairs, params, opt, epochs=epochs, seed=seed)

    return PendulumModel(
        scheme=tableau(scheme).name,
        dt_data=dt,
        hidden=hidden,
        params=result.params,
        config=dataset.config,
        provenance={
            "seed": seed,
            "epochs": epochs,
            "lr": lr,
            "lr_drops": sorted(lr_drops),
            "n_pairs": dataset.n_pairs,
            "final_one_step_loss": result.final_loss,
        },
    )


def one_step_model_loss(model: PendulumModel, dataset: TrajectoryDataset) -> float:
    return float(one_step_loss(model.step_fn(), dataset.pairs))


# ---------------------------------------------------------------------------
# convergence and interchange studies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceRow:
    dt: float
    error: float
    diverged: bool


@dataclass
class ConvergenceTable:
    label: str
    rows: list[ConvergenceRow]
    slope: float
    intercept: float


def _error_rows(one_step, dt_list, cfg: PendulumConfig, t_final: float,
                state_scale: float) -> tuple[list[ConvergenceRow], float, float]:
    x0 = np.array([[cfg.rho0, cfg.v0]])
    target = np.array(pendulum_exact(t_final, cfg))
    rows = []
    for dt in sorted(dt_list, reverse=True):
        if dt <= 0.0:
            raise ValueError("dt values must be positive")
        nt = max(1, round(t_final / dt))
        dt_adj = t_final / nt
        x = x0
        diverged = False
        try:
            for k in range(nt):
                x = one_step(x, dt_adj)
                if not np.all(np.isfinite(x)):
                    raise StageOverflowError("state became non-finite")
        except StageOverflowError:
            diverged = True
        err = DIVERGED_ERROR_CAP if diverged else float(np.linalg.norm(x[0] - target))
        if err > DIVERGED_ERROR_CAP:
            err, diverged = DIVERGED_ERROR_CAP, True
        rows.append(ConvergenceRow(dt=dt_adj, error=err, diverged=diverged))
    usable = [(r.dt, r.error) for r in rows if not r.diverged]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            slope, intercept = order_fit(usable, state_scale=state_scale)
    except ValueError:
        slope, intercept = float("nan"), float("nan")
    return rows, slope, intercept


def convergence_study(model: PendulumModel, eval_scheme: str, dt_list, cfg: PendulumConfig,
                      t_final: float) -> ConvergenceTable:
    """Roll the one-step model to t_final for each dt; error against the oracle."""
    tab = tableau(eval_scheme)

    def one_step(x, dt):
        return step(tab, lambda s, t: model.g(s), x, 0.0, dt)

    scale = float(np.linalg.norm(pendulum_exact(t_final, cfg)))
    rows, slope, intercept = _error_rows(one_step, dt_list, cfg, t_final, scale)
    label = f"odenet-{model.scheme}-eval-{tab.name}"
    return ConvergenceTable(label=label, rows=rows, slope=slope, intercept=intercept)


def true_rhs_convergence(scheme: str, dt_list, cfg: PendulumConfig, t_final: float) -> ConvergenceTable:
    """Baseline rows: the integrator applied to the true right-hand side."""
    tab = tableau(scheme)

    def one_step(x, dt):
        return step(tab, lambda s, t: np.stack([true_rhs(row, cfg) for row in s]), x, 0.0, dt)

    scale = float(np.linalg.norm(pendulum_exact(t_final, cfg)))
    rows, slope, intercept = _error_rows(one_step, dt_list, cfg, t_final, scale)
    return ConvergenceTable(label=f"true-rhs-{tab.name}", rows=rows, slope=slope, intercept=intercept)


def interchange_study(model: PendulumModel, dt_list, cfg: PendulumConfig, t_final: float,
                      eval_schemes=("euler", "midpoint", "rk4", "rk4-38")) -> list[ConvergenceTable]:
    """The trained G inserted into every evaluation scheme's graph."""
    return [convergence_study(model, s, dt_list, cfg, t_final) for s in eval_schemes]


# ---------------------------------------------------------------------------
# synthetic classification task
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticDataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray

    @property
    def train_samples(self) -> list[tuple[np.ndarray, int]]:
        return [(self.x_train[i], int(self.y_train[i])) for i in range(len(self.y_train))]


def _annulus_points(rng: np.random.Generator, n: int, noise: float) -> tuple[np.ndarray, np.ndarray]:
    labels = np.zeros(n, dtype=np.int64)
    labels[n // 2:] = 1  # class counts differ by at most one
    radius = np.where(labels == 0, 1.0, 2.0)
    angle = rng.uniform(0.0, 2.0 * math.pi, size=n)
    points = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
    points = points + noise * rng.normal(size=points.shape)
    perm = rng.permutation(n)
    return points[perm], labels[perm]


def make_synthetic_classification(n_train: int, n_test: int, noise: float = 0.15,
                                  seed: int = 0) -> SyntheticDataset:
    """Two concentric annuli (radii 1 and 2) with Gaussian coordinate noise."""
    if min(n_train, n_test) < 1:
        raise ValueError("dataset sizes must be positive")
    rng = np.random.default_rng(seed)
    x_train, y_train = _annulus_points(rng, n_train, noise)
    x_test, y_test = _annulus_points(rng, n_test, noise)
    return SyntheticDataset(x_train, y_train, x_test, y_test)


def test_error(model: ModelSpec, manis, x_test: np.ndarray, y_test: np.ndarray,
               params: dict[str, np.ndarray] | None = None) -> float:
    """Misclassification rate under argmax of the logits."""
    logits = classifier_forward(model, manis, np.asarray(x_test, dtype=np.float64), params=params)
    predicted = np.argmax(logits, axis=1)
    return float(np.mean(predicted != np.asarray(y_test)))


# ---------------------------------------------------------------------------
# classifier training
# ---------------------------------------------------------------------------

def train_classifier(scheme: str, num_steps: int, *, refine_at: tuple[int, ...] = (),
                     epochs: int = 40, data: SyntheticDataset | None = None, seed: int = 0,
                     widths: tuple[int, ...] = (16, 32, 64),
                     hidden: tuple[int, ...] | None = None, epsilon: float = 1.0,
                     stitch_eps: float | None = None, module_kind: str = "dense_skip_init",
                     skip_init: float = 0.0, skip_init_std: float = 0.0,
                     optimizer: str = "sgd", lr: float = 0.05, momentum: float = 0.9,
                     batch_size: int = 128,
                     decay_schedule: dict[int, float] | None = None
                     ) -> tuple[ModelSpec, Manifestation, TrainResult, SyntheticDataset]:
    """Train the desk-scale annulus classifier.

    With refine_at non-empty this is refinement training: blocks start at one
    step and one interval and double at each listed epoch (num_steps must
    equal 2**len(refine_at)).  Otherwise a fixed graph with num_steps steps
    and as many basis intervals is trained directly.
    """
    if data is None:
        data = make_synthetic_classification(400, 400, noise=0.15, seed=seed)
    samples = data.train_samples
    held = (data.x_train[:128], data.y_train[:128])

    if refine_at:
        expected = 2 ** len(refine_at)
        if num_steps != expected:
            raise ValueError(
                f"{len(refine_at)} refinement events end at num_steps={expected}, not {num_steps}"
            )
        model = default_classifier(widths=widths, hidden=hidden, num_basis=1, epsilon=epsilon,
                                   module_kind=module_kind, nt_build=1, stitch_eps=stitch_eps,
                                   skip_init=skip_init, skip_init_std=skip_init_std, seed=seed)
        schedule = RefinementSchedule(epochs=tuple(refine_at), total_epochs=epochs)
        if decay_schedule is None:
            decay_schedule = {e: 0.5 for e in refine_at}
        opt = _make_optimizer(optimizer, params_of(model), lr, momentum, decay_schedule)

        def accuracy_fn(m, mani, p):
            return 1.0 - test_error(m, mani, data.x_test, data.y_test, params=p)

        final_model, mani, result = refinement_train(
            model, samples, opt, schedule, seed=seed, scheme=scheme,
            batch_size=batch_size, held_batch=held, accuracy_fn=accuracy_fn,
        )
        return final_model, mani, result, data

    model = default_classifier(widths=widths, hidden=hidden, num_basis=num_steps, epsilon=epsilon,
                               module_kind=module_kind, nt_build=num_steps, stitch_eps=stitch_eps,
                               skip_init=skip_init, skip_init_std=skip_init_std, seed=seed)
    mani = Manifestation(scheme, num_steps)
    params0 = params_of(model)

    def loss_fn(leaves, batch):
        xs = np.stack([np.asarray(x) for x, _ in batch])
        labels = np.array([label for _, label in batch])
        tape = next(iter(leaves.values())).tape
        logits = classifier_forward(model, mani, tape.var(xs), params=leaves)
        return cross_entropy(logits, labels)

    def accuracy_fn(p):
        return 1.0 - test_error(model, mani, data.x_test, data.y_test, params=p)

    opt = _make_optimizer(optimizer, params0, lr, momentum, decay_schedule or {})
    result = train(loss_fn, samples, params0, opt, epochs=epochs, batch_size=batch_size,
                   seed=seed, accuracy_fn=accuracy_fn)
    from .blocks import model_with_params

    return model_with_params(model, result.params), mani, result, data


def _make_optimizer(kind: str, params, lr, momentum, decay_schedule):
    if kind == "sgd":
        return init_sgd(params, lr=lr, momentum=momentum, decay_schedule=decay_schedule)
    if kind == "adam":
        return init_adam(params, lr=lr, decay_schedule=decay_schedule)
    raise ValueError(f"unknown optimizer {kind!r}; choose sgd or adam")


# ---------------------------------------------------------------------------
# manifestation sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepCell:
    eval_scheme: str
    num_steps: int
    error: float
    seconds: float


@dataclass
class ManifestationReport:
    train_scheme: str
    cells: list[SweepCell]


def manifestation_sweep(model: ModelSpec, train_scheme: str, schemes, nt_list,
                        x_test: np.ndarray, y_test: np.ndarray) -> ManifestationReport:
    """Evaluate every (scheme, step count) graph of one frozen model.

    The weights are never retrained or modified; a checksum guards the
    frozen-weights contract.
    """
    params = params_of(model)
    checksum = params_checksum(params)
    cells = []
    for scheme in schemes:
        name = tableau(scheme).name
        for nt in nt_list:
            started = time.perf_counter()
            err = test_error(model, Manifestation(name, int(nt)), x_test, y_test, params=params)
            cells.append(SweepCell(eval_scheme=name, num_steps=int(nt), error=err,
                                   seconds=time.perf_counter() - started))
    if params_checksum(params) != checksum:
        raise RuntimeError("manifestation sweep mutated the model parameters")
    return ManifestationReport(train_scheme=tableau(train_scheme).name, cells=cells)
