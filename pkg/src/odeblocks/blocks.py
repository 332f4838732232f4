"""Continuous-in-depth network blocks and their discrete manifestations.

An OdeBlockSpec is a residual module R, a piecewise-constant weight function
theta(t), a time scaling epsilon and a horizon; its forward pass integrates
dx/dt = epsilon * R(x, theta(t)).  A Manifestation (integrator scheme, step
count) turns the block into one concrete discrete graph; `manifest` lays out
every Runge-Kutta stage with its weight interval resolved statically, and
`run_graph` executes that layout on numpy arrays or autodiff Vars.

Residual modules are dense: R(x) = A tanh(W x + b), optionally scaled by a
learned per-interval scalar s(t) initialized to zero so the block starts out
as the identity.
"""

import hashlib
import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .autodiff import ShapeError, Var, select, tanh
from .basis import ParamGroupSpec, WeightFunction, interval_index, theta_eval
from .integrators import StageOverflowError, step, tableau

RESIDUAL_KINDS = ("tanh_mlp", "dense_skip_init")


@dataclass(frozen=True)
class ResidualModuleSpec:
    kind: str
    in_width: int
    hidden: int
    out_width: int

    def __post_init__(self):
        if self.kind not in RESIDUAL_KINDS:
            raise ValueError(f"unknown residual kind {self.kind!r}; choose from {RESIDUAL_KINDS}")
        if min(self.in_width, self.hidden, self.out_width) < 1:
            raise ValueError("widths must be positive")

    def param_group(self) -> ParamGroupSpec:
        entries = [
            ("A", (self.out_width, self.hidden)),
            ("W", (self.hidden, self.in_width)),
            ("b", (self.hidden,)),
        ]
        if self.kind == "dense_skip_init":
            entries.append(("s", (1,)))
        return ParamGroupSpec(tuple(entries))


def _t(x):
    return x.T


def _shape_of(x) -> tuple[int, ...]:
    return tuple(x.shape)


def dense_residual(x, theta, kind: str):
    """A tanh(W x + b), times the skip scalar s for dense_skip_init.

    Polymorphic over numpy arrays and Vars; x has rows as samples.
    """
    h = tanh((x @ _t(theta["W"])) + theta["b"])
    out = h @ _t(theta["A"])
    if kind == "dense_skip_init":
        out = out * theta["s"]
    return out


def residual_eval(module: ResidualModuleSpec, x, theta):
    """Shape-checked residual module application."""
    expected = dict(module.param_group().entries)
    for name, shape in expected.items():
        if name not in theta:
            raise ShapeError(f"residual_eval: missing entry {name!r}")
        got = _shape_of(theta[name])
        if got != shape:
            raise ShapeError(f"residual_eval: entry {name!r} expected shape {shape}, got {got}")
    xs = _shape_of(x)
    if len(xs) != 2 or xs[1] != module.in_width:
        raise ShapeError(f"residual_eval: input expected (n, {module.in_width}), got {xs}")
    return dense_residual(x, theta, module.kind)


def affine(x, weight, bias):
    """x W^T + b for (n, in) inputs and (out, in) weights."""
    return (x @ _t(weight)) + bias


@dataclass(frozen=True)
class OdeBlockSpec:
    module: ResidualModuleSpec
    weights: WeightFunction
    epsilon: float
    horizon: float = 1.0

    def __post_init__(self):
        if self.module.in_width != self.module.out_width:
            raise ValueError("OdeBlock residual module must be state-preserving (in width == out width)")
        if self.weights.group != self.module.param_group():
            raise ValueError("weight function group does not match the residual module")
        if not math.isfinite(self.epsilon):
            raise ValueError("epsilon must be finite")
        if not self.horizon > 0.0:
            raise ValueError("horizon must be positive")
        if self.weights.horizon != self.horizon:
            raise ValueError("weight function horizon must equal the block horizon")

    @property
    def width(self) -> int:
        return self.module.in_width


@dataclass(frozen=True)
class Manifestation:
    scheme: str
    num_steps: int

    def __post_init__(self):
        canonical = tableau(self.scheme).name
        object.__setattr__(self, "scheme", canonical)
        if self.num_steps < 1:
            raise ValueError("num_steps must be at least 1")


@dataclass(frozen=True)
class GraphStage:
    step: int
    stage: int
    time: float
    interval: int  # 1-based basis interval resolved at manifestation time
    a_row: tuple[float, ...]


@dataclass(frozen=True)
class GraphDescription:
    scheme: str
    num_steps: int
    num_basis: int
    horizon: float
    epsilon: float
    dt: float
    b: tuple[float, ...]
    module_kind: str
    in_width: int
    hidden: int
    out_width: int
    stages: tuple[GraphStage, ...]

    @property
    def num_residual_invocations(self) -> int:
        return self.num_steps * len(self.b)


def manifest(block: OdeBlockSpec, mani: Manifestation) -> GraphDescription:
    """Static layout of the discrete graph: every stage with its resolved weights.

    Stage times (k + c_i) * dt are classified against the basis intervals in
    exact rational arithmetic (the horizon scales out), so the layout never
    depends on float rounding at interval boundaries.
    """
    tab = tableau(mani.scheme)
    nt = mani.num_steps
    m = block.weights.num_basis
    dt = block.horizon / nt
    stages = []
    for k in range(nt):
        for i in range(tab.stages):
            u = (Fraction(k) + tab.c_exact[i]) * m / nt
            idx = min(int(u), m - 1)  # t = horizon stays inside the last interval
            stages.append(
                GraphStage(
                    step=k,
                    stage=i,
                    time=(k + tab.c[i]) * dt,
                    interval=idx + 1,
                    a_row=tab.a[i],
                )
            )
    return GraphDescription(
        scheme=tab.name,
        num_steps=nt,
        num_basis=m,
        horizon=block.horizon,
        epsilon=block.epsilon,
        dt=dt,
        b=tab.b,
        module_kind=block.module.kind,
        in_width=block.module.in_width,
        hidden=block.module.hidden,
        out_width=block.module.out_width,
        stages=tuple(stages),
    )


def _is_finite(x) -> bool:
    v = x.value if isinstance(x, Var) else x
    return bool(np.all(np.isfinite(v)))


def run_graph(graph: GraphDescription, theta_at, x, record: list | None = None):
    """Execute a manifested graph.

    ``theta_at(interval0)`` returns the weight tensors bound to a 0-based
    interval; the accumulation order mirrors integrators.step exactly so the
    static and dynamic executions of one manifestation agree bit for bit.
    ``record``, when given, collects the state after every time step.
    """
    per_step = len(graph.b)
    dt = graph.dt
    for k in range(graph.num_steps):
        ys = []
        for i in range(per_step):
            st = graph.stages[k * per_step + i]
            xi = x
            for j in range(i):
                aij = st.a_row[j]
                if aij != 0.0:
                    xi = xi + (dt * aij) * ys[j]
            ri = dense_residual(xi, theta_at(st.interval - 1), graph.module_kind)
            if not _is_finite(ri):
                raise StageOverflowError(
                    f"{graph.scheme}: non-finite value at step {k}, stage {i + 1}"
                )
            ys.append(graph.epsilon * ri)
        out = x
        for bi, yi in zip(graph.b, ys):
            if bi != 0.0:
                out = out + (dt * bi) * yi
        x = out
        if record is not None:
            record.append(x)
    return x


def odeblock_forward(block: OdeBlockSpec, mani: Manifestation, x_in, theta_source=None):
    """Integrate dx/dt = epsilon * R(x, theta(t)) over [0, horizon].

    ``theta_source(t)`` maps a stage time to the weight tensors; the default
    samples the block's own weight function.  Passing Vars for x_in and from
    theta_source makes the whole pass differentiable.
    """
    xs = _shape_of(x_in)
    if len(xs) != 2 or xs[1] != block.width:
        raise ShapeError(f"odeblock_forward: input expected (n, {block.width}), got {xs}")
    if theta_source is None:
        theta_source = lambda t: theta_eval(block.weights, t)
    tab = tableau(mani.scheme)
    dt = block.horizon / mani.num_steps

    def f(x, t):
        return block.epsilon * dense_residual(x, theta_source(t), block.module.kind)

    x = x_in
    for k in range(mani.num_steps):
        x = step(tab, f, x, k * dt, dt)
    return x


def taped_theta_source(theta_vars: dict[str, Var], num_basis: int, horizon: float):
    """theta_source selecting per-interval slices out of coefficient leaves."""

    def source(t: float):
        idx = interval_index(num_basis, horizon, t)
        return {name: select(v, idx) for name, v in theta_vars.items()}

    return source


# ---------------------------------------------------------------------------
# stitches and full classifier models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearSpec:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError(
                f"linear map needs (out, in) weight and (out,) bias, got {self.weight.shape} / {self.bias.shape}"
            )

    @property
    def in_width(self) -> int:
        return self.weight.shape[1]

    @property
    def out_width(self) -> int:
        return self.weight.shape[0]


def stitch_epsilon(eps_ode: float, horizon: float, dt: float) -> float:
    """Scaling that matches the stitch residual to the block residual."""
    return eps_ode * horizon / dt


def stitch_forward(x, theta, downsample, eps_stitch: float):
    """downsample(x) + eps_stitch * R(x, theta), changing the width."""
    if isinstance(downsample, LinearSpec):
        dw, db = downsample.weight, downsample.bias
    else:
        dw, db = downsample["weight"], downsample["bias"]
    out_w = _shape_of(theta["A"])[0]
    if _shape_of(dw)[0] != out_w:
        raise ShapeError(
            f"stitch_forward: downsample output width {_shape_of(dw)[0]} != residual output width {out_w}"
        )
    if _shape_of(x)[1] != _shape_of(dw)[1] or _shape_of(x)[1] != _shape_of(theta["W"])[1]:
        raise ShapeError(
            f"stitch_forward: input width {_shape_of(x)[1]} does not match downsample "
            f"{_shape_of(dw)} / residual W {_shape_of(theta['W'])}"
        )
    skip = affine(x, dw, db)
    return skip + eps_stitch * dense_residual(x, theta, "tanh_mlp")


@dataclass(frozen=True)
class StitchSpec:
    down: LinearSpec
    theta: dict[str, np.ndarray]  # A, W, b of a width-changing tanh unit
    eps: float

    def __post_init__(self):
        a, w, b = self.theta["A"], self.theta["W"], self.theta["b"]
        if a.shape[0] != self.down.out_width or w.shape[1] != self.down.in_width:
            raise ValueError("stitch residual widths do not match the downsample map")
        if a.shape[1] != w.shape[0] or b.shape != (w.shape[0],):
            raise ValueError("stitch residual hidden widths are inconsistent")

    @property
    def in_width(self) -> int:
        return self.down.in_width

    @property
    def out_width(self) -> int:
        return self.down.out_width


@dataclass(frozen=True)
class ModelSpec:
    lift: LinearSpec | None
    blocks: tuple[OdeBlockSpec, ...]
    stitches: tuple[StitchSpec, ...]
    head: LinearSpec | None

    @property
    def in_width(self) -> int:
        return self.lift.in_width if self.lift is not None else self.blocks[0].width

    @property
    def out_width(self) -> int:
        return self.head.out_width if self.head is not None else self.blocks[-1].width


def build_classifier(blocks, stitches=(), head: LinearSpec | None = None,
                     lift: LinearSpec | None = None) -> ModelSpec:
    """Compose lift -> block -> stitch -> ... -> block -> head, checking widths."""
    blocks = tuple(blocks)
    stitches = tuple(stitches)
    if not blocks:
        raise ValueError("a classifier needs at least one OdeBlock")
    if len(stitches) != len(blocks) - 1:
        raise ValueError(f"{len(blocks)} blocks need {len(blocks) - 1} stitches, got {len(stitches)}")
    if lift is not None and lift.out_width != blocks[0].width:
        raise ValueError(f"lift output {lift.out_width} != first block width {blocks[0].width}")
    for i, st in enumerate(stitches):
        if st.in_width != blocks[i].width:
            raise ValueError(f"stitch {i} input {st.in_width} != block {i} width {blocks[i].width}")
        if st.out_width != blocks[i + 1].width:
            raise ValueError(f"stitch {i} output {st.out_width} != block {i + 1} width {blocks[i + 1].width}")
    if head is not None and head.in_width != blocks[-1].width:
        raise ValueError(f"head input {head.in_width} != last block width {blocks[-1].width}")
    return ModelSpec(lift=lift, blocks=blocks, stitches=stitches, head=head)


def params_of(model: ModelSpec) -> dict[str, np.ndarray]:
    """Flat name -> array copy of every trainable tensor."""
    out: dict[str, np.ndarray] = {}
    if model.lift is not None:
        out["lift.weight"] = model.lift.weight.copy()
        out["lift.bias"] = model.lift.bias.copy()
    for i, block in enumerate(model.blocks):
        for name, c in block.weights.coefficients.items():
            out[f"block{i}.{name}"] = c.copy()
    for i, st in enumerate(model.stitches):
        out[f"stitch{i}.down.weight"] = st.down.weight.copy()
        out[f"stitch{i}.down.bias"] = st.down.bias.copy()
        for name in ("A", "W", "b"):
            out[f"stitch{i}.{name}"] = st.theta[name].copy()
    if model.head is not None:
        out["head.weight"] = model.head.weight.copy()
        out["head.bias"] = model.head.bias.copy()
    return out


def model_with_params(model: ModelSpec, params: dict[str, np.ndarray]) -> ModelSpec:
    """Rebuild the model with arrays taken from a flat parameter dict."""
    lift = model.lift
    if lift is not None:
        lift = LinearSpec(params["lift.weight"].copy(), params["lift.bias"].copy())
    blocks = []
    for i, block in enumerate(model.blocks):
        coeffs = {name: params[f"block{i}.{name}"].copy()
                  for name in block.weights.group.names()}
        num_basis = coeffs[block.weights.group.names()[0]].shape[0]
        wf = WeightFunction(block.weights.group, num_basis, block.weights.horizon, coeffs)
        blocks.append(replace(block, weights=wf))
    stitches = []
    for i, st in enumerate(model.stitches):
        down = LinearSpec(params[f"stitch{i}.down.weight"].copy(), params[f"stitch{i}.down.bias"].copy())
        theta = {name: params[f"stitch{i}.{name}"].copy() for name in ("A", "W", "b")}
        stitches.append(StitchSpec(down=down, theta=theta, eps=st.eps))
    head = model.head
    if head is not None:
        head = LinearSpec(params["head.weight"].copy(), params["head.bias"].copy())
    return ModelSpec(lift=lift, blocks=tuple(blocks), stitches=tuple(stitches), head=head)


def params_checksum(params: dict[str, np.ndarray]) -> str:
    """Order-independent digest used by the frozen-weights contract."""
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name]).tobytes())
    return h.hexdigest()


def classifier_forward(model: ModelSpec, manis, x, params=None):
    """Forward pass; `manis` is one Manifestation for all blocks or one per block.

    With ``params`` a dict of Vars the pass is recorded on their tape and is
    differentiable; with None the model's own arrays are used.
    """
    if isinstance(manis, Manifestation):
        manis = [manis] * len(model.blocks)
    if len(manis) != len(model.blocks):
        raise ValueError(f"need one manifestation per block, got {len(manis)}")
    p = params if params is not None else params_of(model)
    h = x
    if model.lift is not None:
        h = affine(h, p["lift.weight"], p["lift.bias"])
    for i, block in enumerate(model.blocks):
        graph = manifest(block, manis[i])
        coeff = {name: p[f"block{i}.{name}"] for name in block.weights.group.names()}

        def theta_at(idx, _coeff=coeff):
            return {name: select(arr, idx) for name, arr in _coeff.items()}

        h = run_graph(graph, theta_at, h)
        if i < len(model.stitches):
            st = model.stitches[i]
            down = {"weight": p[f"stitch{i}.down.weight"], "bias": p[f"stitch{i}.down.bias"]}
            theta = {name: p[f"stitch{i}.{name}"] for name in ("A", "W", "b")}
            h = stitch_forward(h, theta, down, st.eps)
    if model.head is not None:
        h = affine(h, p["head.weight"], p["head.bias"])
    return h


# ---------------------------------------------------------------------------
# initialization helpers
# ---------------------------------------------------------------------------

def init_residual_coefficients(rng: np.random.Generator, module: ResidualModuleSpec,
                               num_basis: int, skip_init: float = 0.0,
                               skip_init_std: float = 0.0) -> dict[str, np.ndarray]:
    """Per-interval fan-in scaled init.

    The skip scalar starts at ``skip_init`` (zero makes the block the identity
    at the first iteration); a nonzero ``skip_init_std`` draws it per interval,
    the dense analog of initializing every residual unit independently.
    """
    coeffs: dict[str, np.ndarray] = {}
    for name, shape in module.param_group().entries:
        full = (num_basis, *shape)
        if name == "A":
            coeffs[name] = rng.normal(0.0, 1.0 / math.sqrt(module.hidden), size=full)
        elif name == "W":
            coeffs[name] = rng.normal(0.0, 1.0 / math.sqrt(module.in_width), size=full)
        elif name == "s":
            coeffs[name] = skip_init + skip_init_std * rng.normal(size=full)
        else:
            coeffs[name] = np.zeros(full)
    return coeffs


def init_linear(rng: np.random.Generator, out_width: int, in_width: int) -> LinearSpec:
    weight = rng.normal(0.0, 1.0 / math.sqrt(in_width), size=(out_width, in_width))
    return LinearSpec(weight=weight, bias=np.zeros(out_width))


def make_odeblock(rng: np.random.Generator, width: int, hidden: int, *, kind: str = "dense_skip_init",
                  num_basis: int = 1, epsilon: float = 1.0, horizon: float = 1.0,
                  skip_init: float = 0.0, skip_init_std: float = 0.0) -> OdeBlockSpec:
    module = ResidualModuleSpec(kind=kind, in_width=width, hidden=hidden, out_width=width)
    wf = WeightFunction(module.param_group(), num_basis, horizon,
                        init_residual_coefficients(rng, module, num_basis, skip_init, skip_init_std))
    return OdeBlockSpec(module=module, weights=wf, epsilon=epsilon, horizon=horizon)


def make_stitch(rng: np.random.Generator, in_width: int, out_width: int, *, hidden: int | None = None,
                eps: float = 1.0) -> StitchSpec:
    hidden = hidden if hidden is not None else out_width
    theta = {
        "A": rng.normal(0.0, 1.0 / math.sqrt(hidden), size=(out_width, hidden)),
        "W": rng.normal(0.0, 1.0 / math.sqrt(in_width), size=(hidden, in_width)),
        "b": np.zeros(hidden),
    }
    return StitchSpec(down=init_linear(rng, out_width, in_width), theta=theta, eps=eps)


def default_classifier(*, in_width: int = 2, widths: tuple[int, ...] = (16, 32, 64),
                       classes: int = 2, num_basis: int = 1, epsilon: float = 1.0,
                       hidden: tuple[int, ...] | None = None,
                       module_kind: str = "dense_skip_init", nt_build: int | None = None,
                       stitch_eps: float | None = None, skip_init: float = 0.0,
                       skip_init_std: float = 0.0, seed: int = 0) -> ModelSpec:
    """Desk-scale three-block classifier with dense stitches.

    The stitch scaling defaults to eps * horizon / dt of the build-time
    manifestation and stays frozen afterwards: sweeps and refinement events
    never rescale a stitch.
    """
    rng = np.random.default_rng(seed)
    nt_build = nt_build if nt_build is not None else num_basis
    hidden = hidden if hidden is not None else widths
    if stitch_eps is None:
        stitch_eps = stitch_epsilon(epsilon, 1.0, 1.0 / nt_build)
    lift = init_linear(rng, widths[0], in_width)
    blocks = [
        make_odeblock(rng, w, h, kind=module_kind, num_basis=num_basis, epsilon=epsilon,
                      skip_init=skip_init, skip_init_std=skip_init_std)
        for w, h in zip(widths, hidden)
    ]
    stitches = [
        make_stitch(rng, widths[i], widths[i + 1], eps=stitch_eps)
        for i in range(len(widths) - 1)
    ]
    head = init_linear(rng, classes, widths[-1])
    return build_classifier(blocks, stitches, head=head, lift=lift)
