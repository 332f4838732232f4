"""Lossless model/graph files and delimited report export.

Model and graph files are JSON with every float stored as its hex
representation (float.hex), so a save/load round trip is bit-exact and a
re-saved file is byte-identical.  Files carry a format name and version;
anything else is rejected.  Writes go through a temp file and rename.
"""

import csv
import json
import math
import os
import tempfile
from dataclasses import asdict

import numpy as np

from .basis import WeightFunction
from .blocks import (
    GraphDescription,
    GraphStage,
    LinearSpec,
    Manifestation,
    ModelSpec,
    OdeBlockSpec,
    ResidualModuleSpec,
    StitchSpec,
    build_classifier,
    manifest,
)
from .experiments import ConvergenceRow, ConvergenceTable, ManifestationReport, PendulumModel, SweepCell
from .pendulum import PendulumConfig
from .training import EpochMetrics, TrainResult

MODEL_FORMAT = "odeblocks-model"
GRAPH_FORMAT = "odeblocks-graph"
FORMAT_VERSION = 1


class ModelFileError(ValueError):
    """Base class for persistence failures."""


class VersionError(ModelFileError):
    """Unknown format name or version."""


class CorruptFileError(ModelFileError):
    """File is not parseable as a model/graph file."""


class ShapeInconsistencyError(ModelFileError):
    """Stored shapes do not match the stored data."""


# ---------------------------------------------------------------------------
# hex-float tensor codec
# ---------------------------------------------------------------------------

def encode_array(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape), "hex": [float(v).hex() for v in arr.reshape(-1)]}


def decode_array(obj) -> np.ndarray:
    if not isinstance(obj, dict) or "shape" not in obj or "hex" not in obj:
        raise CorruptFileError("tensor entry must carry 'shape' and 'hex'")
    shape = tuple(int(d) for d in obj["shape"])
    data = obj["hex"]
    if math.prod(shape) != len(data):
        raise ShapeInconsistencyError(
            f"tensor of shape {shape} needs {math.prod(shape)} values, file has {len(data)}"
        )
    try:
        values = [float.fromhex(h) for h in data]
    except (TypeError, ValueError) as exc:
        raise CorruptFileError(f"bad hex float in tensor: {exc}") from None
    return np.array(values, dtype=np.float64).reshape(shape)


def _atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=1) + "\n"


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptFileError(f"{path}: not a valid model file ({exc})") from None
    if not isinstance(payload, dict):
        raise CorruptFileError(f"{path}: expected a JSON object")
    return payload


def _check_header(payload: dict, expected_format: str, path: str) -> None:
    if "format" not in payload or "version" not in payload:
        raise CorruptFileError(f"{path}: missing format/version header")
    if payload["format"] != expected_format:
        raise VersionError(f"{path}: format {payload['format']!r}, expected {expected_format!r}")
    if payload["version"] != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported version {payload['version']!r}")


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------

def _linear_payload(spec: LinearSpec | None):
    if spec is None:
        return None
    return {"weight": encode_array(spec.weight), "bias": encode_array(spec.bias)}


def _linear_from(obj) -> LinearSpec | None:
    if obj is None:
        return None
    return LinearSpec(weight=decode_array(obj["weight"]), bias=decode_array(obj["bias"]))


def _classifier_payload(model: ModelSpec) -> dict:
    blocks = []
    for b in model.blocks:
        blocks.append({
            "module_kind": b.module.kind,
            "in_width": b.module.in_width,
            "hidden": b.module.hidden,
            "out_width": b.module.out_width,
            "epsilon": float(b.epsilon).hex(),
            "horizon": float(b.horizon).hex(),
            "basis_kind": "piecewise-constant",
            "num_basis": b.weights.num_basis,
            "coefficients": {name: encode_array(c) for name, c in b.weights.coefficients.items()},
        })
    stitches = []
    for st in model.stitches:
        stitches.append({
            "eps": float(st.eps).hex(),
            "down": _linear_payload(st.down),
            "theta": {name: encode_array(st.theta[name]) for name in ("A", "W", "b")},
        })
    return {
        "lift": _linear_payload(model.lift),
        "blocks": blocks,
        "stitches": stitches,
        "head": _linear_payload(model.head),
    }


def _classifier_from(obj) -> ModelSpec:
    blocks = []
    for bo in obj["blocks"]:
        module = ResidualModuleSpec(kind=bo["module_kind"], in_width=int(bo["in_width"]),
                                    hidden=int(bo["hidden"]), out_width=int(bo["out_width"]))
        coeffs = {name: decode_array(c) for name, c in bo["coefficients"].items()}
        horizon = float.fromhex(bo["horizon"])
        try:
            wf = WeightFunction(module.param_group(), int(bo["num_basis"]), horizon, coeffs)
        except ValueError as exc:
            raise ShapeInconsistencyError(str(exc)) from None
        blocks.append(OdeBlockSpec(module=module, weights=wf,
                                   epsilon=float.fromhex(bo["epsilon"]), horizon=horizon))
    stitches = []
    for so in obj["stitches"]:
        stitches.append(StitchSpec(
            down=_linear_from(so["down"]),
            theta={name: decode_array(so["theta"][name]) for name in ("A", "W", "b")},
            eps=float.fromhex(so["eps"]),
        ))
    return build_classifier(blocks, stitches, head=_linear_from(obj["head"]),
                            lift=_linear_from(obj["lift"]))


def save_model(model, path: str, provenance: dict | None = None) -> None:
    """Write a PendulumModel or classifier ModelSpec losslessly."""
    payload: dict = {"format": MODEL_FORMAT, "version": FORMAT_VERSION,
                     "provenance": provenance or {}}
    if isinstance(model, PendulumModel):
        payload["kind"] = "pendulum"
        payload["provenance"] = {**model.provenance, **(provenance or {})}
        payload["pendulum"] = {
            "scheme": model.scheme,
            "dt_data": float(model.dt_data).hex(),
            "hidden": model.hidden,
            "gravity": float(model.config.gravity).hex(),
            "rho0": float(model.config.rho0).hex(),
            "v0": float(model.config.v0).hex(),
            "params": {name: encode_array(model.params[name]) for name in ("A", "W", "b")},
        }
    elif isinstance(model, ModelSpec):
        payload["kind"] = "classifier"
        payload["classifier"] = _classifier_payload(model)
    else:
        raise TypeError(f"cannot save object of type {type(model).__name__}")
    _atomic_write_text(path, _dump_json(payload))


def load_model(path: str):
    """Inverse of save_model; returns PendulumModel or ModelSpec."""
    payload = _load_json(path)
    _check_header(payload, MODEL_FORMAT, path)
    kind = payload.get("kind")
    if kind == "pendulum":
        po = payload["pendulum"]
        cfg = PendulumConfig(gravity=float.fromhex(po["gravity"]),
                             rho0=float.fromhex(po["rho0"]),
                             v0=float.fromhex(po["v0"]))
        params = {name: decode_array(po["params"][name]) for name in ("A", "W", "b")}
        if params["A"].ndim != 2 or params["W"].ndim != 2 or params["b"].ndim != 1:
            raise ShapeInconsistencyError(f"{path}: pendulum parameter ranks are wrong")
        return PendulumModel(scheme=po["scheme"], dt_data=float.fromhex(po["dt_data"]),
                             hidden=int(po["hidden"]), params=params, config=cfg,
                             provenance=dict(payload.get("provenance", {})))
    if kind == "classifier":
        try:
            return _classifier_from(payload["classifier"])
        except KeyError as exc:
            raise CorruptFileError(f"{path}: missing field {exc}") from None
    raise CorruptFileError(f"{path}: unknown model kind {kind!r}")


def load_provenance(path: str) -> dict:
    payload = _load_json(path)
    _check_header(payload, MODEL_FORMAT, path)
    return dict(payload.get("provenance", {}))


# ---------------------------------------------------------------------------
# graph files: a classifier frozen into explicit stage lists
# ---------------------------------------------------------------------------

def _graph_payload(graph: GraphDescription, coefficients: dict[str, np.ndarray]) -> dict:
    return {
        "scheme": graph.scheme,
        "num_steps": graph.num_steps,
        "num_basis": graph.num_basis,
        "horizon": float(graph.horizon).hex(),
        "epsilon": float(graph.epsilon).hex(),
        "dt": float(graph.dt).hex(),
        "b": [float(v).hex() for v in graph.b],
        "module_kind": graph.module_kind,
        "in_width": graph.in_width,
        "hidden": graph.hidden,
        "out_width": graph.out_width,
        "stages": [
            {"step": st.step, "stage": st.stage, "time": float(st.time).hex(),
             "interval": st.interval, "a_row": [float(v).hex() for v in st.a_row]}
            for st in graph.stages
        ],
        "coefficients": {name: encode_array(c) for name, c in coefficients.items()},
    }


def _graph_from(obj) -> tuple[GraphDescription, dict[str, np.ndarray]]:
    stages = tuple(
        GraphStage(step=int(st["step"]), stage=int(st["stage"]),
                   time=float.fromhex(st["time"]), interval=int(st["interval"]),
                   a_row=tuple(float.fromhex(v) for v in st["a_row"]))
        for st in obj["stages"]
    )
    graph = GraphDescription(
        scheme=obj["scheme"], num_steps=int(obj["num_steps"]), num_basis=int(obj["num_basis"]),
        horizon=float.fromhex(obj["horizon"]), epsilon=float.fromhex(obj["epsilon"]),
        dt=float.fromhex(obj["dt"]), b=tuple(float.fromhex(v) for v in obj["b"]),
        module_kind=obj["module_kind"], in_width=int(obj["in_width"]),
        hidden=int(obj["hidden"]), out_width=int(obj["out_width"]), stages=stages,
    )
    coeffs = {name: decode_array(c) for name, c in obj["coefficients"].items()}
    return graph, coeffs


def save_graph(model: ModelSpec, mani: Manifestation, path: str) -> None:
    """Manifest every block of a classifier and freeze the full static net."""
    payload = {
        "format": GRAPH_FORMAT,
        "version": FORMAT_VERSION,
        "scheme": mani.scheme,
        "num_steps": mani.num_steps,
        "lift": _linear_payload(model.lift),
        "head": _linear_payload(model.head),
        "stitches": [
            {"eps": float(st.eps).hex(), "down": _linear_payload(st.down),
             "theta": {name: encode_array(st.theta[name]) for name in ("A", "W", "b")}}
            for st in model.stitches
        ],
        "blocks": [
            _graph_payload(manifest(block, mani), block.weights.coefficients)
            for block in model.blocks
        ],
    }
    _atomic_write_text(path, _dump_json(payload))


def load_graph(path: str) -> dict:
    """Raw replayable structure: lift/stitch/head tensors plus per-block
    (GraphDescription, coefficients) pairs."""
    payload = _load_json(path)
    _check_header(payload, GRAPH_FORMAT, path)
    return {
        "scheme": payload["scheme"],
        "num_steps": int(payload["num_steps"]),
        "lift": _linear_from(payload["lift"]),
        "head": _linear_from(payload["head"]),
        "stitches": [
            {"eps": float.fromhex(so["eps"]), "down": _linear_from(so["down"]),
             "theta": {name: decode_array(so["theta"][name]) for name in ("A", "W", "b")}}
            for so in payload["stitches"]
        ],
        "blocks": [_graph_from(bo) for bo in payload["blocks"]],
    }


def replay_graph(graph_data: dict, x: np.ndarray) -> np.ndarray:
    """Execute a loaded graph file without consulting tableaus or bases."""
    from .blocks import affine, run_graph, stitch_forward

    h = np.asarray(x, dtype=np.float64)
    if graph_data["lift"] is not None:
        h = affine(h, graph_data["lift"].weight, graph_data["lift"].bias)
    for i, (graph, coeffs) in enumerate(graph_data["blocks"]):
        h = run_graph(graph, lambda idx, _c=coeffs: {n: a[idx] for n, a in _c.items()}, h)
        if i < len(graph_data["stitches"]):
            so = graph_data["stitches"][i]
            h = stitch_forward(h, so["theta"], so["down"], so["eps"])
    if graph_data["head"] is not None:
        h = affine(h, graph_data["head"].weight, graph_data["head"].bias)
    return h


# ---------------------------------------------------------------------------
# report export
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def report_rows(report) -> tuple[list[str], list[list]]:
    """Header and rows for any exportable report object."""
    if isinstance(report, ConvergenceTable):
        report = [report]
    if isinstance(report, list) and all(isinstance(t, ConvergenceTable) for t in report):
        header = ["dt", "error", "scheme", "diverged"]
        rows = [[r.dt, r.error, t.label, int(r.diverged)] for t in report for r in t.rows]
        return header, rows
    if isinstance(report, ManifestationReport):
        header = ["train_scheme", "eval_scheme", "nt", "e_test", "seconds"]
        rows = [[report.train_scheme, c.eval_scheme, c.num_steps, c.error, c.seconds]
                for c in report.cells]
        return header, rows
    if isinstance(report, TrainResult):
        header = ["epoch", "loss", "accuracy", "seconds", "num_steps", "param_count"]
        rows = [[m.epoch, m.loss, m.accuracy, m.seconds, m.num_steps, m.param_count]
                for m in report.metrics]
        return header, rows
    raise TypeError(f"cannot export report of type {type(report).__name__}")


def export_report(report, path: str, format: str = "csv") -> None:
    """Write a report as CSV (17-significant-digit floats) or JSON."""
    header, rows = report_rows(report)
    if format == "csv":
        lines = [",".join(header)]
        lines += [",".join(_fmt(v) for v in row) for row in rows]
        _atomic_write_text(path, "\n".join(lines) + "\n")
    elif format == "json":
        payload = {"columns": header,
                   "rows": [[v if not isinstance(v, float) else float(_fmt(v)) for v in row]
                            for row in rows]}
        _atomic_write_text(path, _dump_json(payload))
    else:
        raise ValueError(f"unknown report format {format!r}; choose csv or json")
