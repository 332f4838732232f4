"""Command-line surface driving every pipeline.

Every subcommand takes --seed and --out; report-producing commands write a
CSV table plus a rendered figure with the same basename.  Exit codes: 0 ok,
1 runtime failure, 2 usage error.  The ODEBLOCKS_OUT environment variable
sets the default output directory (default: current directory).
"""

import argparse
import os
import sys

import numpy as np

from . import experiments as ex
from . import figures, persistence
from .blocks import Manifestation, classifier_forward, model_with_params, params_of
from .experiments import PendulumModel
from .integrators import SCHEME_NAMES
from .pendulum import PendulumConfig
from .training import TrainingDivergedError

SCHEME_CHOICES = ("euler", "midpoint", "rk4", "rk4-38")


class UsageError(ValueError):
    """Invalid flag combination; exits with status 2."""


def _out_dir() -> str:
    return os.environ.get("ODEBLOCKS_OUT", ".")


def _resolve_out(arg_out: str | None, default_name: str) -> str:
    if arg_out:
        return arg_out
    return os.path.join(_out_dir(), default_name)


def _with_suffix(path: str, suffix: str) -> str:
    root, _ = os.path.splitext(path)
    return root + suffix


def _parse_float_list(text: str, flag: str) -> list[float]:
    try:
        values = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated numbers, got {text!r}")
    if not values:
        raise UsageError(f"{flag}: empty list")
    return values


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        values = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated integers, got {text!r}")
    return values


def _load_pendulum(path: str) -> PendulumModel:
    model = persistence.load_model(path)
    if not isinstance(model, PendulumModel):
        raise UsageError(f"{path} is not a pendulum model")
    return model


def _load_classifier(path: str):
    model = persistence.load_model(path)
    if isinstance(model, PendulumModel):
        raise UsageError(f"{path} is a pendulum model; this command needs a classifier")
    return model


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_train_pendulum(args) -> int:
    cfg = PendulumConfig(gravity=args.gravity, rho0=args.rho0)
    dataset = ex.make_pendulum_dataset(args.dt_data, args.pairs, cfg)
    model = ex.train_odenet(args.scheme, dataset, hidden=args.hidden, seed=args.seed,
                            epochs=args.epochs, lr=args.lr,
                            lr_drops=tuple(_parse_int_list(args.lr_drops, "--lr-drops")) if args.lr_drops else ())
    out = _resolve_out(args.out, f"pendulum-{model.scheme}.model.json")
    persistence.save_model(model, out)
    loss = model.provenance["final_one_step_loss"]
    print(f"trained ODE-Net({model.scheme}): one-step loss {loss:.3e} -> {out}")
    return 0


def _cmd_convergence(args) -> int:
    model = _load_pendulum(args.model)
    dt_list = _parse_float_list(args.dt_list, "--dt-list")
    eval_scheme = args.eval_scheme or model.scheme
    tables = [ex.convergence_study(model, eval_scheme, dt_list, model.config, args.t_final)]
    if args.baseline:
        tables.append(ex.true_rhs_convergence(eval_scheme, dt_list, model.config, args.t_final))
    out = _resolve_out(args.out, f"convergence-{model.scheme}-eval-{eval_scheme}.csv")
    persistence.export_report(tables, out, format=args.format)
    figures.convergence_figure(tables, _with_suffix(out, ".png"))
    for t in tables:
        print(f"{t.label}: slope {t.slope:.3f}")
    print(f"wrote {out} and {_with_suffix(out, '.png')}")
    return 0


def _cmd_interchange(args) -> int:
    model = _load_pendulum(args.model)
    dt_list = _parse_float_list(args.dt_list, "--dt-list")
    tables = ex.interchange_study(model, dt_list, model.config, args.t_final)
    if args.baseline:
        for scheme in SCHEME_CHOICES:
            tables.append(ex.true_rhs_convergence(scheme, dt_list, model.config, args.t_final))
    out = _resolve_out(args.out, f"interchange-{model.scheme}.csv")
    persistence.export_report(tables, out, format=args.format)
    figures.convergence_figure(tables, _with_suffix(out, ".png"),
                               title=f"G trained with {model.scheme} in other graphs")
    print(f"wrote {out} and {_with_suffix(out, '.png')}")
    return 0


def _cmd_train_classifier(args) -> int:
    refine_at = tuple(_parse_int_list(args.refine_at, "--refine-at")) if args.refine_at else ()
    data = ex.make_synthetic_classification(args.train_size, args.test_size,
                                            noise=args.noise, seed=args.seed)
    model, mani, result, _ = ex.train_classifier(
        args.scheme, args.nt, refine_at=refine_at, epochs=args.epochs, data=data,
        seed=args.seed, widths=tuple(_parse_int_list(args.widths, "--widths")),
        hidden=tuple(_parse_int_list(args.hidden, "--hidden")) if args.hidden else None,
        epsilon=args.eps, stitch_eps=args.stitch_eps, skip_init=args.skip_init,
        optimizer=args.optimizer, lr=args.lr, batch_size=args.batch_size,
    )
    out = _resolve_out(args.out, f"classifier-{mani.scheme}-nt{mani.num_steps}.model.json")
    provenance = {
        "seed": args.seed,
        "train_scheme": mani.scheme,
        "train_num_steps": mani.num_steps,
        "refine_at": list(refine_at),
        "epochs": args.epochs,
        "noise": args.noise,
        "final_loss": result.final_loss,
        "final_accuracy": result.metrics[-1].accuracy,
    }
    persistence.save_model(model, out, provenance=provenance)
    metrics_path = _with_suffix(out, ".metrics.csv")
    persistence.export_report(result, metrics_path, format="csv")
    figures.training_figure(result, _with_suffix(out, ".metrics.png"))
    err = ex.test_error(model, mani, data.x_test, data.y_test)
    print(f"trained classifier[{mani.scheme}, nt={mani.num_steps}]: "
          f"loss {result.final_loss:.4f}, test error {err:.3f} -> {out}")
    for ev in result.events:
        print(f"  refined at epoch {ev.epoch}: nt={ev.num_steps}, params={ev.param_count}, "
              f"held loss {ev.loss_before:.4f} -> {ev.loss_after:.4f}")
    return 0


def _cmd_sweep(args) -> int:
    model = _load_classifier(args.model)
    schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
    nt_list = _parse_int_list(args.nt_list, "--nt-list")
    prov = persistence.load_provenance(args.model)
    train_scheme = prov.get("train_scheme", schemes[0])
    data = ex.make_synthetic_classification(args.train_size, args.test_size,
                                            noise=args.noise, seed=args.seed)
    report = ex.manifestation_sweep(model, train_scheme, schemes, nt_list,
                                    data.x_test, data.y_test)
    out = _resolve_out(args.out, f"sweep-{train_scheme}.csv")
    persistence.export_report(report, out, format=args.format)
    figures.sweep_figure(report, _with_suffix(out, ".png"))
    for cell in report.cells:
        print(f"  [{cell.eval_scheme}, nt={cell.num_steps}] E_test={cell.error:.3f} "
              f"({cell.seconds*1e3:.1f} ms)")
    print(f"wrote {out} and {_with_suffix(out, '.png')}")
    return 0


def _cmd_manifest(args) -> int:
    model = _load_classifier(args.model)
    mani = Manifestation(args.scheme, args.nt)
    out = _resolve_out(args.out, f"graph-{mani.scheme}-nt{mani.num_steps}.graph.json")
    persistence.save_graph(model, mani, out)
    blocks = len(model.blocks)
    stages = sum(len(persistence.load_graph(out)["blocks"][i][0].stages) for i in range(blocks))
    print(f"manifested [{mani.scheme}, nt={mani.num_steps}]: {blocks} blocks, "
          f"{stages} residual invocations -> {out}")
    return 0


def _cmd_refine_weights(args) -> int:
    from .basis import refine_split

    if args.factor < 2 or args.factor & (args.factor - 1):
        raise UsageError("--factor must be a power of two >= 2")
    model = _load_classifier(args.model)
    blocks = list(model.blocks)
    factor = args.factor
    while factor > 1:
        blocks = [b.__class__(module=b.module, weights=refine_split(b.weights),
                              epsilon=b.epsilon, horizon=b.horizon) for b in blocks]
        factor //= 2
    from dataclasses import replace

    refined = replace(model, blocks=tuple(blocks))
    out = _resolve_out(args.out, "refined.model.json")
    persistence.save_model(refined, out, provenance=persistence.load_provenance(args.model))
    print(f"split weights x{args.factor}: num_basis now "
          f"{refined.blocks[0].weights.num_basis} -> {out}")
    return 0


def _cmd_coarsen_weights(args) -> int:
    from dataclasses import replace

    from .basis import project_coarsen

    model = _load_classifier(args.model)
    blocks = tuple(
        replace(b, weights=project_coarsen(b.weights, args.to_m)) for b in model.blocks
    )
    coarse = replace(model, blocks=blocks)
    out = _resolve_out(args.out, f"coarsened-m{args.to_m}.model.json")
    persistence.save_model(coarse, out, provenance=persistence.load_provenance(args.model))
    print(f"projected weights to {args.to_m} intervals -> {out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="odeblocks",
        description="Continuous-in-depth networks: train, re-manifest, refine, measure.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-pendulum", help="Fit a one-step ODE-Net to exact pendulum data")
    p.add_argument("--scheme", choices=SCHEME_CHOICES, default="rk4")
    p.add_argument("--dt-data", type=float, default=0.1)
    p.add_argument("--pairs", type=int, default=100)
    p.add_argument("--hidden", type=int, default=50)
    p.add_argument("--epochs", type=int, default=6000)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--lr-drops", type=str, default="2000,3500,4500,5500",
                   help="epochs at which the learning rate halves")
    p.add_argument("--gravity", type=float, default=-9.81)
    p.add_argument("--rho0", type=float, default=2.356194490192345)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(func=_cmd_train_pendulum)

    p = sub.add_parser("convergence", help="Global-error study of a trained pendulum model")
    p.add_argument("--model", type=str, required=True)
    p.add_argument("--eval-scheme", choices=SCHEME_CHOICES, default=None,
                   help="graph to evaluate with (default: the training scheme)")
    p.add_argument("--dt-list", type=str, default="0.4,0.2,0.1,0.05,0.025")
    p.add_argument("--t-final", type=float, default=10.0)
    p.add_argument("--baseline", action="store_true", help="add true-RHS baseline rows")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(func=_cmd_convergence)

    p = sub.add_parser("interchange", help="Insert a trained G into every scheme's graph")
    p.add_argument("--model", type=str, required=True)
    p.add_argument("--dt-list", type=str, default="0.4,0.2,0.1,0.05,0.025")
    p.add_argument("--t-final", type=float, default=10.0)
    p.add_argument("--baseline", action="store_true")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(func=_cmd_interchange)

    p = sub.add_parser("train-classifier", help="Train the synthetic annulus classifier")
    p.add_argument("--scheme", choices=SCHEME_CHOICES, default="rk4")
    p.add_argument("--nt", type=int, default=8, help="final steps per block")
    p.add_argument("--refine-at", type=str, default="",
                   help="epochs of refinement events (requires nt = 2**len)")
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--widths", type=str, default="16,32,64")
    p.add_argument("--hidden", type=str, default="")
    p.add_argument("--eps", type=float, default=1.0)
    p.add_argument("--stitch-eps", type=float, default=None)
    p.add_argument("--skip-init", type=float, default=0.0)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--train-size", type=int, default=400)
    p.add_argument("--test-size", type=int, default=400)
    p.add_argument("--noise", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(func=_cmd_train_classifier)

    p = sub.add_parser("sweep", help="Evaluate a frozen classifier over (scheme, nt) graphs")
    p.add_argument("--model", type=str, required=True)
    p.add_argument("--schemes", type=str, default="euler,midpoint,rk4,rk4-38")
    p.add_argument("--nt-list", type=str, default="1,2,4,8,16")
    p.add_argument("--train-size", type=int, default=400)
    p.add_argument("--test-size", type=int, default=400)
    p.add_argument("--noise", type=float, default=0.15)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("manifest", help="Freeze a classifier into an explicit graph file")
    p.add_argument("--model", type=str, required=True)
    p.add_argument("--scheme", choices=SCHEME_CHOICES, required=True)
    p.add_argument("--nt", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(func=_cmd_manifest)

    p = sub.add_parser("refine-weights", help="Split basis intervals (theta unchanged)")
    p.add_argument("--model", type=str, required=True)
    p.add_argument("--factor", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(func=_cmd_refine_weights)

    p = sub.add_parser("coarsen-weights", help="Project weights onto fewer intervals")
    p.add_argument("--model", type=str, required=True)
    p.add_argument("--to-m", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(func=_cmd_coarsen_weights)

    return parser


def cli(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (persistence.ModelFileError, TrainingDivergedError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
