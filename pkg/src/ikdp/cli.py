"""``ikdp`` command line.

Exit codes: 0 success, 1 usage error, 2 runtime error. Errors go to stderr
as one line: ``ikdp: error: kind=<usage|runtime> command=<cmd> message=<...>``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import (
    MlpBaselineConfig,
    benchmark_solve,
    make_solver,
    mlp_train,
    write_bench_report,
)
from .checkpoint import KIND_DENOISER, KIND_MLP, load_checkpoint, save_checkpoint
from .dataset import generate, load_csv, save_csv
from .diffusion import DEFAULT_TIMESTEPS, linear_schedule
from .kinematics import ChainSpec, forward_kinematics, target_distance
from .rng import Rng
from .trainer import TrainingConfig, checkpoint_solver, evaluate_solver, train
from .viz import emit_noising_histogram, emit_trace_svg

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
EVAL_HEADER = "n_targets,samples_per_target,mean_angle_distance,mean_target_distance"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _point(text: str) -> tuple[float, float]:
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y, got {text!r}") from None
    return x, y


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ikdp", description="Planar inverse kinematics by conditional diffusion.")
    p.add_argument("--version", action="version", version=f"ikdp {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    g = sub.add_parser("gen", help="generate a dataset CSV")
    g.add_argument("--joints", type=int, required=True)
    g.add_argument("--count", type=int, default=100_000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train the diffusion denoiser")
    t.add_argument("--data", required=True)
    t.add_argument("--timesteps", type=int, default=DEFAULT_TIMESTEPS)
    t.add_argument("--beta-start", type=float, default=None,
                   help="default: 1e-4 rescaled by 1000/timesteps")
    t.add_argument("--beta-end", type=float, default=None,
                   help="default: 0.02 rescaled by 1000/timesteps")
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--batch", type=int, default=128)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--param", choices=("x0", "eps"), default="eps")
    t.add_argument("--max-steps", type=int, default=None, help="stop after this many optimizer steps")
    t.add_argument("--eval-every", type=int, default=100, help="log the probe distance every k steps")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--log", default=None)
    t.add_argument("--no-plot", action="store_true", help="skip the PNG written next to --log")

    def sample_flags(sp, trace_required: bool):
        sp.add_argument("--ckpt", required=True)
        sp.add_argument("--target", type=_point, required=True)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--trace", required=trace_required, default=None)
        sp.add_argument("--count", type=int, default=1)

    sample_flags(sub.add_parser("sample", help="solve IK for one target"), False)
    sample_flags(sub.add_parser("viz-trace", help="sample and draw the denoising trace"), True)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset CSV")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", default=None)
    e.add_argument("--samples", type=int, default=1)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--no-plot", action="store_true")

    b = sub.add_parser("baseline", help="MLP baseline")
    bsub = b.add_subparsers(dest="action", parser_class=_Parser, required=True)
    bt = bsub.add_parser("train")
    bt.add_argument("--data", required=True)
    bt.add_argument("--hidden", type=_int_list, default=[256, 256])
    bt.add_argument("--epochs", type=int, default=10)
    bt.add_argument("--batch", type=int, default=128)
    bt.add_argument("--lr", type=float, default=1e-3)
    bt.add_argument("--seed", type=int, default=0)
    bt.add_argument("--max-steps", type=int, default=None)
    bt.add_argument("--out", required=True)
    bt.add_argument("--log", default=None)
    be = bsub.add_parser("eval")
    be.add_argument("--ckpt", required=True)
    be.add_argument("--data", required=True)
    be.add_argument("--report", default=None)
    be.add_argument("--no-plot", action="store_true")

    bn = sub.add_parser("bench", help="time single-target solves")
    bn.add_argument("--ckpt", required=True)
    bn.add_argument("--baseline-ckpt", default=None)
    bn.add_argument("--targets", required=True)
    bn.add_argument("--reps", type=int, default=100)
    bn.add_argument("--seed", type=int, default=0)
    bn.add_argument("--report", default=None)
    bn.add_argument("--no-plot", action="store_true")

    vn = sub.add_parser("viz-noising", help="histograms of the forward noising process")
    vn.add_argument("--data", required=True)
    vn.add_argument("--timesteps", type=int, default=DEFAULT_TIMESTEPS)
    vn.add_argument("--beta-start", type=float, default=None)
    vn.add_argument("--beta-end", type=float, default=None)
    vn.add_argument("--steps", type=_int_list, default=[0, 20, 40, 80])
    vn.add_argument("--bins", type=int, default=20)
    vn.add_argument("--seed", type=int, default=0)
    vn.add_argument("--out", required=True)

    sw = sub.add_parser("sweep", help="median-of-seeds trend report over timesteps or joints")
    sw.add_argument("--vary", choices=("timesteps", "joints"), required=True)
    sw.add_argument("--values", type=_int_list, required=True)
    sw.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    sw.add_argument("--joints", type=int, default=4)
    sw.add_argument("--timesteps", type=int, default=DEFAULT_TIMESTEPS)
    sw.add_argument("--count", type=int, default=50_000)
    sw.add_argument("--epochs", type=int, default=10)
    sw.add_argument("--eval-count", type=int, default=1000)
    sw.add_argument("--report", required=True)
    sw.add_argument("--no-plot", action="store_true")
    return p


def _write(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def _eval_report(metrics: dict, path, plot: bool, distances=None) -> None:
    _write(path, EVAL_HEADER + "\n" + ",".join(repr(metrics[k]) if isinstance(metrics[k], float) else str(metrics[k])
                                               for k in EVAL_HEADER.split(",")) + "\n")
    if plot and distances is not None:
        from .plotting import plot_eval, sidecar

        plot_eval(distances, sidecar(path))


def _print_metrics(metrics: dict) -> None:
    print(f"targets={metrics['n_targets']} samples_per_target={metrics['samples_per_target']}")
    print(f"mean_angle_distance={metrics['mean_angle_distance']:.6f}")
    print(f"mean_target_distance={metrics['mean_target_distance']:.6f}")


def _cmd_gen(a) -> None:
    if a.count < 1:
        raise UsageError("--count must be >= 1")
    ds = generate(ChainSpec(a.joints), a.count, a.seed)
    save_csv(ds, a.out)
    print(f"wrote {len(ds)} records to {a.out}")


def _cmd_train(a) -> None:
    ds = load_csv(a.data)
    cfg = TrainingConfig(epochs=a.epochs, batch_size=a.batch, lr=a.lr, timesteps=a.timesteps,
                         beta_start=a.beta_start, beta_end=a.beta_end, param=a.param, seed=a.seed,
                         max_steps=a.max_steps, eval_every=a.eval_every, checkpoint_path=a.out, log_path=a.log)
    result = train(ds, cfg)
    if a.log and not a.no_plot:
        from .plotting import plot_training_curves, sidecar

        plot_training_curves(result.log, sidecar(a.log))
    last = result.log[-1] if result.log else None
    summary = f"steps={result.checkpoint.step}"
    if last is not None:
        summary += f" final_loss={last.loss:.6f} final_dist={last.dist:.6f}"
    print(f"{summary} checkpoint={a.out}")


def _cmd_sample(a) -> None:
    ckpt = load_checkpoint(a.ckpt)
    if ckpt.kind != KIND_DENOISER:
        raise ValueError(f"{a.ckpt} is not a denoiser checkpoint")
    if a.count < 1:
        raise UsageError("--count must be >= 1")
    chain = ckpt.chain
    solve = checkpoint_solver(ckpt)
    rng = Rng(a.seed)
    targets = np.tile(np.asarray(a.target, dtype=np.float64), (a.count, 1))
    theta, trace = solve(targets, rng, trace=a.trace is not None)
    tips = forward_kinematics(chain, theta)
    for i in range(a.count):
        angles = " ".join(f"{v:.6f}" for v in theta[i])
        d = float(target_distance(targets[i], tips[i]))
        print(f"theta={angles} tip={tips[i, 0]:.6f},{tips[i, 1]:.6f} distance={d:.6f}")
    if a.trace:
        emit_trace_svg([s[0] for s in trace], chain, a.target, a.trace)
        print(f"trace={a.trace}")


def _cmd_eval(a) -> None:
    ckpt = load_checkpoint(a.ckpt)
    if ckpt.kind != KIND_DENOISER:
        raise ValueError(f"{a.ckpt} is not a denoiser checkpoint")
    ds = load_csv(a.data, ckpt.chain)
    metrics = evaluate_solver(make_solver("diffusion", ckpt, a.seed), ckpt.chain, ds.thetas, ds.targets, a.samples)
    _finish_eval(metrics, a)


def _finish_eval(metrics: dict, a) -> None:
    _print_metrics(metrics)
    if a.report:
        _eval_report(metrics, a.report, not a.no_plot, metrics["target_distances"])


def _cmd_baseline(a) -> None:
    if a.action == "train":
        ds = load_csv(a.data)
        ckpt, rows = mlp_train(ds, MlpBaselineConfig(hidden=tuple(a.hidden), lr=a.lr, epochs=a.epochs,
                                                     batch_size=a.batch, seed=a.seed,
                                                     max_steps=a.max_steps), a.log)
        save_checkpoint(ckpt, a.out)
        print(f"steps={ckpt.step} final_loss={rows[-1].loss:.6f} checkpoint={a.out}")
        return
    ckpt = load_checkpoint(a.ckpt)
    if ckpt.kind != KIND_MLP:
        raise ValueError(f"{a.ckpt} is not an mlp checkpoint")
    ds = load_csv(a.data, ckpt.chain)
    metrics = evaluate_solver(make_solver("mlp", ckpt), ckpt.chain, ds.thetas, ds.targets)
    _finish_eval(metrics, a)


def _cmd_bench(a) -> None:
    ckpt = load_checkpoint(a.ckpt)
    targets = load_csv(a.targets, ckpt.chain).targets
    rows = [benchmark_solve("diffusion", ckpt, targets, a.reps, seed=a.seed)]
    if a.baseline_ckpt:
        rows.append(benchmark_solve("mlp", load_checkpoint(a.baseline_ckpt), targets, a.reps))
    print(f"hardware={rows[0]['hardware']}")
    for r in rows:
        print(f"{r['solver']}: mean_target_distance={r['mean_target_distance']:.6f} "
              f"mean_s={r['mean_seconds_per_solve']:.6f} median_s={r['median_seconds_per_solve']:.6f}")
    if a.report:
        write_bench_report(rows, a.report)
        if not a.no_plot:
            from .plotting import plot_bench, sidecar

            plot_bench(rows, sidecar(a.report))


def _cmd_viz_noising(a) -> None:
    ds = load_csv(a.data)
    sched = linear_schedule(a.timesteps, a.beta_start, a.beta_end)
    panels = emit_noising_histogram(ds, sched, a.steps, a.bins, a.out, seed=a.seed)
    print(f"wrote {len(panels)} panels to {a.out}")


def _cmd_sweep(a) -> None:
    from .experiments import TrialConfig, sweep, write_sweep_report

    key = "n_joints" if a.vary == "joints" else "timesteps"
    base = TrialConfig(n_joints=a.joints, timesteps=a.timesteps, count=a.count, epochs=a.epochs,
                       eval_count=a.eval_count)
    _, medians = sweep(key, a.values, a.seeds, base)
    write_sweep_report(medians, key, a.report)
    for r in medians:
        print(f"{key}={r[key]} median_angle_distance={r['angle_distance']:.6f} "
              f"median_target_distance={r['target_distance']:.6f}")
    if not a.no_plot:
        from .plotting import plot_sweep, sidecar

        plot_sweep(medians, key, sidecar(a.report))


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "sample": _cmd_sample,
    "viz-trace": _cmd_sample,
    "eval": _cmd_eval,
    "baseline": _cmd_baseline,
    "bench": _cmd_bench,
    "viz-noising": _cmd_viz_noising,
    "sweep": _cmd_sweep,
}


def _fail(kind: str, command: str | None, exc: BaseException) -> None:
    message = " ".join(str(exc).split())
    print(f"ikdp: error: kind={kind} command={command or '-'} message={message}", file=sys.stderr)


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    command = next((a for a in argv if not a.startswith("-")), None)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        _fail("usage", command, exc)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _COMMANDS[args.command](args)
    except UsageError as exc:
        _fail("usage", args.command, exc)
        return EXIT_USAGE
    except (OSError, ValueError, ArithmeticError, RuntimeError) as exc:
        _fail("runtime", args.command, exc)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(run())
