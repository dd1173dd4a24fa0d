"""Direct-regression MLP baseline and single-target solve benchmarking."""
from __future__ import annotations

import math
import platform
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import KIND_DENOISER, KIND_MLP, Checkpoint, format_value
from .dataset import Dataset
from .denoiser import normalize_condition
from .kinematics import ChainSpec, forward_kinematics, target_distance
from .rng import Rng
from .tensor import Tensor
from .trainer import DATA_STREAM, LogRow, TrainingError, arrays_to_params, checkpoint_solver, params_to_arrays, write_log

BENCH_HEADER = "solver,n_joints,T,mean_target_distance,mean_seconds_per_solve"
WARMUP_SOLVES = 10


@dataclass
class MlpBaselineConfig:
    hidden: tuple[int, ...] = (256, 256)
    lr: float = 1e-3
    epochs: int = 10
    batch_size: int = 128
    seed: int = 0
    max_steps: int | None = None

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError(f"hidden widths must be positive, got {self.hidden}")


def _shapes(n_joints: int, hidden: tuple[int, ...]) -> dict[str, tuple[int, ...]]:
    widths = (2,) + hidden
    shapes = {}
    for i in range(len(hidden)):
        shapes[f"l{i}.w"] = (widths[i], widths[i + 1])
        shapes[f"l{i}.b"] = (widths[i + 1],)
    shapes["out.w"] = (hidden[-1], n_joints)
    shapes["out.b"] = (n_joints,)
    return shapes


def mlp_param_shapes(ckpt: Checkpoint) -> dict[str, tuple[int, ...]]:
    hidden = tuple(int(h) for h in ckpt.meta["mlp.hidden"].split(","))
    return _shapes(int(ckpt.meta["chain.n_joints"]), hidden)


def _init(n_joints: int, hidden: tuple[int, ...], rng: Rng) -> dict[str, Tensor]:
    params = {}
    for name, shape in _shapes(n_joints, hidden).items():
        value = rng.normal(shape) / math.sqrt(shape[0]) if name.endswith(".w") else np.zeros(shape)
        params[name] = Tensor(value, requires_grad=True, name=name)
    return params


def mlp_forward(params: dict[str, Tensor], targets, reach: float) -> Tensor:
    h = Tensor(normalize_condition(targets, reach).reshape(-1, 2))
    i = 0
    while f"l{i}.w" in params:
        h = T.gelu(h @ params[f"l{i}.w"] + params[f"l{i}.b"])
        i += 1
    return h @ params["out.w"] + params["out.b"]


def mlp_train(ds: Dataset, cfg: MlpBaselineConfig, log_path=None) -> tuple[Checkpoint, list[LogRow]]:
    """Regress angles straight from the target with an MSE loss on the angles."""
    if len(ds) == 0:
        raise ValueError("cannot train on an empty dataset")
    chain = ds.chain
    params = _init(chain.num_joints, cfg.hidden, Rng(cfg.seed))
    opt = T.Adam(params, lr=cfg.lr)
    rng = Rng(cfg.seed ^ DATA_STREAM)
    rows: list[LogRow] = []
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(ds))
        for start in range(0, len(ds), cfg.batch_size):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            idx = order[start:start + cfg.batch_size]
            pred = mlp_forward(params, ds.targets[idx], chain.reach)
            loss = T.mse(pred, Tensor(ds.thetas[idx]))
            value = loss.item()
            if not math.isfinite(value):
                T.clear_tape()
                raise TrainingError(step + 1, "non-finite loss")
            T.backward(loss)
            opt.step()
            opt.zero_grad()
            step += 1
            rows.append(LogRow(step, value))
    meta = {
        "chain.n_joints": chain.num_joints,
        "chain.bone_lengths": chain.bone_lengths,
        "mlp.hidden": cfg.hidden,
        "train.step": step,
        "train.seed": cfg.seed,
    }
    ckpt = Checkpoint(KIND_MLP, {k: format_value(v) for k, v in meta.items()}, params_to_arrays(params))
    if log_path:
        write_log(rows, log_path)
    return ckpt, rows


def mlp_solver(ckpt: Checkpoint):
    if ckpt.kind != KIND_MLP:
        raise ValueError(f"expected an mlp checkpoint, got {ckpt.kind!r}")
    params = arrays_to_params(ckpt.params)
    reach = ckpt.chain.reach

    def solve(targets, rng: Rng | None = None):
        with T.no_grad():
            return mlp_forward(params, targets, reach).data.astype(np.float64)

    return solve


def make_solver(kind: str, ckpt: Checkpoint, seed: int = 0):
    """Uniform ``targets (B,2) -> theta (B,N)`` solver for either method."""
    if kind == "mlp":
        solve = mlp_solver(ckpt)
        return lambda targets: solve(targets)
    if kind == "diffusion":
        if ckpt.kind != KIND_DENOISER:
            raise ValueError(f"expected a denoiser checkpoint, got {ckpt.kind!r}")
        rng = Rng(seed)
        solve = checkpoint_solver(ckpt)
        return lambda targets: solve(targets, rng)[0]
    raise ValueError(f"unknown solver {kind!r}")


def benchmark_solve(kind: str, ckpt: Checkpoint, targets, repetitions: int,
                    warmup: int = WARMUP_SOLVES, seed: int = 0) -> dict:
    """Time one-target-at-a-time solves; warmup solves are run first and not timed."""
    if repetitions < 1:
        raise ValueError(f"repetitions must be >= 1, got {repetitions}")
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    if len(targets) == 0:
        raise ValueError("no benchmark targets")
    chain: ChainSpec = ckpt.chain
    solve = make_solver(kind, ckpt, seed)
    for i in range(warmup):
        solve(targets[i % len(targets)][None])
    times, dists = [], []
    for i in range(repetitions):
        target = targets[i % len(targets)][None]
        start = time.perf_counter()
        theta = solve(target)
        times.append(time.perf_counter() - start)
        dists.append(float(target_distance(target, forward_kinematics(chain, theta))[0]))
    return {
        "solver": kind,
        "n_joints": chain.num_joints,
        "T": int(ckpt.meta["schedule.timesteps"]) if kind == "diffusion" else None,
        "mean_target_distance": float(np.mean(dists)),
        "mean_seconds_per_solve": float(np.mean(times)),
        "median_seconds_per_solve": float(statistics.median(times)),
        "repetitions": repetitions,
        "hardware": f"{platform.machine()} {platform.processor() or platform.system()}".strip(),
    }


def write_bench_report(rows: list[dict], path) -> None:
    lines = [BENCH_HEADER]
    for r in rows:
        t = "" if r["T"] is None else str(r["T"])
        lines.append(f"{r['solver']},{r['n_joints']},{t},{r['mean_target_distance']!r},{r['mean_seconds_per_solve']!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
