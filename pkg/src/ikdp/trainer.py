"""Training loop for the conditional denoiser, held-out evaluation, log IO."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .checkpoint import KIND_DENOISER, Checkpoint, denoiser_meta
from .dataset import Dataset, split
from .denoiser import DenoiserConfig, forward, init_params, make_sampler_fn
from .diffusion import (
    DEFAULT_TIMESTEPS,
    NoiseSchedule,
    Parameterization,
    linear_schedule,
    q_sample,
    sample,
)
from .kinematics import ChainSpec, angle_distance, forward_kinematics, reachable, target_distance
from .rng import Rng
from .tensor import Tensor

log = logging.getLogger(__name__)

# fixed offsets keep the batch/noise and probe streams apart from the init stream
DATA_STREAM = 0x9E3779B97F4A7C15
PROBE_STREAM = 0xD1B54A32D192ED03
SPLIT_STREAM = 0x94D049BB133111EB
PROBE_SIZE = 64


class TrainingError(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"{message} at step {step}")
        self.step = step


@dataclass
class TrainingConfig:
    epochs: int = 10
    batch_size: int = 128
    lr: float = 1e-3
    timesteps: int = DEFAULT_TIMESTEPS
    beta_start: float | None = None
    beta_end: float | None = None
    param: Parameterization = Parameterization.PREDICT_EPS
    seed: int = 0
    eval_fraction: float = 0.02
    eval_every: int = 100
    max_steps: int | None = None
    checkpoint_path: str | Path | None = None
    log_path: str | Path | None = None

    def __post_init__(self):
        self.param = Parameterization(self.param)
        if self.epochs < 0 or self.batch_size < 1 or not self.lr > 0 or self.eval_every < 1:
            raise ValueError(f"invalid training config: {self}")
        if not 0.0 < self.eval_fraction < 1.0:
            raise ValueError(f"eval_fraction must be in (0, 1), got {self.eval_fraction}")

    def schedule(self) -> NoiseSchedule:
        return linear_schedule(self.timesteps, self.beta_start, self.beta_end)


@dataclass
class LogRow:
    step: int
    loss: float
    dist: float | None = None


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[LogRow] = field(default_factory=list)


def params_to_arrays(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: np.array(v.data, dtype=np.float32) for k, v in params.items()}


def arrays_to_params(arrays: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}


def write_log(rows: list[LogRow], path) -> None:
    lines = ["step,loss,dist"]
    for r in rows:
        dist = "" if r.dist is None else repr(r.dist)
        lines.append(f"{r.step},{r.loss!r},{dist}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_log(path) -> list[LogRow]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines()[1:]:
        step, loss, dist = line.split(",")
        rows.append(LogRow(int(step), float(loss), float(dist) if dist else None))
    return rows


def _probe_dist(params, config: DenoiserConfig, sched: NoiseSchedule, chain: ChainSpec, probe, seed: int) -> float:
    """Mean tip error of full reverse-chain solves for a fixed batch of held-out targets.

    The sampler stream is re-seeded on every call so the curve tracks the
    weights rather than sampling noise.
    """
    theta, _ = sample(make_sampler_fn(params, config), probe, sched, Rng(seed), config.n_joints, config.param)
    return float(np.mean(target_distance(probe, forward_kinematics(chain, theta))))


def train(ds: Dataset, cfg: TrainingConfig, model: DenoiserConfig | None = None,
          on_step: Callable[[LogRow], None] | None = None) -> TrainResult:
    """Fit the denoiser: per batch draw steps and noise, jump to theta_t, regress, Adam."""
    if len(ds) == 0:
        raise ValueError("cannot train on an empty dataset")
    chain = ds.chain
    if model is None:
        model = DenoiserConfig(chain.num_joints, reach=chain.reach, param=cfg.param)
    if model.n_joints != chain.num_joints:
        raise ValueError(f"model has {model.n_joints} joints, dataset {chain.num_joints}")
    if model.param is not cfg.param:
        raise ValueError(f"model parameterization {model.param.value} != training {cfg.param.value}")
    sched = cfg.schedule()

    n_eval = round(len(ds) * cfg.eval_fraction)
    if 1 <= n_eval < len(ds):
        train_ds, held_out = split(ds, 1.0 - cfg.eval_fraction, cfg.seed ^ SPLIT_STREAM)
    else:
        train_ds, held_out = ds, ds
    probe = held_out.targets[:PROBE_SIZE].astype(np.float64)
    probe_seed = cfg.seed ^ PROBE_STREAM
    params = init_params(model, Rng(cfg.seed))
    opt = T.Adam(params, lr=cfg.lr)
    data_rng = Rng(cfg.seed ^ DATA_STREAM)
    rows: list[LogRow] = []
    step = 0
    n = len(train_ds)
    for epoch in range(cfg.epochs):
        order = data_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            idx = order[start:start + cfg.batch_size]
            theta0 = train_ds.thetas[idx]
            targets = train_ds.targets[idx]
            steps = data_rng.integers(1, sched.timesteps, (len(idx),))
            eps = data_rng.normal((len(idx), chain.num_joints)).astype(np.float32)
            theta_t = q_sample(theta0, steps, eps, sched)
            out = forward(params, model, theta_t, steps, targets)
            truth = theta0 if cfg.param is Parameterization.PREDICT_X0 else eps
            loss = T.mse(out, Tensor(truth))
            value = loss.item()
            if not math.isfinite(value):
                T.clear_tape()
                raise TrainingError(step + 1, "non-finite loss")
            T.backward(loss)
            opt.step()
            opt.zero_grad()
            step += 1
            row = LogRow(step, value)
            if step % cfg.eval_every == 0:
                row.dist = _probe_dist(params, model, sched, chain, probe, probe_seed)
            rows.append(row)
            if on_step:
                on_step(row)
        log.debug("epoch %d done at step %d", epoch + 1, step)
    if rows and rows[-1].dist is None:
        rows[-1].dist = _probe_dist(params, model, sched, chain, probe, probe_seed)

    ckpt = Checkpoint(KIND_DENOISER, denoiser_meta(chain, model, sched, step, cfg.seed), params_to_arrays(params))
    if cfg.checkpoint_path:
        from .checkpoint import save_checkpoint

        save_checkpoint(ckpt, cfg.checkpoint_path)
    if cfg.log_path:
        write_log(rows, cfg.log_path)
    return TrainResult(ckpt, rows)


def checkpoint_solver(ckpt: Checkpoint):
    """``(targets (B,2), rng) -> theta (B,N)`` running the full reverse chain."""
    config, sched = ckpt.model_config, ckpt.schedule
    fn = make_sampler_fn(arrays_to_params(ckpt.params), config)

    def solve(targets, rng: Rng, trace: bool = False):
        return sample(fn, targets, sched, rng, config.n_joints, config.param, trace=trace)

    return solve


def evaluate_solver(solve: Callable[[np.ndarray], np.ndarray], chain: ChainSpec, thetas, targets,
                    samples_per_target: int = 1, batch: int = 1000) -> dict[str, float]:
    """Mean angle distance to the ground truth and mean tip error over all samples.

    ``target_distances`` holds the per-sample tip errors behind the mean.
    """
    thetas = np.asarray(thetas, dtype=np.float64).reshape(-1, chain.num_joints)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    if len(targets) == 0:
        raise ValueError("no evaluation targets")
    if samples_per_target < 1:
        raise ValueError("samples_per_target must be >= 1")
    if not np.all(reachable(chain, targets, tol=1e-4)):
        raise ValueError("evaluation targets must be reachable by the chain")
    rep_thetas = np.repeat(thetas, samples_per_target, axis=0)
    rep_targets = np.repeat(targets, samples_per_target, axis=0)
    preds = np.concatenate([
        np.asarray(solve(rep_targets[i:i + batch]), dtype=np.float64).reshape(-1, chain.num_joints)
        for i in range(0, len(rep_targets), batch)
    ])
    tip_err = target_distance(rep_targets, forward_kinematics(chain, preds))
    return {
        "n_targets": len(targets),
        "samples_per_target": samples_per_target,
        "mean_angle_distance": float(np.mean(angle_distance(rep_thetas, preds))),
        "mean_target_distance": float(np.mean(tip_err)),
        "target_distances": tip_err,
    }


def evaluate(ckpt: Checkpoint, thetas, targets, samples_per_target: int = 1, rng: Rng | None = None,
             chain: ChainSpec | None = None) -> dict[str, float]:
    if ckpt.kind != KIND_DENOISER:
        raise ValueError(f"expected a denoiser checkpoint, got {ckpt.kind!r}")
    if chain is not None and chain != ckpt.chain:
        raise ValueError(f"checkpoint chain {ckpt.chain} does not match evaluation chain {chain}")
    rng = rng or Rng(0)
    solver = checkpoint_solver(ckpt)
    return evaluate_solver(lambda tg: solver(tg, rng)[0], ckpt.chain, thetas, targets, samples_per_target)
