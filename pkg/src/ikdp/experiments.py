"""Desk-scale reproduction runs: diffusion vs MLP, and sweeps over T and N.

Each trial trains on its own generated dataset and scores on an independent
held-out draw, so seeds vary data, initialisation and sampling together.
"""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .baselines import MlpBaselineConfig, make_solver, mlp_train
from .checkpoint import Checkpoint
from .dataset import generate
from .diffusion import DEFAULT_TIMESTEPS, Parameterization
from .kinematics import ChainSpec, forward_kinematics, target_distance
from .rng import Rng
from .trainer import TrainingConfig, evaluate_solver, train

TEST_SEED_OFFSET = 1_000_003


@dataclass
class TrialConfig:
    n_joints: int = 4
    timesteps: int = DEFAULT_TIMESTEPS
    count: int = 50_000
    epochs: int = 10
    eval_count: int = 1000
    param: Parameterization = Parameterization.PREDICT_EPS
    with_mlp: bool = False


def held_out(chain: ChainSpec, count: int, seed: int):
    return generate(chain, count, seed + TEST_SEED_OFFSET)


def random_angle_distance(chain: ChainSpec, targets, seed: int) -> float:
    """Mean tip error of angles drawn uniformly at random, ignoring the target."""
    targets = np.asarray(targets, dtype=np.float64)
    theta = Rng(seed).uniform(-np.pi, np.pi, (len(targets), chain.num_joints))
    return float(np.mean(target_distance(targets, forward_kinematics(chain, theta))))


@dataclass
class TrialResult:
    row: dict
    checkpoint: Checkpoint
    mlp_checkpoint: Checkpoint | None = None
    train_seconds: float = 0.0


def trial(cfg: TrialConfig, seed: int) -> TrialResult:
    chain = ChainSpec(cfg.n_joints)
    ds = generate(chain, cfg.count, seed)
    test = held_out(chain, cfg.eval_count, seed)
    start = time.perf_counter()
    result = train(ds, TrainingConfig(epochs=cfg.epochs, timesteps=cfg.timesteps, seed=seed, param=cfg.param,
                                      eval_every=10_000))
    elapsed = time.perf_counter() - start
    solve = make_solver("diffusion", result.checkpoint, seed)
    metrics = evaluate_solver(solve, chain, test.thetas, test.targets)
    row = {
        "n_joints": cfg.n_joints,
        "timesteps": cfg.timesteps,
        "seed": seed,
        "angle_distance": metrics["mean_angle_distance"],
        "target_distance": metrics["mean_target_distance"],
        "random_target_distance": random_angle_distance(chain, test.targets, seed),
    }
    mlp_ckpt = None
    if cfg.with_mlp:
        mlp_ckpt, _ = mlp_train(ds, MlpBaselineConfig(epochs=cfg.epochs, seed=seed))
        mlp = evaluate_solver(make_solver("mlp", mlp_ckpt), chain, test.thetas, test.targets)
        row["mlp_angle_distance"] = mlp["mean_angle_distance"]
        row["mlp_target_distance"] = mlp["mean_target_distance"]
    return TrialResult(row, result.checkpoint, mlp_ckpt, elapsed)


def run_trial(cfg: TrialConfig, seed: int) -> dict:
    return trial(cfg, seed).row


def median_rows(rows: list[dict], key: str) -> list[dict]:
    """Collapse per-seed rows into one median row per value of ``key``."""
    out = []
    for value in sorted({r[key] for r in rows}):
        group = [r for r in rows if r[key] == value]
        merged = {key: value, "seeds": len(group)}
        for metric in group[0]:
            if metric in (key, "seed") or not isinstance(group[0][metric], float):
                continue
            merged[metric] = statistics.median(r[metric] for r in group)
        out.append(merged)
    return out


def sweep(vary: str, values: Iterable[int], seeds: Iterable[int], base: TrialConfig) -> tuple[list[dict], list[dict]]:
    """Per-seed rows and median rows for ``vary`` in {"timesteps", "n_joints"}."""
    if vary not in ("timesteps", "n_joints"):
        raise ValueError(f"cannot sweep over {vary!r}")
    rows = []
    for value in values:
        cfg = TrialConfig(**{**base.__dict__, vary: int(value)})
        rows.extend(run_trial(cfg, s) for s in seeds)
    return rows, median_rows(rows, vary)


def write_sweep_report(medians: list[dict], key: str, path) -> None:
    """Median-over-seeds report; distances are means over the held-out targets."""
    cols = [key, "seeds", "median_mean_angle_distance", "median_mean_target_distance"]
    lines = [",".join(cols)]
    for r in medians:
        lines.append(f"{r[key]},{r['seeds']},{r['angle_distance']!r},{r['target_distance']!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
