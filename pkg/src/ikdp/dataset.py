"""Ground-truth (angles, tip) records: generation, CSV storage, splitting."""
from __future__ import annotations

import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kinematics import ChainSpec, forward_kinematics
from .rng import Rng

SHARD_SIZE = 65536
STORE_TOLERANCE = 1e-5
LOAD_TOLERANCE = 1e-4
_COMMENT_RE = re.compile(r"^# ikdp-dataset v1 N=(\d+) seed=(-?\d+)$")


class DatasetFormatError(ValueError):
    pass


class MalformedHeaderError(DatasetFormatError):
    pass


class ColumnCountError(DatasetFormatError):
    pass


class NonFiniteFieldError(DatasetFormatError):
    pass


class FKInconsistencyError(DatasetFormatError):
    pass


@dataclass
class Dataset:
    chain: ChainSpec
    thetas: np.ndarray  # (M, N) float32
    targets: np.ndarray  # (M, 2) float32
    seed: int = 0

    def __post_init__(self):
        self.thetas = np.asarray(self.thetas, dtype=np.float32).reshape(-1, self.chain.num_joints)
        self.targets = np.asarray(self.targets, dtype=np.float32).reshape(-1, 2)
        if len(self.thetas) != len(self.targets):
            raise ValueError(f"{len(self.thetas)} angle rows but {len(self.targets)} targets")

    def __len__(self) -> int:
        return len(self.thetas)

    def subset(self, index) -> "Dataset":
        return Dataset(self.chain, self.thetas[index], self.targets[index], self.seed)


def worker_count() -> int:
    env = os.environ.get("IKDP_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _generate_shard(chain: ChainSpec, seed: int, shard: int, count: int) -> tuple[np.ndarray, np.ndarray]:
    rng = Rng(seed ^ shard)
    thetas = rng.uniform(-math.pi, math.pi, (count, chain.num_joints)).astype(np.float32)
    targets = forward_kinematics(chain, thetas).astype(np.float32)
    return thetas, targets


def generate(chain: ChainSpec, count: int, seed: int, workers: int | None = None) -> Dataset:
    """Draw ``count`` records with angles uniform over ``[-pi, pi)``.

    Records are produced in fixed shards of ``SHARD_SIZE`` rows, shard ``k``
    seeded with ``seed ^ k``; the result is therefore identical whatever the
    worker count.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    sizes = [min(SHARD_SIZE, count - start) for start in range(0, count, SHARD_SIZE)]
    jobs = [(chain, seed, k, n) for k, n in enumerate(sizes)]
    workers = min(workers or worker_count(), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda job: _generate_shard(*job), jobs))
    else:
        parts = [_generate_shard(*job) for job in jobs]
    thetas = np.concatenate([p[0] for p in parts])
    targets = np.concatenate([p[1] for p in parts])
    return Dataset(chain, thetas, targets, seed)


def split(ds: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n_train = int(round(len(ds) * train_fraction))
    if n_train == 0 or n_train == len(ds):
        raise ValueError(f"split of {len(ds)} records at {train_fraction} leaves one side empty")
    order = Rng(seed).permutation(len(ds))
    return ds.subset(np.sort(order[:n_train])), ds.subset(np.sort(order[n_train:]))


def fk_residual(ds: Dataset) -> np.ndarray:
    return np.max(np.abs(forward_kinematics(ds.chain, ds.thetas) - ds.targets.astype(np.float64)), axis=-1)


# ---------------------------------------------------------------- CSV

def _fmt(x: np.float32) -> str:
    # numpy prints the shortest string that round-trips to the same float32
    return str(x)


def save_csv(ds: Dataset, path) -> None:
    n = ds.chain.num_joints
    header = ",".join([f"theta_{i}" for i in range(n)] + ["t_x", "t_y"])
    rows = np.concatenate([ds.thetas, ds.targets], axis=1).astype(np.float32)
    lines = [f"# ikdp-dataset v1 N={n} seed={ds.seed}", header]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_csv(path, chain: ChainSpec | None = None) -> Dataset:
    """Read a dataset file, rejecting any row whose tip disagrees with its angles.

    ``chain`` supplies bone lengths when they are not all 1.0.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    seed = 0
    if lines and lines[0].startswith("#"):
        m = _COMMENT_RE.match(lines[0].strip())
        if not m:
            raise MalformedHeaderError(f"{path}: unrecognised comment line {lines[0]!r}")
        seed = int(m.group(2))
        lines = lines[1:]
    if not lines:
        raise MalformedHeaderError(f"{path}: missing header")
    cols = lines[0].strip().split(",")
    n = len(cols) - 2
    expected = [f"theta_{i}" for i in range(n)] + ["t_x", "t_y"]
    if n < 1 or cols != expected:
        raise MalformedHeaderError(f"{path}: bad header {lines[0]!r}")
    if chain is None:
        chain = ChainSpec(n)
    elif chain.num_joints != n:
        raise MalformedHeaderError(f"{path}: header has {n} angles, chain has {chain.num_joints}")

    body = [ln for ln in lines[1:] if ln.strip()]
    values = np.empty((len(body), n + 2), dtype=np.float32)
    for i, line in enumerate(body, start=1):
        fields = line.split(",")
        if len(fields) != n + 2:
            raise ColumnCountError(f"{path}: row {i} has {len(fields)} columns, expected {n + 2}")
        try:
            row = [float(f) for f in fields]
        except ValueError:
            raise NonFiniteFieldError(f"{path}: row {i} has a non-numeric field") from None
        if not all(math.isfinite(v) for v in row):
            raise NonFiniteFieldError(f"{path}: row {i} has a non-finite field")
        values[i - 1] = row
    ds = Dataset(chain, values[:, :n], values[:, n:], seed)
    if len(ds):
        resid = fk_residual(ds)
        bad = int(np.argmax(resid))
        if resid[bad] > LOAD_TOLERANCE:
            raise FKInconsistencyError(
                f"{path}: row {bad + 1} target is {resid[bad]:.3g} away from its forward kinematics"
            )
    return ds
