"""Self-describing binary checkpoints.

Layout (little-endian)::

    b"IKDP" | u32 version | u32 meta_len | meta (UTF-8 "key=value" lines)
    | u32 tensor_count | per tensor: u16 name_len, name, u8 rank,
      u32 dims[rank], float32 payload
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .denoiser import DenoiserConfig, param_shapes
from .diffusion import NoiseSchedule, Parameterization, linear_schedule
from .kinematics import ChainSpec

MAGIC = b"IKDP"
VERSION = 1
KIND_DENOISER = "denoiser"
KIND_MLP = "mlp"


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    def __init__(self, message: str, tensor: str | None = None):
        super().__init__(message)
        self.tensor = tensor


class CheckpointShapeError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    kind: str
    meta: dict[str, str]
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def chain(self) -> ChainSpec:
        lengths = tuple(float(v) for v in self.meta["chain.bone_lengths"].split(","))
        return ChainSpec(int(self.meta["chain.n_joints"]), lengths)

    @property
    def step(self) -> int:
        return int(self.meta.get("train.step", "0"))

    @property
    def seed(self) -> int:
        return int(self.meta.get("train.seed", "0"))

    # denoiser-only views
    @property
    def model_config(self) -> DenoiserConfig:
        m = self.meta
        return DenoiserConfig(
            n_joints=int(m["chain.n_joints"]),
            embed_dim=int(m["model.embed_dim"]),
            num_heads=int(m["model.num_heads"]),
            enc_layers=int(m["model.enc_layers"]),
            dec_layers=int(m["model.dec_layers"]),
            mlp_hidden=int(m["model.mlp_hidden"]),
            time_embed_dim=int(m["model.time_embed_dim"]),
            ff_hidden=int(m["model.ff_hidden"]),
            reach=float(m["model.reach"]),
            param=Parameterization(m["param"]),
        )

    @property
    def schedule(self) -> NoiseSchedule:
        m = self.meta
        return linear_schedule(int(m["schedule.timesteps"]), float(m["schedule.beta_start"]),
                               float(m["schedule.beta_end"]))

    @property
    def param(self) -> Parameterization:
        return Parameterization(self.meta["param"])

    def expected_shapes(self) -> dict[str, tuple[int, ...]] | None:
        if self.kind == KIND_DENOISER:
            return param_shapes(self.model_config)
        if self.kind == KIND_MLP:
            from .baselines import mlp_param_shapes

            return mlp_param_shapes(self)
        return None


def format_value(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, Parameterization):
        return value.value
    return str(value)


def denoiser_meta(chain: ChainSpec, config: DenoiserConfig, sched: NoiseSchedule, step: int, seed: int) -> dict[str, str]:
    meta = {
        "chain.n_joints": chain.num_joints,
        "chain.bone_lengths": chain.bone_lengths,
        "model.embed_dim": config.embed_dim,
        "model.num_heads": config.num_heads,
        "model.enc_layers": config.enc_layers,
        "model.dec_layers": config.dec_layers,
        "model.mlp_hidden": config.mlp_hidden,
        "model.time_embed_dim": config.time_embed_dim,
        "model.ff_hidden": config.ff_hidden,
        "model.reach": float(config.reach),
        "schedule.timesteps": sched.timesteps,
        "schedule.beta_start": sched.beta_start,
        "schedule.beta_end": sched.beta_end,
        "param": config.param,
        "train.step": step,
        "train.seed": seed,
    }
    return {k: format_value(v) for k, v in meta.items()}


def to_bytes(ckpt: Checkpoint) -> bytes:
    meta = {"kind": ckpt.kind, **ckpt.meta}
    for k, v in meta.items():
        if "=" in k or "\n" in k or "\n" in v:
            raise CheckpointError(f"metadata entry {k!r} cannot be encoded")
    meta_bytes = "".join(f"{k}={v}\n" for k, v in meta.items()).encode("utf-8")
    out = [MAGIC, struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes, struct.pack("<I", len(ckpt.params))]
    for name, arr in ckpt.params.items():
        arr = np.asarray(arr, dtype="<f4")
        name_b = name.encode("utf-8")
        out.append(struct.pack("<H", len(name_b)) + name_b + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(out)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str, tensor: str | None = None) -> bytes:
        if self.pos + n > len(self.buf):
            label = f" of tensor {tensor!r}" if tensor else ""
            raise TruncatedCheckpointError(f"checkpoint truncated while reading {what}{label}", tensor)
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str, tensor: str | None = None):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what, tensor))


def from_bytes(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"not an IKDP checkpoint (magic {buf[:4]!r})")
    r.pos = 4
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (meta_len,) = r.unpack("<I", "metadata length")
    meta: dict[str, str] = {}
    for line in r.take(meta_len, "metadata").decode("utf-8").splitlines():
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"malformed metadata line {line!r}")
        meta[key] = value
    kind = meta.pop("kind", KIND_DENOISER)
    (count,) = r.unpack("<I", "tensor count")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H", "tensor name length")
        name = r.take(name_len, "tensor name").decode("utf-8")
        (rank,) = r.unpack("<B", "rank", name)
        dims = r.unpack(f"<{rank}I", "dims", name)
        size = int(np.prod(dims)) if rank else 1
        payload = r.take(4 * size, "payload", name)
        params[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after last tensor")
    ckpt = Checkpoint(kind, meta, params)
    _validate_shapes(ckpt)
    return ckpt


def _validate_shapes(ckpt: Checkpoint) -> None:
    expected = ckpt.expected_shapes()
    if expected is None:
        return
    if set(expected) != set(ckpt.params):
        missing = sorted(set(expected) - set(ckpt.params))
        extra = sorted(set(ckpt.params) - set(expected))
        raise CheckpointShapeError(f"tensor set does not match config (missing {missing}, unexpected {extra})")
    for name, shape in expected.items():
        if ckpt.params[name].shape != tuple(shape):
            raise CheckpointShapeError(
                f"tensor {name!r} has shape {ckpt.params[name].shape}, config implies {tuple(shape)}"
            )


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
