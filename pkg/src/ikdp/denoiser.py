"""Conditional transformer denoiser over joint-angle tokens.

Layout: one token per joint -> pre-norm transformer encoder -> mean-pooled
feature concatenated with the step embedding and the projected target ->
fusion MLP -> fused vector added to every encoder token -> transformer
decoder -> per-token scalar head -> plus the input angles (residual).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .diffusion import Parameterization
from .rng import Rng
from .tensor import Tensor


class NonFiniteActivationError(FloatingPointError):
    def __init__(self, layer: str):
        super().__init__(f"non-finite activation after layer {layer!r}")
        self.layer = layer


@dataclass(frozen=True)
class DenoiserConfig:
    n_joints: int
    embed_dim: int = 64
    num_heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    mlp_hidden: int = 128
    time_embed_dim: int | None = None
    ff_hidden: int | None = None
    reach: float | None = None
    param: Parameterization = field(default=Parameterization.PREDICT_EPS)

    def __post_init__(self):
        if self.time_embed_dim is None:
            object.__setattr__(self, "time_embed_dim", self.embed_dim)
        if self.ff_hidden is None:
            object.__setattr__(self, "ff_hidden", 2 * self.embed_dim)
        if self.reach is None:
            object.__setattr__(self, "reach", float(self.n_joints))
        object.__setattr__(self, "param", Parameterization(self.param))
        dims = (self.n_joints, self.embed_dim, self.num_heads, self.mlp_hidden, self.time_embed_dim, self.ff_hidden)
        if min(dims) < 1 or self.enc_layers < 0 or self.dec_layers < 0 or not self.reach > 0:
            raise ValueError(f"invalid denoiser dimensions: {self}")
        if self.embed_dim % self.num_heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.time_embed_dim % 2:
            raise ValueError(f"time_embed_dim must be even, got {self.time_embed_dim}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["param"] = self.param.value
        return d


def _block_shapes(prefix: str, d: int, ff: int) -> dict[str, tuple[int, ...]]:
    return {
        f"{prefix}.ln1.g": (d,), f"{prefix}.ln1.b": (d,),
        f"{prefix}.attn.qkv.w": (d, 3 * d), f"{prefix}.attn.qkv.b": (3 * d,),
        f"{prefix}.attn.out.w": (d, d), f"{prefix}.attn.out.b": (d,),
        f"{prefix}.ln2.g": (d,), f"{prefix}.ln2.b": (d,),
        f"{prefix}.ff.w1": (d, ff), f"{prefix}.ff.b1": (ff,),
        f"{prefix}.ff.w2": (ff, d), f"{prefix}.ff.b2": (d,),
    }


def param_shapes(config: DenoiserConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every weight, in creation order."""
    d, n = config.embed_dim, config.n_joints
    shapes: dict[str, tuple[int, ...]] = {"tok.w": (1, d), "tok.b": (d,), "pos": (n, d)}
    for i in range(config.enc_layers):
        shapes.update(_block_shapes(f"enc.{i}", d, config.ff_hidden))
    shapes.update({"enc.ln.g": (d,), "enc.ln.b": (d,), "cond.w": (2, d), "cond.b": (d,)})
    fuse_in = 2 * d + config.time_embed_dim
    shapes.update({
        "fuse.w1": (fuse_in, config.mlp_hidden), "fuse.b1": (config.mlp_hidden,),
        "fuse.w2": (config.mlp_hidden, d), "fuse.b2": (d,),
    })
    for i in range(config.dec_layers):
        shapes.update(_block_shapes(f"dec.{i}", d, config.ff_hidden))
    shapes.update({"dec.ln.g": (d,), "dec.ln.b": (d,), "head.w": (d, 1), "head.b": (1,)})
    return shapes


def init_params(config: DenoiserConfig, rng: Rng) -> dict[str, Tensor]:
    """Linear weights ~ N(0, 1/fan_in), norms at identity, zero biases and a zero head."""
    params = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if name.startswith("head."):
            value = np.zeros(shape)
        elif name == "pos":
            value = rng.normal(shape) / math.sqrt(config.embed_dim)
        elif leaf.startswith("w"):
            value = rng.normal(shape) / math.sqrt(shape[0])
        elif leaf == "g":
            value = np.ones(shape)
        else:
            value = np.zeros(shape)
        params[name] = Tensor(value, requires_grad=True, name=name)
    return params


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal step embedding, ``(dim,)`` for scalar ``t`` or ``(B, dim)``."""
    if dim % 2:
        raise ValueError(f"time embedding dim must be even, got {dim}")
    t_arr = np.asarray(t, dtype=np.float64)
    freqs = 10000.0 ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)
    angles = t_arr[..., None] * freqs
    out = np.empty(t_arr.shape + (dim,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def normalize_condition(target, reach: float) -> np.ndarray:
    """Scale targets by the chain's reach so reachable targets land in the unit disk."""
    return np.asarray(target, dtype=np.float64) / reach


def embed_condition(params: dict[str, Tensor], target, reach: float) -> Tensor:
    cond = Tensor(normalize_condition(target, reach).reshape(-1, 2))
    return cond @ params["cond.w"] + params["cond.b"]


def _check(x: Tensor, layer: str) -> Tensor:
    if not np.all(np.isfinite(x.data)):
        raise NonFiniteActivationError(layer)
    return x


def _attention(x: Tensor, p: dict[str, Tensor], prefix: str, num_heads: int) -> Tensor:
    d = x.shape[-1]
    qkv = x @ p[f"{prefix}.attn.qkv.w"] + p[f"{prefix}.attn.qkv.b"]
    q, k, v = (T.split_heads(T.slice_last(qkv, i * d, (i + 1) * d), num_heads) for i in range(3))
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(d // num_heads))
    mixed = T.merge_heads(T.matmul(T.softmax_rows(scores), v), num_heads)
    return mixed @ p[f"{prefix}.attn.out.w"] + p[f"{prefix}.attn.out.b"]


def _block(x: Tensor, p: dict[str, Tensor], prefix: str, num_heads: int) -> Tensor:
    h = T.layer_norm(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
    x = x + _attention(h, p, prefix, num_heads)
    h = T.layer_norm(x, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
    h = T.gelu(h @ p[f"{prefix}.ff.w1"] + p[f"{prefix}.ff.b1"])
    return _check(x + (h @ p[f"{prefix}.ff.w2"] + p[f"{prefix}.ff.b2"]), prefix)


def forward(params: dict[str, Tensor], config: DenoiserConfig, theta_t, t, target) -> Tensor:
    """Predict theta_0 or eps (per ``config.param``) for a batch ``(B, N)``."""
    theta = theta_t if isinstance(theta_t, Tensor) else Tensor(theta_t)
    if theta.ndim == 1:
        theta = T.reshape(theta, (1, -1))
    bsz, n = theta.shape
    if n != config.n_joints:
        raise T.ShapeError(f"denoiser expects {config.n_joints} joints, got {n}")
    steps = np.broadcast_to(np.asarray(t), (bsz,))
    target = np.asarray(target, dtype=np.float64).reshape(-1, 2)
    if len(target) != bsz:
        target = np.broadcast_to(target, (bsz, 2))

    x = T.reshape(theta, (bsz, n, 1)) @ params["tok.w"] + params["tok.b"] + params["pos"]
    for i in range(config.enc_layers):
        x = _block(x, params, f"enc.{i}", config.num_heads)
    x = T.layer_norm(x, params["enc.ln.g"], params["enc.ln.b"])
    pooled = T.mean(x, axis=1)

    temb = Tensor(time_embedding(steps, config.time_embed_dim))
    cond = embed_condition(params, target, config.reach)
    h = T.concat([pooled, temb, cond], axis=-1)
    h = T.gelu(h @ params["fuse.w1"] + params["fuse.b1"])
    fused = _check(h @ params["fuse.w2"] + params["fuse.b2"], "fuse")

    x = x + T.reshape(fused, (bsz, 1, config.embed_dim))
    for i in range(config.dec_layers):
        x = _block(x, params, f"dec.{i}", config.num_heads)
    x = T.layer_norm(x, params["dec.ln.g"], params["dec.ln.b"])
    head = T.reshape(x @ params["head.w"] + params["head.b"], (bsz, n))
    return _check(head + theta, "head")


def make_sampler_fn(params: dict[str, Tensor], config: DenoiserConfig):
    """Wrap the network as a ``(theta_t, t, cond) -> ndarray`` callback without graph recording."""

    def fn(theta_t, t, cond):
        with T.no_grad():
            return forward(params, config, theta_t, t, cond).data

    return fn
