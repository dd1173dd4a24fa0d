"""Planar forward kinematics for a chain of bones with absolute joint angles.

Each angle is measured from the +x axis in the world frame (not relative
to the previous bone), so the tip is simply ``sum(b_n * (cos th_n, sin th_n))``.
All functions broadcast over leading batch axes and compute in float64.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ChainSpec:
    num_joints: int
    bone_lengths: tuple[float, ...] = ()

    def __post_init__(self):
        if self.num_joints < 1:
            raise ValueError(f"num_joints must be >= 1, got {self.num_joints}")
        lengths = tuple(float(b) for b in self.bone_lengths) or (1.0,) * self.num_joints
        if len(lengths) != self.num_joints:
            raise ValueError(f"{len(lengths)} bone lengths for {self.num_joints} joints")
        if any(not (b > 0 and np.isfinite(b)) for b in lengths):
            raise ValueError(f"bone lengths must be positive and finite: {lengths}")
        object.__setattr__(self, "bone_lengths", lengths)

    @property
    def reach(self) -> float:
        return float(sum(self.bone_lengths))

    @property
    def lengths(self) -> np.ndarray:
        return np.asarray(self.bone_lengths, dtype=np.float64)


def _angles(chain: ChainSpec, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim == 0 or theta.shape[-1] != chain.num_joints:
        raise ValueError(f"expected {chain.num_joints} joint angles, got shape {theta.shape}")
    return theta


def forward_kinematics(chain: ChainSpec, theta) -> np.ndarray:
    """Tip position ``(..., 2)`` for angles ``(..., N)``."""
    theta = _angles(chain, theta)
    b = chain.lengths
    return np.stack([np.cos(theta) @ b, np.sin(theta) @ b], axis=-1)


def joint_positions(chain: ChainSpec, theta) -> np.ndarray:
    """All N+1 joint positions ``(..., N+1, 2)``, starting at the origin."""
    theta = _angles(chain, theta)
    bones = chain.lengths[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    origin = np.zeros(theta.shape[:-1] + (1, 2))
    return np.concatenate([origin, np.cumsum(bones, axis=-2)], axis=-2)


def target_distance(t, t_hat) -> np.ndarray:
    diff = np.asarray(t, dtype=np.float64) - np.asarray(t_hat, dtype=np.float64)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def angle_distance(theta, theta_hat) -> np.ndarray:
    """Plain L2 distance between angle vectors, no wrapping."""
    a = np.asarray(theta, dtype=np.float64)
    b = np.asarray(theta_hat, dtype=np.float64)
    if a.shape[-1:] != b.shape[-1:]:
        raise ValueError(f"angle vectors differ in length: {a.shape} vs {b.shape}")
    d = a - b
    return np.sqrt(np.sum(d * d, axis=-1))


def wrap_angle(theta) -> np.ndarray:
    """Map angles into ``[-pi, pi)``."""
    return (np.asarray(theta, dtype=np.float64) + np.pi) % (2 * np.pi) - np.pi


def wrapped_angle_distance(theta, theta_hat) -> np.ndarray:
    """Diagnostic only: L2 over per-joint differences wrapped into ``[-pi, pi)``."""
    a = np.asarray(theta, dtype=np.float64)
    b = np.asarray(theta_hat, dtype=np.float64)
    if a.shape[-1:] != b.shape[-1:]:
        raise ValueError(f"angle vectors differ in length: {a.shape} vs {b.shape}")
    d = wrap_angle(a - b)
    return np.sqrt(np.sum(d * d, axis=-1))


def reachable(chain: ChainSpec, t, tol: float = 1e-9) -> np.ndarray:
    """Whether the tip can be placed exactly at ``t``.

    A single bone only reaches its own circle; longer chains reach the
    annulus between the largest bone's overhang and the total length.
    """
    r = np.linalg.norm(np.asarray(t, dtype=np.float64), axis=-1)
    b = chain.lengths
    inner = max(0.0, 2 * b.max() - b.sum())
    if chain.num_joints == 1:
        return np.abs(r - b[0]) <= tol
    return (r <= chain.reach + tol) & (r >= inner - tol)


def rotate(point, delta) -> np.ndarray:
    """Rotate ``(..., 2)`` points about the origin by ``delta`` radians."""
    p = np.asarray(point, dtype=np.float64)
    c, s = np.cos(delta), np.sin(delta)
    return np.stack([c * p[..., 0] - s * p[..., 1], s * p[..., 0] + c * p[..., 1]], axis=-1)
