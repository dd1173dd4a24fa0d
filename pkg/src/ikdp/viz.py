"""Hand-written SVG figures: denoising traces and forward-noising histograms.

Output is plain text built from fixed-precision numbers so identical input
always yields identical bytes.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .diffusion import NoiseSchedule, q_sample
from .kinematics import ChainSpec, joint_positions
from .rng import Rng

TRACE_SIZE = 480
MARGIN = 0.10
CROSS_HALF = 7.0
OPACITY_FIRST, OPACITY_LAST = 0.1, 1.0

PANEL_W, PANEL_H, PANEL_PAD = 220, 180, 24


def _num(v: float) -> str:
    s = f"{v:.3f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def _header(width: float, height: float) -> list[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_num(width)}" '
        f'height="{_num(height)}" viewBox="0 0 {_num(width)} {_num(height)}">',
        f'<rect x="0" y="0" width="{_num(width)}" height="{_num(height)}" fill="white"/>',
    ]


class TraceView:
    """World -> pixel mapping for a square view of the reach disk plus margin."""

    def __init__(self, chain: ChainSpec, size: int = TRACE_SIZE):
        self.size = size
        self.half = chain.reach * (1.0 + MARGIN)
        self.scale = size / (2.0 * self.half)

    def to_px(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        return np.stack([(xy[..., 0] + self.half) * self.scale, (self.half - xy[..., 1]) * self.scale], axis=-1)


def trace_svg(trace: Sequence[np.ndarray], chain: ChainSpec, target) -> str:
    if len(trace) == 0:
        raise ValueError("trace is empty")
    view = TraceView(chain)
    size = view.size
    out = _header(size, size)
    centre = view.to_px([0.0, 0.0])
    out.append(
        f'<circle class="reach" cx="{_num(centre[0])}" cy="{_num(centre[1])}" r="{_num(chain.reach * view.scale)}" '
        'fill="none" stroke="#bbbbbb" stroke-dasharray="4 4"/>'
    )
    k = len(trace)
    for i, theta in enumerate(trace):
        opacity = OPACITY_LAST if k == 1 else OPACITY_FIRST + (OPACITY_LAST - OPACITY_FIRST) * i / (k - 1)
        pts = view.to_px(joint_positions(chain, np.asarray(theta, dtype=np.float64).reshape(-1)))
        coords = " ".join(f"{_num(x)},{_num(y)}" for x, y in pts)
        out.append(
            f'<polyline class="arm" data-index="{i}" points="{coords}" fill="none" stroke="#1f3a93" '
            f'stroke-width="1.5" stroke-opacity="{_num(opacity)}"/>'
        )
    tx, ty = view.to_px(np.asarray(target, dtype=np.float64).reshape(2))
    c = CROSS_HALF
    out.append(
        f'<path class="target-cross" d="M{_num(tx - c)} {_num(ty - c)} L{_num(tx + c)} {_num(ty + c)} '
        f'M{_num(tx - c)} {_num(ty + c)} L{_num(tx + c)} {_num(ty - c)}" stroke="red" stroke-width="2.5"/>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_trace_svg(trace: Sequence[np.ndarray], chain: ChainSpec, target, path) -> None:
    """One arm polyline per reverse step, fading in from theta_T to theta_0, plus the target cross."""
    Path(path).write_text(trace_svg(trace, chain, target), encoding="utf-8", newline="\n")


def noising_histograms(ds: Dataset, sched: NoiseSchedule, steps: Sequence[int], bins: int = 20,
                       seed: int = 0) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """``[(step, counts, edges)]``; the first panel is always the raw data (step 0).

    Single-joint data is shown as ``arccos(clip(t_x))`` after noising ``t_x``;
    longer chains fall back to the first joint angle.
    """
    if len(steps) == 0:
        raise ValueError("no noising steps requested")
    if bins < 1:
        raise ValueError("bins must be positive")
    for s in steps:
        if not 0 <= s <= sched.timesteps:
            raise ValueError(f"step {s} outside 0..{sched.timesteps}")
    rng = Rng(seed)
    if ds.chain.num_joints == 1:
        base = ds.targets[:, 0].astype(np.float64) / ds.chain.reach
        lo, hi = 0.0, np.pi

        def view(v):
            return np.arccos(np.clip(v, -1.0, 1.0))
    else:
        base = ds.thetas[:, 0].astype(np.float64)
        lo, hi = -4.0, 4.0

        def view(v):
            return np.clip(v, lo, hi)

    edges = np.linspace(lo, hi, bins + 1)
    panels = []
    for s in [0, *steps]:
        values = base if s == 0 else q_sample(base, s, rng.normal(base.shape), sched)
        counts, _ = np.histogram(view(values), bins=edges)
        panels.append((int(s), counts, edges))
    return panels


def noising_svg(panels: list[tuple[int, np.ndarray, np.ndarray]], xlabel: str) -> str:
    width = len(panels) * (PANEL_W + PANEL_PAD) + PANEL_PAD
    height = PANEL_H + 3 * PANEL_PAD
    out = _header(width, height)
    for p, (step, counts, edges) in enumerate(panels):
        x0 = PANEL_PAD + p * (PANEL_W + PANEL_PAD)
        y_base = PANEL_PAD + PANEL_H
        peak = max(int(counts.max()), 1)
        bar_w = PANEL_W / len(counts)
        out.append(f'<g class="panel" data-step="{step}">')
        out.append(
            f'<text x="{_num(x0 + PANEL_W / 2)}" y="{_num(PANEL_PAD * 0.7)}" font-family="sans-serif" '
            f'font-size="12" text-anchor="middle">t={step}</text>'
        )
        for b, c in enumerate(counts):
            h = PANEL_H * int(c) / peak
            out.append(
                f'<rect class="bin" x="{_num(x0 + b * bar_w)}" y="{_num(y_base - h)}" width="{_num(bar_w)}" '
                f'height="{_num(h)}" fill="#4a7bb7" stroke="white" stroke-width="0.5" data-count="{int(c)}"/>'
            )
        out.append(
            f'<line x1="{_num(x0)}" y1="{_num(y_base)}" x2="{_num(x0 + PANEL_W)}" y2="{_num(y_base)}" stroke="black"/>'
        )
        out.append(
            f'<text x="{_num(x0)}" y="{_num(y_base + 16)}" font-family="sans-serif" font-size="10">{_num(edges[0])}</text>'
        )
        out.append(
            f'<text x="{_num(x0 + PANEL_W)}" y="{_num(y_base + 16)}" font-family="sans-serif" font-size="10" '
            f'text-anchor="end">{_num(edges[-1])}</text>'
        )
        out.append("</g>")
    out.append(
        f'<text x="{_num(width / 2)}" y="{_num(height - 8)}" font-family="sans-serif" font-size="12" '
        f'text-anchor="middle">{xlabel}</text>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_noising_histogram(ds: Dataset, sched: NoiseSchedule, steps: Sequence[int], bins: int, path,
                           seed: int = 0) -> list[tuple[int, np.ndarray, np.ndarray]]:
    panels = noising_histograms(ds, sched, steps, bins, seed)
    label = "arccos(t_x)" if ds.chain.num_joints == 1 else "theta_0"
    Path(path).write_text(noising_svg(panels, label), encoding="utf-8", newline="\n")
    return panels
