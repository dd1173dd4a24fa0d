import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from ikdp.dataset import generate
from ikdp.diffusion import linear_schedule
from ikdp.kinematics import ChainSpec, forward_kinematics
from ikdp.rng import Rng
from ikdp.trainer import LogRow
from ikdp.viz import TraceView, emit_noising_histogram, emit_trace_svg, noising_histograms

NS = "{http://www.w3.org/2000/svg}"


def make_trace(n=4, steps=80, seed=0):
    rng = Rng(seed)
    start = rng.normal(n)
    end = rng.uniform(-np.pi, np.pi, n)
    return [start + (end - start) * k / steps for k in range(steps + 1)]


def test_trace_element_counts(tmp_path):
    trace = make_trace()
    emit_trace_svg(trace, ChainSpec(4), (1.0, 2.0), tmp_path / "t.svg")
    root = ET.parse(tmp_path / "t.svg").getroot()
    arms = root.findall(f"{NS}polyline")
    assert len(arms) == 81
    assert len([p for p in root.findall(f"{NS}path") if p.get("class") == "target-cross"]) == 1
    opac = [float(a.get("stroke-opacity")) for a in arms]
    assert opac[0] == pytest.approx(0.1) and opac[-1] == 1.0 and opac == sorted(opac)


def test_final_vertex_is_tip(tmp_path):
    chain = ChainSpec(4)
    trace = make_trace(seed=3)
    emit_trace_svg(trace, chain, (0.0, 0.0), tmp_path / "t.svg")
    root = ET.parse(tmp_path / "t.svg").getroot()
    last = root.findall(f"{NS}polyline")[-1].get("points").split()[-1]
    px = np.array([float(v) for v in last.split(",")])
    want = TraceView(chain).to_px(forward_kinematics(chain, trace[-1]))
    assert np.max(np.abs(px - want)) < 0.5


def test_view_box_fits_reach_with_margin():
    view = TraceView(ChainSpec(4))
    np.testing.assert_allclose(view.to_px([4.4, -4.4]), [view.size, view.size])
    np.testing.assert_allclose(view.to_px([-4.4, 4.4]), [0, 0])


def test_trace_bytes_deterministic(tmp_path):
    for name in ("a.svg", "b.svg"):
        emit_trace_svg(make_trace(2, 10), ChainSpec(2), (0.5, 0.5), tmp_path / name)
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_empty_trace_rejected(tmp_path):
    with pytest.raises(ValueError):
        emit_trace_svg([], ChainSpec(2), (0, 0), tmp_path / "t.svg")


@pytest.fixture(scope="module")
def scalar_ds():
    return generate(ChainSpec(1), 100_000, 0)


def test_histogram_panels(scalar_ds, tmp_path):
    sched = linear_schedule(80)
    panels = emit_noising_histogram(scalar_ds, sched, [20, 40, 80], 20, tmp_path / "h.svg")
    assert [p[0] for p in panels] == [0, 20, 40, 80]
    root = ET.parse(tmp_path / "h.svg").getroot()
    groups = [g for g in root.iter(f"{NS}g") if g.get("class") == "panel"]
    assert len(groups) == 4
    counts = [int(r.get("data-count")) for r in groups[0].iter(f"{NS}rect")]
    assert counts == panels[0][1].tolist() and sum(counts) == 100_000


def test_histogram_uniform_then_bell(scalar_ds):
    panels = noising_histograms(scalar_ds, linear_schedule(80), [80], 20)
    raw = panels[0][1]
    assert raw.max() / raw.min() < 1.3
    end = panels[-1][1]
    q = end.reshape(5, 4).sum(axis=1)
    assert q[2] > q[0] and q[2] > q[4]


def test_histogram_errors(scalar_ds):
    with pytest.raises(ValueError):
        noising_histograms(scalar_ds, linear_schedule(10), [], 20)
    with pytest.raises(ValueError):
        noising_histograms(scalar_ds, linear_schedule(10), [11], 20)


def test_multi_joint_histogram_falls_back_to_angles(tmp_path):
    ds = generate(ChainSpec(3), 5000, 1)
    emit_noising_histogram(ds, linear_schedule(10), [0, 10], 10, tmp_path / "h.svg")
    text = (tmp_path / "h.svg").read_text()
    assert "theta_0" in text and len(re.findall('class="panel"', text)) == 3


def test_png_sidecars_deterministic(tmp_path):
    from ikdp.plotting import plot_bench, plot_eval, plot_sweep, plot_training_curves, sidecar

    assert sidecar(tmp_path / "r.csv") == tmp_path / "r.png"
    rows = [LogRow(i, 1.0 / i, 0.5 / i if i % 5 == 0 else None) for i in range(1, 30)]
    bench = [{"solver": "diffusion", "mean_target_distance": 0.2, "mean_seconds_per_solve": 0.1},
             {"solver": "mlp", "mean_target_distance": 2.0, "mean_seconds_per_solve": 0.001}]
    sweep = [{"timesteps": 40, "angle_distance": 4.0, "target_distance": 0.3},
             {"timesteps": 80, "angle_distance": 4.1, "target_distance": 0.2}]
    for tag in ("a", "b"):
        plot_training_curves(rows, tmp_path / f"log_{tag}.png")
        plot_bench(bench, tmp_path / f"bench_{tag}.png")
        plot_sweep(sweep, "timesteps", tmp_path / f"sweep_{tag}.png")
        plot_eval(np.linspace(0, 1, 50), tmp_path / f"eval_{tag}.png")
    for stem in ("log", "bench", "sweep", "eval"):
        a = (tmp_path / f"{stem}_a.png").read_bytes()
        assert a[:8] == b"\x89PNG\r\n\x1a\n"
        assert a == (tmp_path / f"{stem}_b.png").read_bytes()
