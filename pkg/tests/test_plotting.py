import xml.etree.ElementTree as ET

import numpy as np

from conftest import small_scene
from scenediff.decoder import ground_truth_bundle
from scenediff.metrics import EvalReport
from scenediff.plotting import PX_PER_M, ablation_figure, distribution_figure, scene_svg
from scenediff.scenario import preprocess_world_centric

SVG = "{http://www.w3.org/2000/svg}"


def _pts(el):
    return np.array([[float(v) for v in p.split(",")] for p in el.get("points").split()])


def test_svg_samples_overlay_ground_truth():
    scene = small_scene(3)
    b = ground_truth_bundle(preprocess_world_centric(scene))
    root = ET.fromstring(scene_svg(scene, [b]))
    gt = [p for p in root.iter(f"{SVG}polyline") if p.get("class") == "gt"]
    samples = [p for p in root.iter(f"{SVG}polyline") if p.get("class") == "sample"]
    assert len(gt) == len(samples) == len(scene.predicted)
    # the gt polyline starts at the current position; the replayed sample begins one step later
    for g, s in zip(gt, samples):
        np.testing.assert_allclose(_pts(g)[1:], _pts(s), atol=0.011)


def test_svg_scale_matches_metadata():
    scene = small_scene(0)
    root = ET.fromstring(scene_svg(scene))
    lane = next(p for p in root.iter(f"{SVG}polyline") if p.get("class") == "lane")
    px = _pts(lane)
    world = scene.lanes[0].points
    np.testing.assert_allclose(np.diff(px[:, 0]), np.diff(world[:, 0]) * PX_PER_M, atol=0.011)
    np.testing.assert_allclose(np.diff(px[:, 1]), -np.diff(world[:, 1]) * PX_PER_M, atol=0.011)


def test_png_figures_byte_identical(tmp_path):
    b = [ground_truth_bundle(preprocess_world_centric(small_scene(s))) for s in range(2)]
    rep = EvalReport(1.0, 2.0, 0.1, 0.2, 0.0, 2, 1, 1.0, 1.0)
    for k in (0, 1):
        distribution_figure(b, b, tmp_path / f"d{k}.png")
        ablation_figure({"full": rep, "no_hd_map_former": rep}, tmp_path / f"a{k}.png")
    assert (tmp_path / "d0.png").read_bytes() == (tmp_path / "d1.png").read_bytes()
    assert (tmp_path / "a0.png").read_bytes() == (tmp_path / "a1.png").read_bytes()
