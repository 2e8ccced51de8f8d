"""End-to-end acceptance checks.

Each criterion the engine must meet is one test (or one tightly-related
group); the planted-concept pipeline runs once per session and its artifacts
feed several criteria.
"""

import itertools
import json
import time
import warnings
from types import SimpleNamespace

import numpy as np
import pytest
from scipy import ndimage
from sklearn.metrics import adjusted_rand_score

import synth
from dtcav.concept_cav import Cav, fit_cav
from dtcav.latent_analysis import distortion_scan, elbow_select, kmeans
from dtcav.model_adapter import AnalyticAdapter
from dtcav.pipeline import PipelineConfig, run_pipeline
from dtcav.seg_metrics import dice
from dtcav.superpixel import SlicParams, slic
from dtcav.tcav_engine import (
    DirectionalDerivativeSet,
    directional_derivatives,
    score_concept,
    significance_test,
    tcav_score,
)


# --------------------------------------------------------------------------
# 1. TCAV score vs brute-force count over all sign patterns


def test_tcav_score_equals_brute_force_over_all_sign_patterns():
    magnitudes = np.array([0.3, 1.1, 0.7, 2.0, 0.5, 1.6, 0.9, 1.2])
    for signs in itertools.product((-1.0, 1.0), repeat=8):
        values = magnitudes * np.array(signs)
        expected = sum(1 for v in values if v > 0) / 8
        got = tcav_score(DirectionalDerivativeSet(0, "NOR", values))
        assert got == expected


# --------------------------------------------------------------------------
# 2 & 9. Planted-concept end-to-end pipeline, runtime, determinism
#
# Dataset: 200 synthetic 64x64 slices in three image types — a bright square
# at location 1 (classes NOR/DCM), a bright square at location 2 (classes
# HCM/RV), and plain noise (class MINF). Patch embeddings form 3 separated
# blobs (background, square-1, square-2).
#
# The scoring head is planted in two phases because CAV directions do not
# depend on the head: a first run with the default head measures the square-1
# blob offset direction u1 and the mean square-2 CAV direction c2, then the
# head vector w = normalize(u1 - (u1.c2) c2) is planted (aligned with the
# square-1 concept, orthogonalized against the square-2 concept) and the full
# pipeline reruns. Classes whose slices contain square 1 are aligned with the
# square-1 concept; the square-2 concept is orthogonal to the head by
# construction, so on the plain class its derivatives are a fair coin.


def _identify_clusters(out):
    clusters = json.loads((out / "cluster" / "clusters.json").read_text())
    sizes = {c["cluster_id"]: c["size"] for c in clusters}
    bg = max(sizes, key=sizes.get)
    type_a = next(
        c["cluster_id"]
        for c in clusters
        if c["cluster_id"] != bg and "NOR" in c["per_pathology_counts"]
    )
    type_b = next(c["cluster_id"] for c in clusters if c["cluster_id"] not in (bg, type_a))
    return bg, type_a, type_b


@pytest.fixture(scope="module")
def planted(tmp_path_factory):
    root = tmp_path_factory.mktemp("planted")
    manifest = synth.write_planted_manifest(root, n_patients=40, slices_per_patient=5)

    # phase 1: default head; everything up to the CAVs
    probe_out = root / "probe"
    probe_cfg = PipelineConfig.from_dict(synth.planted_config(manifest, probe_out))
    run_pipeline(probe_cfg, ("prepare", "patches", "embed", "cluster", "cavs"))

    bg, type_a, type_b = _identify_clusters(probe_out)
    acts = np.load(probe_out / "embed" / "activations.npy")
    assign = np.load(probe_out / "cluster" / "assignments.npy")
    u1 = acts[assign == type_a].mean(axis=0) - acts[assign == bg].mean(axis=0)
    u1 /= np.linalg.norm(u1)
    cav_index = json.loads((probe_out / "cavs" / "index.json").read_text())
    c2 = np.mean(
        [
            np.load(probe_out / "cavs" / e["file"])
            for e in cav_index["cavs"]
            if e["concept_id"] == type_b
        ],
        axis=0,
    )
    c2 /= np.linalg.norm(c2)
    w = u1 - (u1 @ c2) * c2
    w /= np.linalg.norm(w)
    heads = root / "heads.npz"
    np.savez(heads, w_FOREGROUND_SUM=w, d_FOREGROUND_SUM=np.ones(len(w)))

    # phase 2: planted head, full pipeline, twice for the determinism check
    def full_run(out_dir):
        cfg = PipelineConfig.from_dict(
            synth.planted_config(manifest, out_dir, head_npz=heads)
        )
        start = time.perf_counter()
        run_pipeline(cfg)
        return time.perf_counter() - start

    elapsed = full_run(root / "run1")
    full_run(root / "run2")
    return SimpleNamespace(root=root, elapsed=elapsed)


def test_planted_concept_end_to_end(planted):
    out = planted.root / "run1"
    elbow = json.loads((out / "cluster" / "elbow.json").read_text())
    assert elbow["chosen_k"] == 3
    assert not elbow["no_elbow"]

    bg, type_a, type_b = _identify_clusters(out)
    results = json.loads((out / "score" / "results.json").read_text())

    flags = {c["cluster_id"]: c for c in results["concepts"]}
    assert flags[type_a]["selected"], "square-1 cluster must be selected as a concept"

    by_key = {(r["concept_id"], r["class_k"]): r for r in results["results"]}
    for aligned_class in ("NOR", "DCM"):
        r = by_key[(type_a, aligned_class)]
        assert r["score"] >= 0.95, (aligned_class, r)
        assert r["status"] == "scored" and r["p_value"] < 0.05, (aligned_class, r)

    orth = by_key[(type_b, "MINF")]
    assert 0.35 <= orth["score"] <= 0.65, orth
    assert orth["status"] == "insignificant", orth


def test_planted_runtime_under_budget(planted):
    assert planted.elapsed < 60.0, f"full pipeline took {planted.elapsed:.1f}s"


def test_determinism_byte_identical_results(planted):
    a = (planted.root / "run1" / "score" / "results.json").read_bytes()
    b = (planted.root / "run2" / "score" / "results.json").read_bytes()
    assert a == b


# --------------------------------------------------------------------------
# 3. Significance calibration on concept-free data


def test_significance_calibration_under_eight_percent():
    rng = np.random.default_rng(123)
    d = 16
    grads = rng.standard_normal((50, d))
    pool = rng.standard_normal((400, d))

    def random_score(seed):
        r = np.random.default_rng(seed)
        idx = r.permutation(len(pool))
        cav = fit_cav(pool[idx[:40]], pool[idx[40:80]], seed=seed)
        return tcav_score(directional_derivatives(grads, cav, class_k="x"))

    flags = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for trial in range(200):
            concept_scores = [random_score(trial * 1000 + j) for j in range(10)]
            random_scores = [random_score(trial * 1000 + 100 + j) for j in range(100)]
            _, significant = significance_test(concept_scores, random_scores, alpha=0.05)
            flags += significant
    assert flags / 200 <= 0.08, f"{flags}/200 concept-free trials flagged significant"


# --------------------------------------------------------------------------
# 4. k-means oracle


def test_kmeans_blobs_adjusted_rand_index_one():
    rng = np.random.default_rng(0)
    centers = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.0, 10.0, 0.0]])
    points, labels = [], []
    for i, c in enumerate(centers):
        points.append(rng.normal(c, 0.1, (60, 3)))
        labels += [i] * 60
    points = np.vstack(points)
    result = kmeans(points, 3, seed=0)
    assert adjusted_rand_score(labels, result.assignments) == 1.0
    # distortion monotonicity is asserted inside every Lloyd iteration; sweep
    # a batch of datasets so the assertion is exercised broadly
    for trial in range(20):
        data = rng.standard_normal((80, 4))
        kmeans(data, int(rng.integers(1, 10)), seed=trial)


# --------------------------------------------------------------------------
# 5. SLIC partition property and two-half recovery


def test_slic_partition_on_100_random_images():
    conn4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    rng = np.random.default_rng(1)
    for _ in range(100):
        image = rng.random((int(rng.integers(8, 32)), int(rng.integers(8, 32))))
        labels = slic(image, SlicParams(n_segments=5))
        n_final = labels.max() + 1
        assert n_final <= 5
        assert set(np.unique(labels)) == set(range(n_final))
        for seg in range(n_final):
            _, n_comp = ndimage.label(labels == seg, structure=conn4)
            assert n_comp == 1


def test_slic_two_half_exact():
    image = np.zeros((8, 8))
    image[:, 4:] = 1.0
    labels = slic(image, SlicParams(n_segments=2, compactness=0.05))
    assert (labels[:, :4] == labels[0, 0]).all()
    assert (labels[:, 4:] == labels[0, 4]).all()
    assert labels[0, 0] != labels[0, 4]


# --------------------------------------------------------------------------
# 6. CAV geometry


def test_cav_geometry():
    rng = np.random.default_rng(2)
    d, n = 6, 60
    pos = rng.normal(0, 0.3, (n, d))
    neg = rng.normal(0, 0.3, (n, d))
    pos[:, 0] = 2.0 + rng.random(n)
    neg[:, 0] = -2.0 - rng.random(n)
    cav = fit_cav(pos, neg, seed=0)
    axis = np.zeros(d)
    axis[0] = 1.0
    angle = np.degrees(np.arccos(np.clip(cav.direction @ axis, -1.0, 1.0)))
    assert angle < 5.0
    assert cav.training_accuracy == 1.0
    swapped = fit_cav(neg, pos, seed=0)
    np.testing.assert_array_equal(swapped.direction, -cav.direction)


# --------------------------------------------------------------------------
# 7. Degenerate rule


def test_degenerate_status_for_all_negative_derivatives():
    d = 4
    grads = {"NOR": -np.ones((10, d)), "HCM": -2.0 * np.ones((5, d))}
    cavs = [
        Cav(np.eye(d)[i % d], 0.0, 0, i, 1.0, False) for i in range(3)
    ]  # all positive-orthant directions: every derivative is <= 0
    random_cavs = [
        Cav(v / np.linalg.norm(v), 0.0, "random", i, 1.0, False)
        for i, v in enumerate(np.random.default_rng(3).standard_normal((100, d)))
    ]
    results = score_concept(0, cavs, grads, random_cavs)
    assert len(results) == 2
    for r in results:
        assert r.status == "degenerate"
        assert r.score is None and r.p_value is None


# --------------------------------------------------------------------------
# 8. Dice trivial suite


def test_dice_trivial_suite():
    full = np.full((4, 4), 3, dtype=np.uint8)  # all LV
    assert dice(full, full, "LV") == 100.0

    a = np.zeros((4, 4), dtype=np.uint8)
    b = np.zeros((4, 4), dtype=np.uint8)
    a[0, 0] = 3
    b[3, 3] = 3
    assert dice(a, b, "LV") == 0.0

    a = np.zeros((4, 4), dtype=np.uint8)
    b = np.zeros((4, 4), dtype=np.uint8)
    a.flat[:4] = 2
    b.flat[:2] = 2
    assert dice(a, b, "MYO") == pytest.approx(66.67, abs=0.01)

    empty = np.zeros((4, 4), dtype=np.uint8)
    assert dice(empty, empty, "RV") == 100.0


# --------------------------------------------------------------------------
# 10. Analytic gradients vs central finite differences


def test_gradient_matches_finite_differences_over_100_inputs():
    adapter = AnalyticAdapter(input_size=16, latent_dim=12, seed=0, epsilon=0.1)
    rng = np.random.default_rng(4)
    h = 1e-4
    worst = 0.0
    for trial in range(100):
        x = rng.random((16, 16))
        target = ("LV", "RV", "MYO", "FOREGROUND_SUM")[trial % 4]
        a = adapter.activations([x])[0]
        grad = adapter.gradients([x], target)[0]
        fd = np.empty_like(grad)
        for i in range(len(a)):
            ap, am = a.copy(), a.copy()
            ap[i] += h
            am[i] -= h
            fd[i] = (
                adapter.head_value(ap, target) - adapter.head_value(am, target)
            ) / (2 * h)
        rel = np.abs(grad - fd) / np.maximum(np.abs(grad), 1e-12)
        worst = max(worst, float(rel.max()))
    assert worst < 1e-5, f"max relative error {worst:.2e}"
