"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run under pytest (lines go straight to the terminal) or directly with
``python tests/test_acceptance.py`` for just the summary lines.
"""

import json
import sys
import time
from fractions import Fraction as F

import numpy as np
import pytest

from mcnet import selfcheck
from mcnet import tensor as T
from mcnet.encoder import attention_pool, relative_color_codes, relative_position_codes
from mcnet.harness import (
    ablate,
    benchmark_scene,
    checkpoint_dict,
    evaluate,
    imbalanced_scene_spec,
    train,
)
from mcnet.metrics import ConfusionMatrix, iou_per_class, mean_iou, overall_accuracy
from mcnet.model import ModelConfig, build_model
from mcnet.pointcloud import PointCloud, synth_scene
from mcnet.sampler import ClassWeights, draw_patch
from mcnet.spatial import knn_bruteforce, knn_grid, knn_self
from mcnet.voting import VoteInputs, argmax_baseline, vote
from test_voting import flipped_scene

# Overfit benchmark: the small 3-level network on the 4096-point 3-class scene.
OVERFIT_CONFIG = dict(patch_size=1024, epochs=300, batch_size=4, learning_rate=0.05)
# Ablation ordering protocol, fixed before looking at results.
ABLATION_CONFIG = dict(patch_size=512, epochs=100, batch_size=4, learning_rate=0.05)
ABLATION_SEEDS = range(5)


def _line(n, ok, detail):
    return f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


# ------------------------------------------------------------ 1. gradients

def criterion_1():
    start = time.perf_counter()
    results = selfcheck.run(seeds=range(10))
    elapsed = time.perf_counter() - start
    ops = [r for r in results if r.module != "model"]
    net = [r for r in results if r.module == "model"]
    worst_op = max(r.error for r in ops)
    worst_net = max(r.error for r in net)
    ok = all(r.passed for r in results) and elapsed < 120
    names = sorted({f"{r.module}.{r.name}" for r in ops})
    return ok, (f"{len(names)} ops x 10 seeds max rel err {worst_op:.1e} (< 1e-4); "
                f"network max {worst_net:.1e} (< 1e-3); {elapsed:.0f}s (< 120s)")


# ------------------------------------------------------------ 2. KNN oracle

def _random_cloud(rng, i):
    n = int(rng.integers(36, 2001))
    kind = i % 4
    if kind == 0:
        return rng.uniform(-5, 5, size=(n, 3))
    if kind == 1:
        return rng.normal(size=(n, 3)) * np.array([10.0, 10.0, 0.01])
    if kind == 2:
        # Integer lattice: many exact duplicates and distance ties.
        return np.round(rng.uniform(0, 4, size=(n, 3)))
    centers = rng.normal(size=(8, 3)) * 20
    return centers[rng.integers(8, size=n)] + rng.normal(scale=0.05, size=(n, 3))


def criterion_2():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    mismatches = 0
    for i in range(100):
        pos = _random_cloud(rng, i)
        for k in (1, 9, 16, 25, 36):
            g, b = knn_grid(pos, pos, k), knn_bruteforce(pos, pos, k)
            same = np.array_equal(g.indices, b.indices) and np.array_equal(g.distances, b.distances)
            mismatches += not same
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 60
    return ok, f"100 clouds x 5 K, {mismatches} mismatches; {elapsed:.0f}s (< 60s)"


# ------------------------------------------------------------ 3. code structure

def criterion_3():
    rng = np.random.default_rng(3)
    pos = np.round(rng.uniform(-8, 8, size=(200, 3)) * 256) / 256
    col = rng.uniform(size=(200, 3))
    nbrs = knn_self(pos, 16)
    p = relative_position_codes(pos, nbrs)
    c = relative_color_codes(col, nbrs)
    offset = np.array([1024.5, -37.25, 3.125])
    shifted = relative_position_codes(pos + offset, nbrs)
    checks = {
        "7-wide": p.shape == (200, 16, 7),
        "6-wide": c.shape == (200, 16, 6),
        "self zero": bool(np.all(p[:, 0, 3:] == 0)),
        "translation": np.array_equal(p[..., 3:], shifted[..., 3:]),
    }
    failed = [k for k, v in checks.items() if not v]
    return not failed, "checks " + ", ".join(checks) + (f"; failed {failed}" if failed else "")


# ------------------------------------------------------------ 4. permutation

def criterion_4():
    worst = 0.0
    for trial in range(20):
        rng = np.random.default_rng(400 + trial)
        n, k, c = 32, 16, 12
        fea = rng.normal(size=(n, k, c))
        w, b = T.Tensor(rng.normal(size=(c, c))), T.Tensor(rng.normal(size=c))
        perm = np.stack([rng.permutation(k) for _ in range(n)])
        shuffled = np.take_along_axis(fea, perm[:, :, None], axis=1)
        a = attention_pool(T.Tensor(fea), w, b).data
        s = attention_pool(T.Tensor(shuffled), w, b).data
        worst = max(worst, float(np.max(np.abs(a - s))))
    return worst < 1e-9, f"20 shuffles, max change {worst:.1e} (< 1e-9)"


# ------------------------------------------------------------ 5. overfit

def criterion_5():
    cloud = benchmark_scene(0)
    cfg = ModelConfig.test_profile(3, **OVERFIT_CONFIG)
    start = time.perf_counter()
    model = build_model(cfg)
    report = train(model, cloud, cfg)
    metrics = evaluate(model, cloud, cfg)
    elapsed = time.perf_counter() - start
    ok = metrics["oa"] >= 0.95 and metrics["miou"] >= 0.90 and elapsed < 600
    return ok, (f"OA {metrics['oa']:.4f} (>= 0.95), mIoU {metrics['miou']:.4f} (>= 0.90), "
                f"{cfg.epochs} epochs, final loss {report.losses[-1]:.3f}, {elapsed:.0f}s (< 600s)")


# ------------------------------------------------------------ 6. sampler

def criterion_6():
    n = 100
    labels = np.repeat([0, 1], n // 2)
    cloud = PointCloud(np.zeros((n, 3)), np.full((n, 3), 0.5), labels, 2)
    w = ClassWeights(np.array([2.0, 1.0]))
    rng = np.random.default_rng(6)
    draws = 100_000
    hits = sum(labels[draw_patch(cloud, w, 1, 1.0, rng).point_ids[0]] == 0 for _ in range(draws))
    p = 2 / 3
    sd = np.sqrt(draws * p * (1 - p))
    z = (hits - draws * p) / sd
    return abs(z) < 3, f"class-0 frequency {hits / draws:.4f} vs 0.6667, z = {z:+.2f} (|z| < 3)"


# ------------------------------------------------------------ 7. voting

def criterion_7():
    recovered = []
    for seed in range(5):
        inputs, truth, flipped = flipped_scene(seed)
        recovered.append(int(np.sum(vote(inputs).final_labels[flipped] == truth[flipped])))
    # Control: well-separated clusters whose neighborhoods are unanimous.
    degraded = 0
    for seed in range(20):
        rng = np.random.default_rng(700 + seed)
        members = np.repeat(np.arange(5), 20)
        pos = rng.normal(scale=100, size=(5, 3))[members] + rng.normal(scale=0.01, size=(100, 3))
        truth_c = rng.integers(3, size=5)[members]
        lp = rng.normal(size=(5, 3))[members] * 3
        ctrl = VoteInputs(lp, lp.copy(), knn_self(pos, 10))
        oa_vote = np.mean(vote(ctrl).final_labels == truth_c)
        degraded += oa_vote < np.mean(argmax_baseline(lp) == truth_c)
    ok = min(recovered) >= 8 and degraded == 0
    return ok, (f"recovered {recovered} of 10 flips over 5 scenes (each >= 8); "
                f"control OA degraded in {degraded}/20 scenes (== 0)")


# ------------------------------------------------------------ 8. ablation

def criterion_8():
    start = time.perf_counter()
    base = ModelConfig.test_profile(3, **{**ABLATION_CONFIG, "epochs": 20})
    rows = ablate(benchmark_scene(0, points=2048), base)
    structural = [r["model"] for r in rows] == list("ABCDE") and all(r["nan_free"] for r in rows)
    wins = []
    table = []
    for seed in ABLATION_SEEDS:
        train_cloud = synth_scene(imbalanced_scene_spec(seed))
        eval_cloud = synth_scene(imbalanced_scene_spec(seed + 100))
        cfg = ModelConfig.test_profile(3, seed=seed, **ABLATION_CONFIG)
        seed_rows = ablate(train_cloud, cfg, eval_cloud)
        structural &= all(r["nan_free"] for r in seed_rows)
        miou = {r["model"]: r["miou"] for r in seed_rows}
        wins.append(max(miou, key=miou.get) == "E")
        table.append(" ".join(f"{m}={v:.3f}" for m, v in miou.items()))
    elapsed = time.perf_counter() - start
    for seed, row in zip(ABLATION_SEEDS, table):
        print(f"    ablation seed {seed}: {row}", file=sys.stderr)
    ok = structural and sum(wins) >= 3
    return ok, (f"rows A-E NaN-free: {structural}; E best in {sum(wins)}/5 seeds (>= 3); "
                f"{elapsed:.0f}s")


# ------------------------------------------------------------ 9. metrics

def criterion_9():
    cases = [
        ([[1, 1], [0, 2]], F(3, 4), F(7, 12)),
        ([[3, 0], [0, 5]], F(1), F(1)),
        ([[0, 2], [3, 0]], F(0), F(0)),
        ([[1, 1, 0], [0, 2, 0], [0, 0, 0]], F(3, 4), F(7, 12)),
        ([[2, 1, 1], [0, 3, 0], [1, 0, 4]], F(3, 4), (F(2, 5) + F(3, 4) + F(4, 6)) / 3),
    ]
    bad = []
    for counts, oa, miou in cases:
        cm = ConfusionMatrix(len(counts), counts)
        if overall_accuracy(cm) != float(oa) or mean_iou(cm) != float(miou):
            bad.append(counts)
    cm = ConfusionMatrix(2, [[1, 1], [0, 2]])
    iou_ok = list(iou_per_class(cm)) == [0.5, 2 / 3]
    ok = not bad and iou_ok
    return ok, f"{len(cases)} crafted matrices exact (incl. [[1,1],[0,2]] -> 0.75, 7/12)"


# ------------------------------------------------------------ 10. determinism

def criterion_10():
    cloud = benchmark_scene(0, points=1024)
    cfg = ModelConfig.test_profile(3, patch_size=256, epochs=10, learning_rate=0.05)
    blobs = []
    for _ in range(2):
        model = build_model(cfg)
        report = train(model, cloud, cfg)
        report.metrics = evaluate(model, cloud, cfg)
        ckpt = json.dumps(checkpoint_dict(model), sort_keys=True)
        blobs.append((ckpt, json.dumps(report.to_dict(), sort_keys=True)))
    same_ckpt = blobs[0][0] == blobs[1][0]
    same_report = blobs[0][1] == blobs[1][1]
    return same_ckpt and same_report, (f"checkpoints identical: {same_ckpt}, "
                                       f"reports identical: {same_report}")


CRITERIA = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
    6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10,
}


@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_criterion(n, capsys):
    ok, detail = CRITERIA[n]()
    with capsys.disabled():
        print("\n" + _line(n, ok, detail))
    assert ok, detail


def main(selected=None):
    failed = 0
    for n in selected or sorted(CRITERIA):
        ok, detail = CRITERIA[n]()
        print(_line(n, ok, detail), flush=True)
        failed += not ok
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main([int(a) for a in sys.argv[1:]]))
