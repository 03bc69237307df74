"""Acceptance criteria, one test per criterion.

Each check prints a single ``PASS``/``FAIL`` line with the measured numbers.
Run standalone with ``python tests/test_acceptance.py`` or through pytest
(``pytest tests/test_acceptance.py -s`` shows the verdict lines inline).
"""

import itertools
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from _gradcheck import LAYERS, end_to_end_error, layer_error  # noqa: E402
from idus import cli  # noqa: E402
from idus.clustering import kmeans  # noqa: E402
from idus.driver import IdusConfig, run_baseline, run_idus, schedule  # noqa: E402
from idus.evaluation import evaluate, exhaustive_assignment, lsa_assignment  # noqa: E402
from idus.features import (  # noqa: E402
    LBP_BINS,
    WindowSpec,
    glcm,
    gradient_orientation_bins,
    haralick,
    hog_features,
    uniform_lbp_table,
)
from idus.imagery import desk_dataset, load_label_image  # noqa: E402
from idus.superpixel import grid_segmentation, is_connected_partition, map_labels, pool, relabel_dense, slic  # noqa: E402

# pinned tolerances and thresholds
GRAD_REL_TOL = 1e-4
GRAD_INSTANCES = 20
GRAD_BUDGET_S = 120.0
POOL_ATOL = 1e-12
POOL_PAIRS = 50
KMEANS_INSTANCES = 100
KMEANS_RESTARTS = 100
KMEANS_OPTIMUM_RATE = 0.95
ASSIGN_MATRICES = 100
SLIC_FUZZ = 200
HOG_WINDOWS = 100
DESK_MIN_ACCURACY = 0.85
DESK_BASELINE_RESTARTS = 100
FULL_SCALE_LRS = (1e-4, 1e-5, 1e-6, 1e-7)


def verdict(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} | {detail}"
    print(line, flush=True)
    return ok, line


# ---------------------------------------------------------------------------
# criteria


def criterion_1():
    start = time.perf_counter()
    worst = {}
    for layer in LAYERS:
        worst[layer] = max(layer_error(layer, seed) for seed in range(GRAD_INSTANCES))
    worst["end_to_end"] = max(end_to_end_error(seed) for seed in range(GRAD_INSTANCES))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < GRAD_REL_TOL and elapsed < GRAD_BUDGET_S
    detail = f"max rel err {max(worst.values()):.2e} over {GRAD_INSTANCES} seeds x {len(worst)} checks, {elapsed:.1f}s"
    return verdict(1, "gradient correctness", ok, detail)


def _naive_pool(f, seg):
    k = seg.max() + 1
    sums = np.zeros((k, f.shape[2]))
    counts = np.zeros(k)
    for y in range(seg.shape[0]):
        for x in range(seg.shape[1]):
            sums[seg[y, x]] += f[y, x]
            counts[seg[y, x]] += 1
    return sums / counts[:, None]


def _naive_map(seg, labels):
    out = np.empty(seg.shape, dtype=np.int64)
    for y in range(seg.shape[0]):
        for x in range(seg.shape[1]):
            out[y, x] = labels[seg[y, x]]
    return out


def criterion_2():
    rng = np.random.default_rng(2024)
    pool_err, map_ok, fixed_ok = 0.0, True, True
    for _ in range(POOL_PAIRS):
        h, w, d = (int(v) for v in rng.integers(4, 20, size=3))
        seg = relabel_dense(rng.integers(0, int(rng.integers(1, 12)), size=(h, w)))
        f = rng.normal(size=(h, w, d))
        pool_err = max(pool_err, float(np.abs(pool(f, seg) - _naive_pool(f, seg)).max()))
        labels = rng.integers(0, 5, size=seg.max() + 1)
        map_ok &= np.array_equal(map_labels(seg, labels), _naive_map(seg, labels))
        piecewise = rng.normal(size=(seg.max() + 1, d))[seg]
        back = map_labels(seg, np.argmax(pool(piecewise, seg), axis=1))
        fixed_ok &= np.array_equal(back, np.argmax(piecewise, axis=2))
    ok = pool_err <= POOL_ATOL and map_ok and fixed_ok
    detail = f"pool max err {pool_err:.1e}, map exact {map_ok}, argmax fixed point exact {fixed_ok}"
    return verdict(2, "pool/map oracle equivalence", ok, detail)


def _brute_force(x, m):
    n = len(x)
    assign = np.array(list(itertools.product(range(m), repeat=n)))
    onehot = (assign[..., None] == np.arange(m)).astype(np.float64)
    counts = onehot.sum(axis=1)
    sums = np.einsum("pnm,nd->pmd", onehot, x)
    explained = np.sum(np.sum(sums**2, axis=2) / np.maximum(counts, 1), axis=1)
    return float(np.sum(x**2) - explained.max())


def criterion_3():
    rng = np.random.default_rng(3)
    optimal, monotone_runs, runs = 0, 0, 0
    for _ in range(KMEANS_INSTANCES):
        m = int(rng.integers(1, 4))
        n = int(rng.integers(max(m, 2), 11))
        x = rng.normal(size=(n, 2)) * rng.uniform(0.5, 3.0)
        seed = int(rng.integers(1 << 31))
        model = kmeans(x, m, seed=seed, restarts=KMEANS_RESTARTS)
        best = _brute_force(x, m)
        optimal += model.inertia <= best + 1e-9 * max(1.0, best)
        for r in range(5):
            hist = np.array(kmeans(x, m, seed=seed + r, restarts=1).inertia_history)
            runs += 1
            monotone_runs += bool(np.all(np.diff(hist) <= 1e-12 * (1 + hist[:-1])))
    rate = optimal / KMEANS_INSTANCES
    ok = rate >= KMEANS_OPTIMUM_RATE and monotone_runs == runs
    detail = f"global optimum in {optimal}/{KMEANS_INSTANCES}, monotone Lloyd in {monotone_runs}/{runs} runs"
    return verdict(3, "k-means correctness", ok, detail)


def criterion_4():
    rng = np.random.default_rng(4)
    agree, invariant = 0, 0
    for _ in range(ASSIGN_MATRICES):
        score = rng.random((7, 7))
        p1, v1 = exhaustive_assignment(score)
        p2, v2 = lsa_assignment(score)
        agree += bool(np.array_equal(p1, p2) and v1 == v2)
        shuffled = score[:, rng.permutation(7)]
        invariant += exhaustive_assignment(shuffled)[1] == v1
    ok = agree == ASSIGN_MATRICES and invariant == ASSIGN_MATRICES
    detail = f"exhaustive == LSA on {agree}/{ASSIGN_MATRICES}, column-permutation invariant on {invariant}/{ASSIGN_MATRICES}"
    return verdict(4, "assignment optimality", ok, detail)


def criterion_5():
    rng = np.random.default_rng(5)
    valid = 0
    for _ in range(SLIC_FUZZ):
        h, w = (int(v) for v in rng.integers(4, 33, size=2))
        d = int(rng.integers(1, 4))
        target = int(rng.integers(1, min(h * w, 40) + 1))
        f = rng.random((h, w, d)) * rng.choice([1e-3, 1.0, 10.0])
        seg = slic(f, target, compactness=float(rng.uniform(0, 5)), max_iters=int(rng.integers(1, 11)))
        valid += seg.shape == (h, w) and is_connected_partition(seg)
    quad = slic(np.full((16, 16), 0.5), target_segments=4)
    quad_ok = np.array_equal(quad, grid_segmentation(16, 16, 4)) and np.all(np.bincount(quad.ravel()) == 64)
    ok = valid == SLIC_FUZZ and quad_ok
    detail = f"dense 4-connected partitions {valid}/{SLIC_FUZZ}, constant 16x16 quadrants {quad_ok}"
    return verdict(5, "SLIC invariants", ok, detail)


def criterion_6():
    checker = np.indices((4, 4)).sum(axis=0) % 2
    c = glcm(checker, (1, 0), 2)
    contrast, _, energy, homogeneity = haralick(c / c.sum())
    # 12 horizontal pairs, all unequal, doubled by symmetry: p = [[0, .5], [.5, 0]]
    glcm_ok = np.array_equal(c, [[0, 12], [12, 0]]) and (contrast, energy, homogeneity) == (1.0, 0.5, 0.5)
    c = glcm(checker, (1, 1), 2)
    contrast, _, energy, homogeneity = haralick(c / c.sum())
    glcm_ok &= np.array_equal(c, [[10, 0], [0, 8]]) and contrast == 0.0 and homogeneity == 1.0
    glcm_ok &= abs(energy - (10**2 + 8**2) / 18**2) < 1e-15

    uniform = [code for code in range(256)
               if sum(((code >> k) & 1) != ((code >> ((k + 1) % 8)) & 1) for k in range(8)) <= 2]
    lbp_ok = len(uniform) + 1 == 59 == LBP_BINS == uniform_lbp_table(8).max() + 1

    rng = np.random.default_rng(6)
    eps = 1e-6
    hog_ok = 0
    for _ in range(HOG_WINDOWS):
        px = rng.random((12, 12)) * rng.choice([1e-4, 1.0])
        y, x = (int(v) for v in rng.integers(0, 12, size=2))
        hog = hog_features(px, WindowSpec(radius=2), eps=eps)[y, x]
        mag, idx = gradient_orientation_bins(px, 9)
        mag, idx = np.pad(mag, 2, mode="symmetric"), np.pad(idx, 2, mode="symmetric")
        raw = np.zeros(9)
        np.add.at(raw, idx[y : y + 5, x : x + 5].ravel(), mag[y : y + 5, x : x + 5].ravel())
        expected = raw / np.sqrt(raw @ raw + eps**2)
        hog_ok += bool(np.allclose(hog, expected, rtol=1e-9, atol=1e-12) and np.linalg.norm(hog) <= 1.0)
    ok = glcm_ok and lbp_ok and hog_ok == HOG_WINDOWS
    detail = f"checkerboard GLCM exact {glcm_ok}, LBP bins {LBP_BINS} ({len(uniform)} uniform + 1), HOG norm {hog_ok}/{HOG_WINDOWS}"
    return verdict(6, "classical-feature oracles", ok, detail)


def criterion_7():
    data = desk_dataset()
    cfg = IdusConfig.desk()
    start = time.perf_counter()
    result = run_idus(data, cfg)
    idus_time = time.perf_counter() - start
    _, idus_summary = evaluate(list(result.labels), data.masks, cfg.num_classes)
    start = time.perf_counter()
    base = run_baseline(data, "glcm", cfg.num_classes, superpixels=cfg.superpixels, seed=0,
                        restarts=DESK_BASELINE_RESTARTS)
    base_time = time.perf_counter() - start
    _, base_summary = evaluate(base.labels, data.masks, cfg.num_classes)
    acc, base_acc = idus_summary["mean_class_accuracy"], base_summary["mean_class_accuracy"]
    ok = acc >= DESK_MIN_ACCURACY and acc > base_acc
    detail = (f"IDUS {acc:.4f} (>= {DESK_MIN_ACCURACY}) in {idus_time:.0f}s, "
              f"GLCM baseline {base_acc:.4f} in {base_time:.0f}s")
    return verdict(7, "desk-scale experiment", ok, detail)


def criterion_8():
    cfg = IdusConfig.full_scale()
    events = list(schedule(cfg))
    boundaries = [ep for kind, ep, _ in events if kind == "boundaries"]
    labels = [ep for kind, ep, _ in events if kind == "labels"]
    lrs = [lr for kind, _, lr in events if kind == "train"]
    per_iteration = [lrs[i * cfg.update_labels_every : (i + 1) * cfg.update_labels_every]
                     for i in range(cfg.outer_iterations)]
    lr_ok = all(
        len(set(block)) == 4
        and np.allclose(sorted(set(block), reverse=True), FULL_SCALE_LRS, rtol=1e-12, atol=0)
        and block[0] == FULL_SCALE_LRS[0]
        for block in per_iteration
    )
    ok = (cfg.epochs_total == 1000 and len(lrs) == 1000 and len(boundaries) == 5 and len(labels) == 5
          and lr_ok)
    detail = (f"epochs {len(lrs)}, boundary updates {boundaries}, label updates {labels}, "
              "lr per iteration " + ", ".join(f"{v:.0e}" for v in sorted(set(per_iteration[0]), reverse=True)))
    return verdict(8, "schedule fidelity", ok, detail)


def criterion_9(workdir):
    workdir = Path(workdir)
    data = workdir / "data"
    cli.main(["gen", "--classes", "3", "--count", "4", "--size", "32", "--seed", "9", "--out", str(data)])
    cfg = IdusConfig(num_classes=3, update_labels_every=2, update_boundaries_every=2, outer_iterations=2,
                     batch_size=2, superpixels=16, cluster_restarts=3, textons_per_image=8,
                     encoder_widths=(4, 8), decoder_widths=(8, 4), base_lr=1e-3)
    (workdir / "run.cfg").write_text(cfg.to_text())

    def labels(out):
        return [load_label_image(p).tobytes() for p in sorted((out / "labels").glob("*.png"))]

    identical = {}
    for command in ("idus", "baseline"):
        outs = []
        for run in ("a", "b"):
            out = workdir / f"{command}_{run}"
            if command == "idus":
                args = ["idus", "--config", str(workdir / "run.cfg")]
            else:
                args = ["baseline", "--recipe", "glcm", "--classes", "3", "--superpixels", "16",
                        "--restarts", "5", "--radius", "3"]
            code = cli.main(args + ["--data", str(data / "dataset.txt"), "--out", str(out)])
            outs.append(labels(out) if code == 0 else None)
        identical[command] = outs[0] is not None and len(outs[0]) == 4 and outs[0] == outs[1]
    ok = all(identical.values())
    detail = ", ".join(f"{k} label maps bitwise identical: {v}" for k, v in identical.items())
    return verdict(9, "determinism", ok, detail)


# ---------------------------------------------------------------------------
# pytest entry points


def _check(capsys, outcome):
    ok, line = outcome
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def test_criterion_1_gradients(capsys):
    _check(capsys, criterion_1())


def test_criterion_2_pool_map(capsys):
    _check(capsys, criterion_2())


def test_criterion_3_kmeans(capsys):
    _check(capsys, criterion_3())


def test_criterion_4_assignment(capsys):
    _check(capsys, criterion_4())


def test_criterion_5_slic(capsys):
    _check(capsys, criterion_5())


def test_criterion_6_features(capsys):
    _check(capsys, criterion_6())


@pytest.mark.slow
def test_criterion_7_desk_experiment(capsys):
    _check(capsys, criterion_7())


def test_criterion_8_schedule(capsys):
    _check(capsys, criterion_8())


def test_criterion_9_determinism(capsys, tmp_path):
    _check(capsys, criterion_9(tmp_path))


if __name__ == "__main__":
    import tempfile

    results = []
    for check in (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
                  criterion_7, criterion_8):
        results.append(check()[0])
    with tempfile.TemporaryDirectory() as tmp:
        results.append(criterion_9(tmp)[0])
    print(f"{sum(results)}/{len(results)} criteria passed")
    sys.exit(0 if all(results) else 1)
