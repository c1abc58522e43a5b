"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline; they
are also repeated in the terminal summary.
"""
import os
import time

import numpy as np
import pytest

from gridsight.cli import main
from gridsight.config import loads_config, parse_config
from gridsight.detector import Detection, detect, interpolate_track, map_image, primary_detection
from gridsight.imagecore import GrayImage, QuantizedImage, load_image
from gridsight.mrmr import mrmr_select, mutual_information, mutual_information_from_joint
from gridsight.svm import smo_train
from gridsight.synth import FeatureRecipe, assemble_training_set, build_layout, extract_matrix, read_labels
from gridsight.svm import train_bundle
from gridsight.texture import glcm_counts, glrcm_counts, normalize_matrix, ogcm_counts

from conftest import VERDICTS
from oracles import greedy_mrmr, naive_glcm, naive_glrcm, naive_ogcm, qp_dual
from synthetic import iou, write_dataset

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def verdict(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    print(line)
    VERDICTS.append(line)
    assert ok, line


# 1 -------------------------------------------------------------------------

def test_criterion_1_matrix_oracles():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(200):
        raw = rng.integers(0, 256, (32, 32))
        G = int(rng.integers(2, 17))
        # independent quantization
        qa = (raw * G) >> 8
        q = QuantizedImage(qa, G)

        R = int(rng.integers(1, 15))
        cx, cy = (int(v) for v in rng.integers(R + 1, 31 - R, size=2))
        pair = ("axis", "diagonal")[int(rng.integers(2))]
        mismatches += not np.array_equal(ogcm_counts(q, [(cx, cy)], R, pair)[0], naive_ogcm(qa, cx, cy, R, pair, G))

        w = int(rng.integers(1, 6))
        N = int(rng.integers(1, 15 // w + 1))
        gx, gy = (int(v) for v in rng.integers(N * w, 32 - N * w, size=2))
        mismatches += not np.array_equal(glrcm_counts(q, [(gx, gy)], w, N)[0], naive_glrcm(qa, gx, gy, w, N, G))

        off = (0, 0)
        while off == (0, 0):
            off = tuple(int(v) for v in rng.integers(-3, 4, size=2))
        sym = bool(rng.integers(2))
        got = glcm_counts(q, [(cx, cy)], R, off, sym)[0]
        mismatches += not np.array_equal(got, naive_glcm(qa, cx, cy, R, off, sym, G))
    elapsed = time.perf_counter() - t0
    verdict(1, mismatches == 0 and elapsed < 30,
            f"{mismatches} mismatches over 600 matrices (200 images), {elapsed:.1f}s (limit 30s)")


# 2 -------------------------------------------------------------------------

def _timing_layout(R):
    return build_layout([FeatureRecipe("GLRCM", 8, w=R // 4, N=4), FeatureRecipe("OGCM", 8, pair="axis"),
                         FeatureRecipe("OGCM", 8, pair="diagonal"), FeatureRecipe("GLCM", 8)])


def test_criterion_2_linear_complexity():
    rng = np.random.default_rng(11)
    img = GrayImage(rng.integers(0, 256, (400, 400)))
    small, large = _timing_layout(16), _timing_layout(32)
    extract_matrix(img, [(200, 200)], small)
    extract_matrix(img, [(200, 200)], large)
    ratios = []
    for _ in range(100):
        pos = [(int(x), int(y)) for x, y in rng.integers(40, 360, (64, 2))]
        t0 = time.perf_counter()
        extract_matrix(img, pos, small)
        t1 = time.perf_counter()
        extract_matrix(img, pos, large)
        t2 = time.perf_counter()
        ratios.append((t2 - t1) / (t1 - t0))
    med = float(np.median(ratios))
    verdict(2, 3 <= med <= 5, f"median R=32/R=16 extraction time ratio {med:.2f} over 100 trials (want [3, 5])")


# 3 -------------------------------------------------------------------------

def checkerboard(scale, cell=3, size=160):
    y, x = np.mgrid[0:size, 0:size]
    return ((x // (cell * scale) + y // (cell * scale)) % 2) * 180 + 40


def test_criterion_3_resolution_robustness():
    G, w, N = 8, 3, 4
    R = N * w
    a = QuantizedImage((checkerboard(1) * G) >> 8, G)
    b = QuantizedImage((checkerboard(2) * G) >> 8, G)
    ca, cb = (40, 40), (80, 80)  # same pattern location at both scales
    glrcm = np.abs(normalize_matrix(glrcm_counts(a, [ca], w, N)[0])
                   - normalize_matrix(glrcm_counts(b, [cb], 2 * w, N)[0])).sum()
    glcm = np.abs(normalize_matrix(glcm_counts(a, [ca], R)[0])
                  - normalize_matrix(glcm_counts(b, [cb], 2 * R)[0])).sum()
    verdict(3, glrcm <= 0.1 and glrcm < glcm,
            f"L1 GLRCM {glrcm:.4f} (limit 0.1) vs GLCM {glcm:.4f} at 1x/2x scale")


# 4 -------------------------------------------------------------------------

def test_criterion_4_smo_vs_qp():
    rng = np.random.default_rng(404)
    tol = 1e-3
    worst_gap = worst_kkt = worst_eq = 0.0
    box_ok = True
    t0 = time.perf_counter()
    for _ in range(50):
        n, d = int(rng.integers(4, 31)), int(rng.integers(1, 6))
        X = rng.normal(size=(n, d))
        y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        y[:2] = (1.0, -1.0)
        C = float(rng.choice([0.1, 1.0, 10.0, 100.0]))
        gamma = float(rng.uniform(0.1, 2.0))
        m = smo_train(X, y, C, gamma, tol=tol)
        _, dual = qp_dual(X, y, C, gamma)
        worst_gap = max(worst_gap, abs(m.dual_objective() - dual) / max(1.0, abs(dual)))

        alpha = np.zeros(n)
        for sv, a in zip(m.support_vectors, m.alphas):
            alpha[np.flatnonzero((X == sv).all(axis=1))[0]] = a
        box_ok &= bool((alpha >= 0).all() and (alpha <= C).all())
        worst_eq = max(worst_eq, abs(float(alpha @ y)))
        yf = y * m.decision_values(X)
        viol = np.where(alpha <= 0, 1 - yf, np.where(alpha >= C, yf - 1, np.abs(yf - 1)))
        worst_kkt = max(worst_kkt, float(viol.max()))
    elapsed = time.perf_counter() - t0
    ok = worst_gap <= 1e-3 and worst_kkt <= tol and box_ok and worst_eq <= 1e-9 and elapsed < 60
    verdict(4, ok, f"max rel dual gap {worst_gap:.2e}, max KKT violation {worst_kkt:.2e}, "
                   f"box {'ok' if box_ok else 'violated'}, max |sum a y| {worst_eq:.1e}, {elapsed:.1f}s")


# 5 -------------------------------------------------------------------------

def test_criterion_5_xor():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    y = np.array([-1.0, -1.0, 1.0, 1.0])
    m = smo_train(X, y, C=100, gamma=1.0)
    acc = float((np.sign(m.decision_values(X)) == y).mean())
    verdict(5, acc == 1.0, f"XOR training accuracy {acc:.2f}")


# 6 -------------------------------------------------------------------------

def test_criterion_6_mrmr():
    rng = np.random.default_rng(66)
    agree = 0
    for _ in range(20):
        n, d = int(rng.integers(40, 160)), int(rng.integers(6, 13))
        y = rng.integers(0, int(rng.integers(2, 4)), n)
        X = rng.normal(size=(n, d))
        for j in rng.choice(d, 3, replace=False):
            X[:, j] += rng.uniform(0.3, 2.0) * y
        X[:, -1] = X[:, 0] * 0.8 + rng.normal(scale=0.4, size=n)
        got = mrmr_select(X, y, 5, t_mi=0.01, t_corr=0.95, B=8).selected
        agree += got == greedy_mrmr(X, y, 5, 0.01, 0.95, 8)
    tables = [
        (mutual_information_from_joint([[0.25, 0.25], [0.0, 0.5]]), 0.3113),
        (mutual_information([0, 0, 1, 1], [0, 1, 1, 1]), 0.3113),
        (mutual_information_from_joint([[0.5, 0.0], [0.0, 0.5]]), 1.0),
        (mutual_information_from_joint([[0.25, 0.25], [0.25, 0.25]]), 0.0),
    ]
    mi_err = max(abs(a - b) for a, b in tables)
    verdict(6, agree == 20 and mi_err <= 1e-4,
            f"{agree}/20 selections equal the greedy oracle; max MI table error {mi_err:.1e}")


# 7 -------------------------------------------------------------------------

def test_criterion_7_end_to_end(tmp_path):
    t0 = time.perf_counter()
    cfg_path, labels, tests, truths = write_dataset(tmp_path, n_train=20, n_test=10, marks=10, seed=2025)
    cfg = parse_config(cfg_path)
    assert cfg.sampling.negative_ratio == 3
    ts = assemble_training_set(read_labels(labels), cfg.layout, cfg.grid, cfg.sampling.negative_ratio,
                               cfg.sampling.seed)
    bundle = train_bundle(ts, cfg.layout, cfg.grid, C=cfg.svm.C, gamma=cfg.svm.gamma, tol=cfg.svm.tol,
                          k=cfg.mrmr.k, t_mi=cfg.mrmr.t_mi, t_corr=cfg.mrmr.t_corr, bins=cfg.mrmr.bins)
    scores = []
    for path, truth in zip(tests, truths):
        pm = map_image(load_image(path), bundle)
        best = primary_detection(detect(pm, cfg.detect.p_min, cfg.link_distance, ["disk"]))
        scores.append(0.0 if best is None else iou(best.rect, truth))
    elapsed = time.perf_counter() - t0
    hits = sum(s >= 0.5 for s in scores)
    verdict(7, hits >= 9 and elapsed < 300,
            f"{hits}/10 held-out images with IoU >= 0.5 (min {min(scores):.2f}), {elapsed:.1f}s (limit 300s)")


# 8 -------------------------------------------------------------------------

def test_criterion_8_track_interpolation():
    rng = np.random.default_rng(8)
    worst = 0.0
    rules_ok = True
    for _ in range(200):
        frames = {}
        for f in sorted(rng.choice(30, int(rng.integers(2, 10)), replace=False).tolist()):
            cx, cy = rng.uniform(0, 500, 2)
            hw, hh = rng.uniform(1, 40, 2)
            frames[f] = Detection("obj", (cx - hw, cy - hh, cx + hw, cy + hh), (cx, cy), f, False, (), 3)
        max_gap = int(rng.integers(0, 4))
        track = interpolate_track(frames, max_gap)
        keys = sorted(frames)
        expected = set(keys)
        for a, b in zip(keys, keys[1:]):
            if b - a - 1 <= max_gap:
                expected.update(range(a + 1, b))
            if b - a == 2 and max_gap >= 1:
                mid = track.frames[a + 1]
                want = [(u + v) / 2 for u, v in zip(frames[a].centroid + frames[a].rect,
                                                     frames[b].centroid + frames[b].rect)]
                worst = max(worst, max(abs(g - e) for g, e in zip(mid.centroid + mid.rect, want)))
                rules_ok &= mid.interpolated
        rules_ok &= set(track.frames) == expected
        rules_ok &= min(track.frames) == keys[0] and max(track.frames) == keys[-1]
    verdict(8, worst <= 1e-9 and rules_ok,
            f"max midpoint error {worst:.1e}; gap and no-extrapolation rules {'hold' if rules_ok else 'broken'}")


# 9 -------------------------------------------------------------------------

def _pipeline(root, cfg, labels, images):
    out = {name: str(root / name) for name in ("model.json", "map.csv", "dets.jsonl", "track.jsonl")}
    codes = [
        main(["train", "--config", cfg, "--labels", labels, "--out", out["model.json"]]),
        main(["map", "--model", out["model.json"], "--out", out["map.csv"]] + images),
        main(["detect", "--map", out["map.csv"], "--config", cfg, "--out", out["dets.jsonl"]]),
        main(["track", "--detections", out["dets.jsonl"], "--config", cfg, "--out", out["track.jsonl"]]),
    ]
    assert codes == [0, 0, 0, 0]
    return {name: open(path, "rb").read() for name, path in out.items()}


def test_criterion_9_determinism(tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    cfg, labels, tests, _ = write_dataset(data, n_train=8, n_test=4, marks=10, seed=99)
    runs = []
    for i in range(2):
        d = tmp_path / f"run{i}"
        d.mkdir()
        runs.append(_pipeline(d, cfg, labels, tests))
    same = [name for name in runs[0] if runs[0][name] == runs[1][name]]
    verdict(9, len(same) == 4, f"{len(same)}/4 output files byte-identical across two runs ({', '.join(same)})")


# 10 ------------------------------------------------------------------------

def test_criterion_10_feature_count():
    cfg = parse_config(os.path.join(ROOT, "configs", "default.toml"))
    dim = cfg.layout.total_dim
    verdict(10, 24 <= dim <= 5000, f"default sweep layout dimension {dim} (want 24..5000)")
