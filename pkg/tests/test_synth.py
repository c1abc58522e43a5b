import warnings

import numpy as np
import pytest

from gridsight.errors import DimensionMismatch, FormatError, InsufficientData, InvalidParameter
from gridsight.imagecore import GrayImage, GridSpec, QuantizedImage
from gridsight.synth import (BACKGROUND, FeatureLayout, FeatureRecipe, LabeledPoint, apply_scaler,
                             assemble_training_set, build_layout, extract_matrix, extract_vector, fit_scaler,
                             parse_labels, sweep_recipes)


def test_layout_dimensions():
    glrcm = FeatureRecipe("GLRCM", 8, w=3, N=5)
    ogcm = [FeatureRecipe("OGCM", 8, pair="axis"), FeatureRecipe("OGCM", 8, pair="diagonal")]
    assert build_layout([glrcm]).total_dim == 40
    assert build_layout(ogcm, radius=15).total_dim == 128
    both = build_layout([glrcm] + ogcm)
    assert both.total_dim == 168 and both.radius == 15
    assert 24 <= both.total_dim <= 5000
    stats = build_layout([FeatureRecipe("GLCM_STATS", 4)], radius=3)
    assert stats.total_dim == 3
    assert stats.slot_names() == ["GLCM_STATS[G=4,dx=1,dy=0,sym=0]:homogeneity",
                                  "GLCM_STATS[G=4,dx=1,dy=0,sym=0]:entropy",
                                  "GLCM_STATS[G=4,dx=1,dy=0,sym=0]:contrast"]
    assert both.slot_names()[0] == "GLRCM[G=8,w=3,N=5]:1,0"


def test_layout_errors():
    with pytest.raises(InvalidParameter):
        build_layout([])
    with pytest.raises(InvalidParameter):
        build_layout([FeatureRecipe("GLRCM", 8, w=3, N=5)], radius=12)
    with pytest.raises(InvalidParameter):
        build_layout([FeatureRecipe("OGCM", 8)])  # no radius implied
    with pytest.raises(InvalidParameter):
        FeatureRecipe("OGCM", 8, pair="sideways")
    with pytest.raises(InvalidParameter):
        FeatureRecipe("GLCM", 1)
    with pytest.raises(InvalidParameter):
        FeatureRecipe("HOG", 8)


def test_layout_serialization_roundtrip():
    layout = build_layout(sweep_recipes() + [FeatureRecipe("GLCM", 4, offset=(0, 2), symmetric=True),
                                            FeatureRecipe("GLCM_STATS", 8)], 15)
    text = layout.to_json()
    again = FeatureLayout.from_json(text)
    assert again.to_json() == text
    assert again == layout
    rng = np.random.default_rng(0)
    img = GrayImage(rng.integers(0, 256, (40, 40)))
    assert np.array_equal(extract_vector(img, (20, 20), layout).view(np.uint64),
                          extract_vector(img, (20, 20), again).view(np.uint64))


def test_extract_constant_image():
    layout = build_layout([FeatureRecipe("GLRCM", 4, w=1, N=2)])
    img = QuantizedImage(np.full((9, 9), 3), 4)
    v = extract_vector(img, (4, 4), layout, R=2)
    names = layout.slot_names()
    assert v[names.index("GLRCM[G=4,w=1,N=2]:1,3")] == pytest.approx(5 / 13)
    assert v[names.index("GLRCM[G=4,w=1,N=2]:2,3")] == pytest.approx(8 / 13)
    assert np.count_nonzero(v) == 2
    assert len(v) == layout.total_dim


def test_extract_deterministic_and_quantizes_per_recipe():
    rng = np.random.default_rng(4)
    img = GrayImage(rng.integers(0, 256, (30, 30)))
    layout = build_layout([FeatureRecipe("GLRCM", 4, w=2, N=3), FeatureRecipe("OGCM", 16),
                           FeatureRecipe("GLCM_STATS", 8, offset=(1, 1))])
    a = extract_vector(img, (15, 15), layout)
    b = extract_vector(img, (15, 15), layout)
    assert a.tobytes() == b.tobytes()
    assert a.shape == (layout.total_dim,) and np.isfinite(a).all()
    with pytest.raises(InvalidParameter):
        extract_vector(QuantizedImage(np.zeros((30, 30)), 4), (15, 15), layout)


def test_block_permutation_equivariance():
    rng = np.random.default_rng(9)
    img = GrayImage(rng.integers(0, 256, (40, 40)))
    recipes = [FeatureRecipe("GLRCM", 4, w=2, N=4), FeatureRecipe("OGCM", 4, pair="diagonal"),
               FeatureRecipe("GLCM", 8, offset=(0, 1)), FeatureRecipe("GLCM_STATS", 4)]
    order = [2, 0, 3, 1]
    base = build_layout(recipes)
    perm = build_layout([recipes[i] for i in order])
    v = extract_vector(img, (20, 20), base)
    w = extract_vector(img, (20, 20), perm)
    blocks = base.blocks()
    assert np.array_equal(w, np.concatenate([v[blocks[i]] for i in order]))


def test_scaler():
    s = fit_scaler([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
    assert s.mean[0] == pytest.approx(2) and s.std[0] == pytest.approx(np.sqrt(2 / 3))
    assert s.std[1] == 0
    col = apply_scaler(np.array([[1.0, 7.0], [2.0, 5.0], [3.0, -1.0]]), s)
    assert col[:, 0] == pytest.approx([-1.2247449, 0, 1.2247449])
    assert not col[:, 1].any()
    assert not apply_scaler(s.mean, s).any()
    rng = np.random.default_rng(1)
    X = rng.normal(3, 2, (50, 4))
    assert np.abs(apply_scaler(X, fit_scaler(X)).mean(axis=0)).max() < 1e-9
    with pytest.raises(InsufficientData):
        fit_scaler([[1.0, 2.0]])
    with pytest.raises(DimensionMismatch):
        apply_scaler([1.0], s)


def test_parse_labels():
    pts = parse_labels("# header\na.pgm disk 10 12\n\nb.pgm background 3 4  # trailing\n", "/data")
    assert pts == [LabeledPoint("/data/a.pgm", "disk", 10, 12), LabeledPoint("/data/b.pgm", "background", 3, 4)]
    with pytest.raises(FormatError):
        parse_labels("a.pgm disk 10\n")
    with pytest.raises(FormatError):
        parse_labels("a.pgm disk x 10\n")


@pytest.fixture
def scenes():
    rng = np.random.default_rng(21)
    return {f"im{i}": GrayImage(rng.integers(0, 256, (60, 60))) for i in range(3)}


LAYOUT = build_layout([FeatureRecipe("GLRCM", 4, w=2, N=3), FeatureRecipe("OGCM", 4)])
GRID = GridSpec(3, 6)


def test_assemble_with_explicit_background(scenes):
    pts = [LabeledPoint("im0", "a", 10 + i, 20) for i in range(5)]
    pts += [LabeledPoint("im1", "b", 30, 10 + i) for i in range(5)]
    pts += [LabeledPoint("im2", BACKGROUND, 40, 40 + i) for i in range(4)]
    ts = assemble_training_set(pts, LAYOUT, GRID, seed=1, loader=scenes.__getitem__)
    assert ts.X.shape == (14, LAYOUT.total_dim)
    assert ts.classes == ("a", "b", BACKGROUND)


def test_assemble_samples_negatives(scenes):
    pts = [LabeledPoint("im0", "a", 20 + i, 20 + i) for i in range(5)]
    pts += [LabeledPoint("im1", "a", 30, 25 + i) for i in range(5)]
    ts = assemble_training_set(pts, LAYOUT, GRID, negative_ratio=3, seed=5, loader=scenes.__getitem__)
    assert ts.labels.count(BACKGROUND) == 30
    assert ts.classes == ("a", BACKGROUND)
    marks = {}
    for p in pts:
        marks.setdefault(p.image, []).append((p.x, p.y))
    for (path, x, y), lab in zip(ts.sources, ts.labels):
        if lab == BACKGROUND:
            assert all((x - mx) ** 2 + (y - my) ** 2 > 36 for mx, my in marks[path])
    again = assemble_training_set(pts, LAYOUT, GRID, negative_ratio=3, seed=5, loader=scenes.__getitem__)
    assert again.sources == ts.sources and np.array_equal(again.X, ts.X)


def test_assemble_skips_border_points(scenes):
    pts = [LabeledPoint("im0", "a", 2, 2)] + [LabeledPoint("im0", "a", 30, 30)]
    with pytest.warns(UserWarning, match=r"\(2, 2\)"):
        ts = assemble_training_set(pts, LAYOUT, GRID, negative_ratio=2, seed=0, loader=scenes.__getitem__)
    assert ts.labels.count("a") == 1


def test_assemble_needs_two_classes(scenes):
    pts = [LabeledPoint("im0", "a", 30, 30)]
    with pytest.raises(InsufficientData), warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assemble_training_set(pts, LAYOUT, GRID, negative_ratio=0, seed=0, loader=scenes.__getitem__)


def test_extract_matrix_matches_vectors(scenes):
    img = scenes["im0"]
    pos = [(10, 10), (30, 40), (44, 17)]
    M = extract_matrix(img, pos, LAYOUT)
    for row, p in zip(M, pos):
        assert np.array_equal(row, extract_vector(img, p, LAYOUT))
