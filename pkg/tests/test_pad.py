import numpy as np
import pytest

import irisynth.pad as pad
from irisynth.data import ToyIrisSpec, toy_iris
from irisynth.quality import GrayImage, Segmentation


def _center_seg(size=64, r_p=8.0, r_i=26.0):
    c = (size - 1) / 2
    return Segmentation((c, c), r_p, (c, c), r_i)


def test_feature_vector_shape_and_invariants():
    img, seg = toy_iris(ToyIrisSpec(identity_seed=1), 64)
    f = pad.feature_vector(img, seg)
    assert f.shape == (pad.FEATURE_LENGTH,)
    assert np.all(np.isfinite(f)) and np.all(f >= 0)
    lbpv = f[36:]
    assert abs(lbpv.sum() - 1.0) < 1e-12
    assert np.array_equal(f, pad.feature_vector(img, seg))


def test_zernike_constant_image():
    zm = pad.zernike_magnitudes(GrayImage(np.full((64, 64), 0.5)), _center_seg())
    assert zm.shape == (36,)
    assert np.all(zm[1:] < 1e-6 * zm[0])


def test_zernike_rho_cos_theta():
    size = 129
    seg = _center_seg(size, 10.0, 50.0)
    c = (size - 1) / 2
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    rho = np.hypot(xx - c, yy - c) / 50.0
    theta = np.arctan2(yy - c, xx - c)
    img = GrayImage(np.clip(0.5 + 0.4 * rho * np.cos(theta), 0, 1))
    zm = pad.zernike_magnitudes(img, seg)
    idx = pad._zernike_indices(10)
    z11 = zm[idx.index((1, 1))]
    others = [zm[i] for i, nm in enumerate(idx) if nm not in ((0, 0), (1, 1))]
    assert z11 > 10 * max(others)


def test_zernike_rotation_invariance():
    img, seg = toy_iris(ToyIrisSpec(identity_seed=2), 65)
    rot = GrayImage(np.rot90(img.pixels).copy())
    a = pad.zernike_magnitudes(img, seg)
    b = pad.zernike_magnitudes(rot, seg)
    rel = np.max(np.abs(a - b) / (np.abs(a) + 1e-12))
    assert rel < 1e-2


def test_zernike_rejects_negative_order():
    with pytest.raises(ValueError):
        pad.zernike_magnitudes(GrayImage(np.full((64, 64), 0.5)),
                               _center_seg(), n_max=-1)


def test_lbpv_constant_image_all_zero():
    h = pad.lbpv_histogram(GrayImage(np.full((32, 32), 0.7)))
    assert h.shape == (10,)
    assert np.array_equal(h, np.zeros(10))


def test_lbpv_checkerboard_mass_in_top_bins():
    yy, xx = np.mgrid[0:32, 0:32]
    img = GrayImage(((yy + xx) % 2).astype(float))
    h = pad.lbpv_histogram(img)
    # with >= ties, a dark center sees all 8 neighbors set (code 8) and a
    # bright center sees the 4 diagonal ties (4 transitions, non-uniform
    # code 9); all mass lands in those two bins
    assert abs(h[8] + h[9] - 1.0) < 1e-12
    assert np.allclose(h[:8], 0.0)


def test_lbpv_rot90_equality():
    img, _ = toy_iris(ToyIrisSpec(identity_seed=3), 64)
    rot = GrayImage(np.rot90(img.pixels).copy())
    # rotation permutes the summation order, so allow float-level residue
    assert np.allclose(pad.lbpv_histogram(img), pad.lbpv_histogram(rot),
                       rtol=0, atol=1e-12)


def test_fold_partition_properties():
    labels = np.concatenate([np.zeros(100), np.ones(100)])
    assign = pad._fold_assignment(labels, None, 5, seed=2)
    assert len(assign) == 200
    for f in range(5):
        test = assign == f
        assert test.sum() == 40
        # stratified: 20 per class per fold
        assert np.sum(test & (labels == 0)) == 20
    assert set(assign) == set(range(5))


def test_fold_identity_disjoint():
    labels = np.concatenate([np.zeros(20), np.ones(20)])
    idents = [f"r{i // 2}" for i in range(20)] + [f"a{i // 2}" for i in range(20)]
    assign = pad._fold_assignment(labels, idents, 5, seed=0)
    for ident in set(idents):
        folds = {assign[i] for i, x in enumerate(idents) if x == ident}
        assert len(folds) == 1


def test_train_pad_separable():
    # classes separated by a 3-sigma shift in every feature; perfect CV
    # metrics are the oracle for a cleanly separable problem
    rng = np.random.default_rng(1)
    real = rng.normal(0, 1, (50, pad.FEATURE_LENGTH))
    attack = rng.normal(3, 1, (50, pad.FEATURE_LENGTH))
    rep = pad.train_pad(real, attack, seed=4)
    assert rep.mean_accuracy == 1.0
    assert rep.mean_eer == 0.0
    assert len(rep.folds) == 5
    for r in rep.folds:
        assert r.roc.shape[1] == 3


def test_train_pad_validation():
    feats = np.zeros((3, pad.FEATURE_LENGTH))
    with pytest.raises(ValueError, match="folds"):
        pad.train_pad(feats, feats, folds=1)
    with pytest.raises(ValueError, match="samples"):
        pad.train_pad(feats, feats, folds=5)


def test_pad_model_outputs_probabilities():
    rng = np.random.default_rng(5)
    real = rng.normal(0, 1, (20, pad.FEATURE_LENGTH))
    attack = rng.normal(2, 1, (20, pad.FEATURE_LENGTH))
    rep = pad.train_pad(real, attack, folds=2, seed=1, epochs=50)
    probs = rep.folds[0].model.predict(np.concatenate([real, attack]))
    assert np.all((probs > 0) & (probs < 1))


def test_train_pad_deterministic():
    rng = np.random.default_rng(6)
    real = rng.normal(0, 1, (30, pad.FEATURE_LENGTH))
    attack = rng.normal(1, 1, (30, pad.FEATURE_LENGTH))
    a = pad.train_pad(real, attack, seed=7, epochs=60)
    b = pad.train_pad(real, attack, seed=7, epochs=60)
    assert a.mean_accuracy == b.mean_accuracy and a.mean_eer == b.mean_eer


def test_eer_reference_cases():
    from irisynth.scores import eer, roc_points

    assert eer([2.0, 3.0, 4.0], [-1.0, 0.0, 1.0]) == 0.0
    same = list(np.linspace(0, 1, 50))
    assert abs(eer(same, same) - 0.5) < 0.02
    pts = roc_points([1.0, 2.0], [0.0, 0.5])
    assert np.all(np.diff(pts[:, 1]) <= 0) and np.all(np.diff(pts[:, 2]) >= 0)
