from fractions import Fraction

import numpy as np
import pytest

from bloblib.components import label_components
from bloblib.errors import DimsMismatchError, NumericalError, UsageError
from bloblib.losses import (BaseLoss, BlobLossConfig, OneHotSegmentation, base_loss,
                            blob_loss, blob_term, instance_domain_mask, multiclass_blob_loss)
from bloblib.volume import InstanceLabeling

from oracles import blob_term_bruteforce, dice_loss_naive, random_labels

TINY = BaseLoss(epsilon=1e-15)


def line(values, dtype=float):
    return np.asarray(values, dtype=dtype).reshape(1, 1, -1)


def random_case(rng, shape=None, max_instances=4):
    shape = shape or tuple(rng.integers(2, 9, size=3))
    labels, n = random_labels(rng, shape, max_instances)
    p = rng.uniform(0.0, 1.0, size=shape)
    return p, labels > 0, InstanceLabeling(labels, n)


# base loss

def test_perfect_prediction_is_near_zero(rng):
    g = rng.random((4, 4, 4)) < 0.3
    g[0, 0, 0] = True
    res = base_loss(g.astype(float), g)
    eps = BaseLoss().epsilon
    assert 0 <= res.value <= eps / (2 * g.sum() + eps)


@pytest.mark.parametrize("k", [1, 3, 10])
def test_zero_prediction(k):
    g = np.zeros((1, 1, 12), bool)
    g[0, 0, :k] = True
    eps = BaseLoss().epsilon
    assert base_loss(np.zeros(g.shape), g).value == pytest.approx(1 - eps / (k + eps), rel=1e-15)


def test_hand_case_one_third():
    res = base_loss(line([1, 0, 0, 0]), line([1, 1, 0, 0], bool), TINY)
    assert res.value == pytest.approx(1 / 3, abs=1e-14)


def test_matches_naive_loop(rng):
    for _ in range(20):
        p, g, _ = random_case(rng)
        domain = rng.random(p.shape) < 0.7
        eps = 1e-5
        got = base_loss(p, g, BaseLoss(epsilon=eps), domain).value
        assert got == pytest.approx(dice_loss_naive(p, g, domain, eps), abs=1e-12)


def test_tversky_half_half_equals_dice(rng):
    for _ in range(100):
        p, g, _ = random_case(rng)
        d = base_loss(p, g, BaseLoss("soft-dice"))
        t = base_loss(p, g, BaseLoss("tversky", 0.5, 0.5))
        assert abs(d.value - t.value) <= 1e-12
        assert np.max(np.abs(d.grad - t.grad)) <= 1e-12


def test_tversky_weights_shift_penalty():
    g = line([1, 1, 0, 0], bool)
    fp_heavy = line([1, 1, 1, 1.0])
    lenient = base_loss(fp_heavy, g, BaseLoss("tversky", 0.1, 0.9)).value
    strict = base_loss(fp_heavy, g, BaseLoss("tversky", 0.9, 0.1)).value
    assert strict > lenient


def test_bad_inputs():
    with pytest.raises(DimsMismatchError):
        base_loss(np.zeros((2, 2, 2)), np.zeros((2, 2, 1), bool))
    with pytest.raises(UsageError):
        base_loss(np.full((1, 1, 1), 1.5), np.ones((1, 1, 1), bool))
    with pytest.raises(NumericalError):
        base_loss(np.full((1, 1, 1), np.nan), np.ones((1, 1, 1), bool))
    with pytest.raises(UsageError):
        BaseLoss("focal")


# instance domains

def test_domain_single_instance_is_everything():
    lab = label_components(line([0, 1, 1, 0], bool))
    assert instance_domain_mask(lab, 1).all()


def test_domain_excludes_other_instances():
    lab = InstanceLabeling(line([1, 1, 0, 0, 2, 0], np.uint32), 2)
    assert not (instance_domain_mask(lab, 1) & (lab.labels == 2)).any()


def test_domain_popcount(rng):
    for _ in range(20):
        _, _, lab = random_case(rng)
        sizes = np.bincount(lab.labels.ravel(), minlength=lab.n_instances + 1)
        for n in range(1, lab.n_instances + 1):
            expected = lab.labels.size - (sizes[1:].sum() - sizes[n])
            assert instance_domain_mask(lab, n).sum() == expected


# blob term

SIX = InstanceLabeling(line([1, 1, 0, 0, 2, 0], np.uint32), 2)
SIX_P = line([1, 1, 0, 0, 0, 0])


def test_blob_term_hand_case():
    assert blob_term(SIX_P, SIX, TINY).value == pytest.approx(0.5, abs=1e-14)


def test_blob_loss_hand_case():
    res = blob_loss(SIX_P, SIX.foreground, SIX, BlobLossConfig(2.0, 1.0, TINY))
    assert res.global_term == pytest.approx(0.2, abs=1e-14)
    assert res.value == pytest.approx(0.9, abs=1e-14)
    # rational check of the hand evaluation
    assert 2 * (1 - Fraction(4, 5)) + Fraction(1, 2) == Fraction(9, 10)


def test_single_instance_equals_global(rng):
    for _ in range(20):
        g = np.zeros((5, 5, 5), bool)
        g[1:3, 2:4, 1:4] = True
        lab = label_components(g)
        p = rng.random(g.shape)
        for base in (BaseLoss(), BaseLoss("tversky", 0.3, 0.7)):
            b = blob_term(p, lab, base)
            gl = base_loss(p, g, base)
            assert b.value == gl.value
            assert np.array_equal(b.grad, gl.grad)


def test_perfect_blob_prediction(rng):
    _, g, lab = random_case(rng)
    assert blob_term(g.astype(float), lab).value < 1e-5


@pytest.mark.parametrize("masking", [True, False])
def test_blob_term_matches_bruteforce(rng, masking):
    for _ in range(100):
        p, _, lab = random_case(rng)
        for base in (BaseLoss(), BaseLoss("tversky", 0.3, 0.8)):
            got = blob_term(p, lab, base, masking)
            value, grad = blob_term_bruteforce(
                p, lab.labels, lab.n_instances,
                lambda p_, inst, dom: base_loss(p_, inst, base, dom), masking)
            assert abs(got.value - value) <= 1e-12
            assert np.max(np.abs(got.grad - grad)) <= 1e-12


def test_blob_term_value_matches_naive_loop(rng):
    for _ in range(30):
        p, _, lab = random_case(rng)
        n = lab.n_instances
        expected = 0.0
        for i in range(1, n + 1):
            dom = (lab.labels == 0) | (lab.labels == i)
            expected += dice_loss_naive(p, lab.labels == i, dom, 1e-5)
        assert blob_term(p, lab).value == pytest.approx(expected / n, abs=1e-12)


def test_blob_term_requires_instances():
    with pytest.raises(UsageError):
        blob_term(np.zeros((2, 2, 2)), InstanceLabeling(np.zeros((2, 2, 2), np.uint32), 0))


def test_fp_identity(rng):
    # per-instance coefficient written through Y_i = L_i*Y and Y_fp = background*Y
    for _ in range(100):
        p, _, lab = random_case(rng)
        background = lab.labels == 0
        y_fp = (p * background).sum()
        for i in range(1, lab.n_instances + 1):
            inst = lab.labels == i
            dom = background | inst
            coeff = 1 - base_loss(p, inst, BaseLoss(epsilon=1e-300), dom).value
            y_i = (p * inst).sum()
            assert coeff == pytest.approx(2 * y_i / (inst.sum() + y_i + y_fp), abs=1e-12)


def test_false_positive_blob_increases_blob_term(rng):
    for _ in range(30):
        p, _, lab = random_case(rng, (8, 8, 8))
        free = np.flatnonzero(lab.labels.ravel() == 0)
        extra = p.copy()
        extra.flat[free[:5]] = np.minimum(1.0, extra.flat[free[:5]] + 0.5)
        assert blob_term(extra, lab).value > blob_term(p, lab).value


# masking

def test_masking_locality_exact(rng):
    for _ in range(30):
        p, _, lab = random_case(rng)
        if lab.n_instances < 2:
            continue
        for n in range(1, lab.n_instances + 1):
            single = InstanceLabeling((lab.labels == n).astype(np.uint32), 1)
            dom = instance_domain_mask(lab, n)
            term = base_loss(p, lab.labels == n, BaseLoss(), dom)
            outside = ~dom
            assert np.all(term.grad[outside] == 0.0)
            q = p.copy()
            q[outside] = rng.random(int(outside.sum()))
            assert base_loss(q, single.labels == 1, BaseLoss(), dom).value == term.value


def test_no_masking_couples_instances():
    lab = SIX
    p = line([0.6, 0.4, 0.1, 0.2, 0.3, 0.1])
    dom2 = instance_domain_mask(lab, 2)
    masked = base_loss(p, lab.labels == 2, BaseLoss(), dom2)
    unmasked = base_loss(p, lab.labels == 2, BaseLoss())
    assert masked.grad[0, 0, 0] == 0.0
    assert unmasked.grad[0, 0, 0] != 0.0
    q = p.copy()
    q[0, 0, 0] = 0.9
    assert base_loss(q, lab.labels == 2, BaseLoss(), dom2).value == masked.value
    assert base_loss(q, lab.labels == 2, BaseLoss()).value != unmasked.value


# blob loss composition

def test_beta_zero_is_scaled_global(rng):
    for _ in range(30):
        p, g, lab = random_case(rng)
        alpha = float(rng.uniform(0.1, 3))
        res = blob_loss(p, g, lab, BlobLossConfig(alpha, 0.0))
        gl = base_loss(p, g)
        assert res.value == alpha * gl.value
        assert np.array_equal(res.grad, alpha * gl.grad)


def test_alpha_zero_single_instance():
    g = np.zeros((4, 4, 4), bool)
    g[1:3, 1:3, 1:3] = True
    p = np.linspace(0, 1, 64).reshape(g.shape)
    assert blob_loss(p, g, cfg=BlobLossConfig(0.0, 1.0)).value == base_loss(p, g).value


def test_hyperparameter_linearity(rng):
    for _ in range(30):
        p, g, lab = random_case(rng)
        cfg = BlobLossConfig(float(rng.uniform(0, 3)), float(rng.uniform(0, 3)))
        a = blob_loss(p, g, lab, cfg)
        b = blob_loss(p, g, lab, cfg.scaled(2.0))
        assert b.value == pytest.approx(2 * a.value, rel=1e-14)
        assert np.allclose(b.grad, 2 * a.grad, rtol=1e-14, atol=0)


def test_empty_ground_truth_trains_on_global():
    p = np.full((3, 3, 3), 0.2)
    g = np.zeros(p.shape, bool)
    res = blob_loss(p, g)
    assert res.n_instances == 0 and res.blob_term == 0.0
    assert res.value == 2.0 * base_loss(p, g).value


def test_labels_must_cover_gt():
    g = line([1, 1, 0, 0], bool)
    bad = InstanceLabeling(line([1, 0, 0, 0], np.uint32), 1)
    with pytest.raises(UsageError):
        blob_loss(line([0.5] * 4), g, bad)


def test_labels_derived_from_gt():
    g = line([1, 0, 1, 0, 0, 1], bool)
    res = blob_loss(line([0.5] * 6), g)
    assert res.n_instances == 3


# multiclass

def test_single_class_equals_binary(rng):
    for _ in range(20):
        p, g, lab = random_case(rng)
        seg = OneHotSegmentation(g[None], (lab,))
        mc = multiclass_blob_loss(p[None], seg)
        bn = blob_loss(p, g, lab)
        assert mc.value == bn.value
        assert np.array_equal(mc.grad[0], bn.grad)


def test_empty_class_rule(rng):
    p, g, lab = random_case(rng)
    empty = np.zeros_like(g)
    seg = OneHotSegmentation(np.stack([g, empty]),
                             (lab, InstanceLabeling(np.zeros(g.shape, np.uint32), 0)))
    q = np.stack([p, rng.random(p.shape)])
    cfg = BlobLossConfig(2.0, 1.0)
    res = multiclass_blob_loss(q, seg, cfg)
    glob = (base_loss(q[0], g).value + base_loss(q[1], empty).value) / 2
    assert res.value == pytest.approx(2.0 * glob + blob_term(p, lab).value, abs=1e-14)


def test_two_class_blob_is_mean_of_binaries(rng):
    for _ in range(20):
        classes = rng.integers(0, 3, size=(5, 6, 7))
        classes.flat[:2] = [1, 2]
        seg = OneHotSegmentation.from_class_map(classes, 2)
        q = rng.random((2,) + classes.shape)
        res = multiclass_blob_loss(q, seg)
        terms = [blob_loss(q[c], seg.masks[c], seg.labelings[c]).blob_term for c in range(2)]
        assert res.blob_term == pytest.approx((terms[0] + terms[1]) / 2, abs=1e-14)


def test_one_hot_validation():
    m = np.ones((2, 1, 1, 2), bool)
    with pytest.raises(UsageError):
        OneHotSegmentation.from_masks(m)
    seg = OneHotSegmentation.from_masks(np.ones((1, 1, 1, 2), bool))
    with pytest.raises(DimsMismatchError):
        multiclass_blob_loss(np.zeros((2, 1, 1, 2)), seg)
