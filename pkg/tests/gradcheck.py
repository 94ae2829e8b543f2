"""Finite-difference harness shared by the gradient tests and the acceptance suite."""
import numpy as np

from bloblib.losses import (BaseLoss, BlobLossConfig, OneHotSegmentation, base_loss,
                            blob_loss, blob_term, multiclass_blob_loss)
from bloblib.volume import InstanceLabeling

from oracles import central_differences, max_rel_error, random_labels

STEP = 1e-6
LOSSES = ("soft-dice", "tversky", "blob_term", "blob_loss", "multiclass_blob_loss")


def random_triple(rng):
    shape = tuple(int(s) for s in rng.integers(2, 9, size=3))
    while np.prod(shape) > 8 ** 3:
        shape = tuple(int(s) for s in rng.integers(2, 9, size=3))
    labels, n = random_labels(rng, shape, max_instances=4)
    # keep p away from the [0, 1] edges so the +-h probes stay valid
    p = rng.uniform(0.01, 0.99, size=shape)
    return p, labels > 0, InstanceLabeling(labels, n)


def check_case(rng, kind):
    """Return max relative error of analytic vs central-difference gradient."""
    p, g, lab = random_triple(rng)
    tversky = BaseLoss("tversky", float(rng.uniform(0.1, 0.9)), float(rng.uniform(0.1, 0.9)))
    cfg = BlobLossConfig(float(rng.uniform(0.5, 3)), float(rng.uniform(0.5, 3)))
    if kind == "soft-dice":
        fn = lambda q: base_loss(q, g)
    elif kind == "tversky":
        fn = lambda q: base_loss(q, g, tversky)
    elif kind == "blob_term":
        masking = bool(rng.integers(0, 2))
        fn = lambda q: blob_term(q, lab, BaseLoss(), masking)
    elif kind == "blob_loss":
        fn = lambda q: blob_loss(q, g, lab, cfg)
    else:
        second, n2 = random_labels(rng, p.shape, max_instances=3)
        second[lab.labels > 0] = 0
        seg = OneHotSegmentation.from_masks(np.stack([g, second > 0]))
        p = np.stack([p, rng.uniform(0.01, 0.99, size=p.shape)])
        fn = lambda q: multiclass_blob_loss(q, seg, cfg)
    analytic = fn(p).grad
    numeric = central_differences(lambda q: fn(q).value, p, STEP)
    return max_rel_error(analytic, numeric)


def run_suite(rng, n_cases):
    """Max relative error per loss over ``n_cases`` random triples (cycled across losses)."""
    worst = {k: 0.0 for k in LOSSES}
    for i in range(n_cases):
        kind = LOSSES[i % len(LOSSES)]
        worst[kind] = max(worst[kind], check_case(rng, kind))
    return worst
