import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bloblib.components import Connectivity, label_components
from bloblib.errors import PlacementError, UsageError
from bloblib.synth import (SynthSpec, ball, generate, make_rng, max_distance, place_blobs,
                           shape_features)
from bloblib.volume import Dims

FEATURES = ("compactness", "sphereness", "stringness", "skewness")


def digital_ball(r):
    n = 2 * r + 3
    return ball(Dims(n, n, n), (r + 1, r + 1, r + 1), r)


def string(k):
    m = np.zeros((1, 1, k), bool)
    m[:] = True
    return m


def test_noise_free_single_blob_is_indicator():
    spec = SynthSpec(dims=(24, 24, 24), n_small=0, noise_sigma=0.0, seed=3)
    intensity, gt = generate(spec)
    assert np.array_equal(intensity, gt.astype(float))


def test_generation_is_deterministic():
    a = generate(SynthSpec(seed=11))
    b = generate(SynthSpec(seed=11))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    c = generate(SynthSpec(seed=12))
    assert not np.array_equal(a[1], c[1])


def test_six_blobs_found():
    spec = SynthSpec(dims=(48, 48, 48), n_large=1, large_radius=6, n_small=5, small_radius=1)
    for seed in range(5):
        _, gt = generate(spec.with_seed(seed))
        assert label_components(gt).n_instances == 6


@pytest.mark.parametrize("conn", list(Connectivity))
def test_blob_count_under_every_connectivity(conn):
    spec = SynthSpec()
    for seed in range(5):
        _, gt = generate(spec.with_seed(seed))
        assert label_components(gt, conn).n_instances == spec.n_large + spec.n_small


def test_intensity_levels_and_range():
    spec = SynthSpec(noise_sigma=0.0, seed=4)
    intensity, gt = generate(spec)
    assert set(np.unique(intensity[gt])) <= {1.0, spec.small_contrast}
    assert not intensity[~gt].any()
    noisy, _ = generate(spec.__class__(seed=4))
    assert noisy.min() >= 0.0 and noisy.max() <= 1.0


def test_placement_respects_gap():
    spec = SynthSpec(seed=9)
    blobs = place_blobs(spec, make_rng(spec.seed))
    for (c1, r1, _), (c2, r2, _) in itertools.combinations(blobs, 2):
        assert math.dist(c1, c2) > r1 + r2 + spec.min_gap


def test_unsatisfiable_placement():
    with pytest.raises(PlacementError):
        generate(SynthSpec(dims=(12, 12, 12), n_large=4, large_radius=4, n_small=0))
    with pytest.raises(PlacementError):
        generate(SynthSpec(dims=(8, 8, 8), large_radius=6))


def test_spec_validation():
    with pytest.raises(UsageError):
        SynthSpec(small_contrast=0.0)
    with pytest.raises(UsageError):
        SynthSpec(small_radius=(3, 1))
    assert SynthSpec.from_dict(SynthSpec(seed=5).to_dict()) == SynthSpec(seed=5)


def test_philox_stream_keys():
    a = make_rng(1, 2).random(4)
    assert np.array_equal(a, make_rng(1, 2).random(4))
    assert not np.array_equal(a, make_rng(2, 1).random(4))


# shape features

def test_single_voxel_conventions():
    f = shape_features(np.ones((1, 1, 1), bool))
    assert (f.volume, f.compactness, f.sphereness, f.stringness, f.skewness) == (1, 1, 1, 0, 0)


def test_ball_radius_eight():
    f = shape_features(digital_ball(8))
    assert f.compactness >= 0.9
    assert f.stringness <= 0.1
    assert f.skewness <= 0.05


def test_string_of_twenty():
    f = shape_features(string(20))
    assert f.stringness >= 0.7
    assert f.sphereness == pytest.approx((6 * 20 / math.pi) ** (1 / 3) / 19, rel=1e-12)


def test_features_in_unit_interval(rng):
    for _ in range(20):
        m = label_components(rng.random((6, 6, 6)) < 0.5)
        for n in range(1, m.n_instances + 1):
            f = shape_features(m.labels == n)
            for name in FEATURES:
                assert 0.0 <= getattr(f, name) <= 1.0
            assert f.stringness == 1.0 - f.sphereness


def test_skewed_blob_has_positive_skewness():
    m = np.zeros((1, 3, 12), bool)
    m[0, :, :3] = True
    m[0, 1, :] = True
    assert shape_features(m).skewness > 0.2


def test_monotone_stringness():
    values = [shape_features(string(k)).stringness for k in range(4, 21)]
    assert all(b >= a for a, b in zip(values, values[1:]))


@pytest.mark.parametrize("perm", list(itertools.permutations(range(3))))
def test_axis_permutation_invariance(perm, rng):
    blob = label_components(rng.random((5, 6, 7)) < 0.6).labels == 1
    base = shape_features(blob)
    moved = shape_features(np.transpose(blob, perm))
    for name in FEATURES + ("volume",):
        assert abs(getattr(base, name) - getattr(moved, name)) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 4), st.integers(0, 4), st.integers(0, 4))
def test_translation_invariance(dz, dy, dx):
    blob = np.zeros((4, 4, 4), bool)
    blob[0, 0, :3] = blob[1, 0, 0] = blob[2, 1, 0] = True
    big = np.zeros((9, 9, 9), bool)
    big[dz:dz + 4, dy:dy + 4, dx:dx + 4] = blob
    a, b = shape_features(blob), shape_features(big)
    assert a == b


def test_max_distance_backends_agree(backend, rng):
    pts = rng.integers(0, 30, size=(200, 3)).astype(float)
    brute = max(math.dist(a, b) for a, b in itertools.combinations(pts, 2))
    assert max_distance(pts) == pytest.approx(brute, rel=1e-15)


def test_empty_blob():
    with pytest.raises(UsageError):
        shape_features(np.zeros((2, 2, 2), bool))
