"""Synthetic instance-imbalanced volumes and per-blob shape descriptors."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Union

import numpy as np

from . import _accel
from ._accel import njit
from .errors import PlacementError, UsageError
from .metrics import surface_voxels
from .volume import Dims, as_mask

MAX_RETRIES = 1000
# centers closer than this (plus radii and gap) could touch under 26-connectivity
_DIAGONAL = math.sqrt(3.0)

Radius = Union[int, tuple]


def _radius_range(r) -> tuple[int, int]:
    if isinstance(r, (list, tuple)):
        lo, hi = (int(v) for v in r)
    else:
        lo = hi = int(r)
    if lo < 0 or hi < lo:
        raise UsageError(f"invalid radius {r!r}")
    return lo, hi


@dataclass(frozen=True)
class SynthSpec:
    """Blob layout for one synthetic sample.

    ``small_radius`` is either an integer or an inclusive ``(lo, hi)`` range
    sampled per blob. Blob centers are separated by more than
    ``r1 + r2 + sqrt(3) + min_gap`` so no two blobs touch under any connectivity.
    """

    dims: Dims = Dims(48, 48, 48)
    n_large: int = 1
    large_radius: int = 6
    n_small: int = 6
    small_radius: Radius = (1, 2)
    small_contrast: float = 0.45
    noise_sigma: float = 0.08
    min_gap: float = 3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", Dims.of(*self.dims))
        if isinstance(self.small_radius, list):
            object.__setattr__(self, "small_radius", tuple(self.small_radius))
        _radius_range(self.small_radius)
        _radius_range(self.large_radius)
        if self.n_large < 0 or self.n_small < 0:
            raise UsageError("blob counts must be >= 0")
        if not 0 < self.small_contrast <= 1:
            raise UsageError("small_contrast must lie in (0, 1]")
        if self.noise_sigma < 0 or self.min_gap < 0:
            raise UsageError("noise_sigma and min_gap must be >= 0")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise UsageError("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        if "dims" in d:
            d["dims"] = Dims.of(*d["dims"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        if isinstance(self.small_radius, tuple):
            d["small_radius"] = list(self.small_radius)
        return d

    def with_seed(self, seed: int) -> "SynthSpec":
        return replace(self, seed=int(seed))


def make_rng(*keys) -> np.random.Generator:
    """Counter-based (Philox) stream keyed by integers; same keys, same stream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in keys])))


def ball(dims: Dims, center, radius: int) -> np.ndarray:
    """Voxels whose center lies within ``radius`` of ``center`` (x, y, z)."""
    z, y, x = np.ogrid[:dims.nz, :dims.ny, :dims.nx]
    cx, cy, cz = center
    return (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2 <= radius * radius


def place_blobs(spec: SynthSpec, rng: np.random.Generator) -> list[tuple[tuple, int, bool]]:
    """Sample ``(center, radius, is_large)`` for every blob, large ones first."""
    dims = spec.dims
    l_lo, l_hi = _radius_range(spec.large_radius)
    s_lo, s_hi = _radius_range(spec.small_radius)
    wanted = ([(l_lo, l_hi, True)] * spec.n_large) + ([(s_lo, s_hi, False)] * spec.n_small)
    placed = []
    for lo, hi, is_large in wanted:
        r = int(rng.integers(lo, hi + 1))
        if 2 * r + 1 > min(dims):
            raise PlacementError(f"radius {r} does not fit in {tuple(dims)}")
        for _ in range(MAX_RETRIES):
            c = tuple(int(rng.integers(r, n - r)) for n in dims)
            if all(math.dist(c, c2) > r + r2 + _DIAGONAL + spec.min_gap
                   for c2, r2, _ in placed):
                placed.append((c, r, is_large))
                break
        else:
            raise PlacementError(
                f"could not place blob {len(placed) + 1} within {MAX_RETRIES} retries")
    return placed


def generate(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(intensity, gt)`` for ``spec``; bit-identical for a fixed seed."""
    rng = make_rng(spec.seed)
    blobs = place_blobs(spec, rng)
    dims = spec.dims
    clean = np.zeros(dims.shape)
    gt = np.zeros(dims.shape, dtype=bool)
    for center, r, is_large in blobs:
        sphere = ball(dims, center, r)
        gt |= sphere
        clean[sphere] = 1.0 if is_large else spec.small_contrast
    noise = rng.standard_normal(dims.shape)
    intensity = np.clip(clean + spec.noise_sigma * noise, 0.0, 1.0)
    return intensity, gt


@dataclass(frozen=True)
class ShapeFeatures:
    volume: int
    compactness: float
    sphereness: float
    stringness: float
    skewness: float
    sphereness_raw: float

    def to_dict(self) -> dict:
        return asdict(self)


@njit(cache=True)
def _max_distance_numba(pts):
    best = 0.0
    n = pts.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            d = 0.0
            for k in range(3):
                t = pts[i, k] - pts[j, k]
                d += t * t
            if d > best:
                best = d
    return math.sqrt(best)


def _max_distance_numpy(pts, chunk=512):
    best = 0.0
    for start in range(0, len(pts), chunk):
        block = pts[start:start + chunk]
        d2 = ((block[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        best = max(best, float(d2.max()))
    return math.sqrt(best)


def max_distance(points) -> float:
    """Largest Euclidean distance between any two rows of ``points``."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if len(pts) < 2:
        return 0.0
    if _accel.use_numba():
        return float(_max_distance_numba(pts))
    return _max_distance_numpy(pts)


def shape_features(blob) -> ShapeFeatures:
    """Compactness, sphereness, stringness and skewness of one connected blob."""
    blob = as_mask(blob, "blob")
    if not blob.any():
        raise UsageError("shape features need a nonempty blob")
    idx = np.nonzero(blob)
    lo = [int(i.min()) for i in idx]
    hi = [int(i.max()) + 1 for i in idx]
    crop = blob[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    vol = int(np.count_nonzero(crop))

    # farthest pair is always among the surface voxels
    extreme = np.argwhere(surface_voxels(crop)).astype(np.float64)
    d_max = max(max_distance(extreme), 1.0)
    d_eq = (6.0 * vol / math.pi) ** (1.0 / 3.0)
    compactness = min(1.0, vol / (math.pi / 6.0 * d_max ** 3))
    sphereness = d_eq / max(d_max, d_eq)

    pts = np.argwhere(crop).astype(np.float64)
    centered = pts - pts.mean(axis=0)
    skewness = 0.0
    if vol > 1:
        _, vecs = np.linalg.eigh(centered.T @ centered / vol)
        proj = centered @ vecs[:, -1]
        m2 = float(np.mean(proj ** 2))
        if m2 > 1e-12:
            g1 = abs(float(np.mean(proj ** 3)) / m2 ** 1.5)
            skewness = g1 / (1.0 + g1)
    return ShapeFeatures(volume=vol, compactness=compactness, sphereness=sphereness,
                         stringness=1.0 - sphereness, skewness=skewness,
                         sphereness_raw=d_max / d_eq)
