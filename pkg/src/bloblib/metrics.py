"""Volumetric, surface, and instance-detection metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import _accel
from ._accel import njit
from .components import DEFAULT_CONNECTIVITY, label_components
from .errors import UsageError
from .volume import InstanceLabeling, as_mask, as_probability, check_same_dims

MATCHING_MODES = ("greedy", "overlap")


def _ratio(num: int, den: int) -> float:
    """``num/den`` with the empty-set convention: 1 if both are empty, else 0."""
    if den == 0:
        return 1.0 if num == 0 else 0.0
    return num / den


def volumetric_metrics(pred, gt) -> tuple[float, float, float]:
    """(dsc, sensitivity, precision) of two binary masks."""
    pred = as_mask(pred, "pred")
    gt = as_mask(gt, "gt")
    check_same_dims(pred, gt)
    inter = int(np.count_nonzero(pred & gt))
    n_pred = int(np.count_nonzero(pred))
    n_gt = int(np.count_nonzero(gt))
    if n_pred + n_gt == 0:
        return 1.0, 1.0, 1.0
    dsc = 2 * inter / (n_pred + n_gt)
    sens = inter / n_gt if n_gt else 0.0
    prec = inter / n_pred if n_pred else 0.0
    return dsc, sens, prec


_FACES = np.array([(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)],
                  dtype=np.int64)


def ball_offsets(tol: float) -> np.ndarray:
    """Integer (dz, dy, dx) offsets with Euclidean length <= tol, nearest first."""
    r = int(np.floor(tol))
    rng = np.arange(-r, r + 1)
    dz, dy, dx = np.meshgrid(rng, rng, rng, indexing="ij")
    offs = np.stack([dz.ravel(), dy.ravel(), dx.ravel()], axis=1)
    d2 = (offs ** 2).sum(axis=1)
    keep = d2 <= tol * tol
    offs, d2 = offs[keep], d2[keep]
    return offs[np.lexsort((offs[:, 2], offs[:, 1], offs[:, 0], d2))].astype(np.int64)


@njit(cache=True)
def _surface_numba(mask):
    nz, ny, nx = mask.shape
    out = np.zeros(mask.shape, dtype=np.bool_)
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if not mask[z, y, x]:
                    continue
                for k in range(6):
                    zz = z + _FACES[k, 0]
                    yy = y + _FACES[k, 1]
                    xx = x + _FACES[k, 2]
                    if (zz < 0 or yy < 0 or xx < 0 or zz >= nz or yy >= ny or xx >= nx
                            or not mask[zz, yy, xx]):
                        out[z, y, x] = True
                        break
    return out


@njit(cache=True)
def _count_within_numba(src, dst, offsets):
    nz, ny, nx = src.shape
    hits = 0
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if not src[z, y, x]:
                    continue
                for k in range(offsets.shape[0]):
                    zz = z + offsets[k, 0]
                    yy = y + offsets[k, 1]
                    xx = x + offsets[k, 2]
                    if zz < 0 or yy < 0 or xx < 0 or zz >= nz or yy >= ny or xx >= nx:
                        continue
                    if dst[zz, yy, xx]:
                        hits += 1
                        break
    return hits


def _shift_or(mask, offsets, fill):
    """OR of ``mask`` shifted by every offset; out-of-volume reads return ``fill``."""
    shape = mask.shape
    pad = np.abs(offsets).max(axis=0)
    padded = np.full(tuple(s + 2 * r for s, r in zip(shape, pad)), fill, dtype=bool)
    padded[pad[0]:pad[0] + shape[0], pad[1]:pad[1] + shape[1], pad[2]:pad[2] + shape[2]] = mask
    out = np.zeros(shape, dtype=bool)
    for dz, dy, dx in offsets:
        out |= padded[pad[0] + dz:pad[0] + dz + shape[0], pad[1] + dy:pad[1] + dy + shape[1],
                      pad[2] + dx:pad[2] + dx + shape[2]]
    return out


def surface_voxels(mask) -> np.ndarray:
    """Foreground voxels with a background or out-of-volume face neighbor."""
    mask = np.ascontiguousarray(as_mask(mask))
    if _accel.use_numba():
        return _surface_numba(mask)
    return mask & _shift_or(~mask, _FACES, True)


def _count_within(src, dst, offsets) -> int:
    if _accel.use_numba():
        return int(_count_within_numba(src, dst, offsets))
    return int(np.count_nonzero(src & _shift_or(dst, offsets, False)))


def surface_dice(pred, gt, tol: float = 1.0) -> float:
    """Surface Dice at distance tolerance ``tol`` (voxels, Euclidean between centers)."""
    pred = as_mask(pred, "pred")
    gt = as_mask(gt, "gt")
    check_same_dims(pred, gt)
    if not tol >= 0:
        raise UsageError("tol must be >= 0")
    s_pred = surface_voxels(pred)
    s_gt = surface_voxels(gt)
    total = int(np.count_nonzero(s_pred)) + int(np.count_nonzero(s_gt))
    if total == 0:
        return 1.0
    offsets = ball_offsets(tol)
    hits = _count_within(s_pred, s_gt, offsets) + _count_within(s_gt, s_pred, offsets)
    return hits / total


def overlap_counts(pred_labels: InstanceLabeling, gt_labels: InstanceLabeling) -> dict:
    """``{(pred_id, gt_id): voxels}`` for every overlapping pair."""
    check_same_dims(pred_labels.labels, gt_labels.labels)
    pl = pred_labels.labels.ravel().astype(np.int64)
    gl = gt_labels.labels.ravel().astype(np.int64)
    both = (pl > 0) & (gl > 0)
    keys = pl[both] * (gt_labels.n_instances + 1) + gl[both]
    uniq, counts = np.unique(keys, return_counts=True)
    pred_ids, gt_ids = np.divmod(uniq, gt_labels.n_instances + 1)
    return {(int(a), int(b)): int(c) for a, b, c in zip(pred_ids, gt_ids, counts)}


@dataclass
class MatchingResult:
    pairs: list = field(default_factory=list)  # (pred_id, gt_id, overlap)
    unmatched_pred: list = field(default_factory=list)
    unmatched_gt: list = field(default_factory=list)


def match_instances(pred_labels: InstanceLabeling, gt_labels: InstanceLabeling,
                    min_overlap: int = 1) -> MatchingResult:
    """Greedy one-to-one matching by descending overlap, ties by (gt, pred) id."""
    if min_overlap < 1:
        raise UsageError("min_overlap must be >= 1")
    overlaps = overlap_counts(pred_labels, gt_labels)
    candidates = sorted(((-v, g, pr) for (pr, g), v in overlaps.items() if v >= min_overlap))
    used_pred, used_gt = set(), set()
    pairs = []
    for neg, g, pr in candidates:
        if pr in used_pred or g in used_gt:
            continue
        used_pred.add(pr)
        used_gt.add(g)
        pairs.append((pr, g, -neg))
    return MatchingResult(
        pairs=pairs,
        unmatched_pred=[i for i in range(1, pred_labels.n_instances + 1) if i not in used_pred],
        unmatched_gt=[i for i in range(1, gt_labels.n_instances + 1) if i not in used_gt],
    )


@dataclass
class MetricsReport:
    dsc: float
    sensitivity: float
    precision: float
    surface_dsc: float
    f1: float
    instance_sensitivity: float
    instance_precision: float
    tp: int
    fp: int
    fn: int
    n_pred: int
    n_gt: int

    def to_dict(self) -> dict:
        return asdict(self)


FLOAT_FIELDS = ("dsc", "sensitivity", "precision", "surface_dsc",
                "f1", "instance_sensitivity", "instance_precision")
COUNT_FIELDS = ("tp", "fp", "fn", "n_pred", "n_gt")


def detection_scores(pred_labels: InstanceLabeling, gt_labels: InstanceLabeling,
                     matching: str = "greedy", min_overlap: int = 1) -> dict:
    """Instance-level tp/fp/fn, sensitivity, precision and F1.

    ``greedy`` pairs instances one-to-one; F1 is ``2tp / (2tp + fp + fn)``.
    ``overlap`` marks each ground-truth and each predicted instance as detected
    when it overlaps any instance on the other side, so one prediction can
    detect several lesions; F1 is then the harmonic mean of the two rates.
    """
    n_pred, n_gt = pred_labels.n_instances, gt_labels.n_instances
    if matching == "greedy":
        result = match_instances(pred_labels, gt_labels, min_overlap)
        tp = len(result.pairs)
        fp, fn = n_pred - tp, n_gt - tp
        hit_gt = hit_pred = tp
        f1 = _ratio(2 * tp, 2 * tp + fp + fn)
    elif matching == "overlap":
        if min_overlap < 1:
            raise UsageError("min_overlap must be >= 1")
        overlaps = overlap_counts(pred_labels, gt_labels)
        hit_pred = len({pr for (pr, _), v in overlaps.items() if v >= min_overlap})
        hit_gt = len({g for (_, g), v in overlaps.items() if v >= min_overlap})
        tp, fp, fn = hit_gt, n_pred - hit_pred, n_gt - hit_gt
        # harmonic mean of hit_gt/n_gt and hit_pred/n_pred from integers
        num = 2 * hit_gt * hit_pred
        den = hit_gt * n_pred + hit_pred * n_gt
        if n_pred == 0 or n_gt == 0:
            f1 = 1.0 if n_pred == n_gt else 0.0
        else:
            f1 = num / den if den else 0.0
    else:
        raise UsageError(f"matching must be one of {MATCHING_MODES}, got {matching!r}")
    return dict(tp=tp, fp=fp, fn=fn, n_pred=n_pred, n_gt=n_gt, f1=f1,
                instance_sensitivity=hit_gt / n_gt if n_gt else float(n_pred == 0),
                instance_precision=hit_pred / n_pred if n_pred else float(n_gt == 0))


def full_report(pred_prob, gt, threshold: float = 0.5, conn=DEFAULT_CONNECTIVITY,
                tol: float = 1.0, matching: str = "greedy",
                min_overlap: int = 1) -> MetricsReport:
    """Binarize at ``threshold`` (inclusive), label both masks, compute every metric."""
    pred_prob = as_probability(pred_prob, "pred")
    gt = as_mask(gt, "gt")
    check_same_dims(pred_prob, gt)
    pred = pred_prob >= threshold
    dsc, sens, prec = volumetric_metrics(pred, gt)
    sdsc = surface_dice(pred, gt, tol)
    det = detection_scores(label_components(pred, conn), label_components(gt, conn),
                           matching, min_overlap)
    return MetricsReport(dsc=dsc, sensitivity=sens, precision=prec, surface_dsc=sdsc, **det)


def mean_report(reports) -> MetricsReport:
    """Average the rates over samples and sum the counts."""
    reports = list(reports)
    if not reports:
        raise UsageError("no reports to average")
    values = {}
    for f in fields(MetricsReport):
        column = [getattr(r, f.name) for r in reports]
        if f.name in COUNT_FIELDS:
            values[f.name] = int(sum(column))
        else:
            total = 0.0
            for v in column:
                total += v
            values[f.name] = total / len(column)
    return MetricsReport(**values)
