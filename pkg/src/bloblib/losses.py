"""Soft Dice / Tversky losses with closed-form gradients and the blob transform.

Every base loss is ``1 - coefficient`` so lower is better. A base loss over a
domain only depends on three sums (true-positive mass, false-positive mass and
ground-truth size), which is what lets the per-instance blob terms be computed
from one labelled pass over the volume instead of N materialised masks.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .components import DEFAULT_CONNECTIVITY, label_components
from .errors import DimsMismatchError, NumericalError, UsageError
from .volume import InstanceLabeling, as_mask, as_probability, check_same_dims

BASE_KINDS = ("soft-dice", "tversky")


@dataclass(frozen=True)
class BaseLoss:
    kind: str = "soft-dice"
    tversky_alpha: float = 0.5
    tversky_beta: float = 0.5
    epsilon: float = 1e-5

    def __post_init__(self):
        kind = {"dice": "soft-dice"}.get(self.kind, self.kind)
        if kind not in BASE_KINDS:
            raise UsageError(f"unknown base loss {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if not self.epsilon > 0:
            raise UsageError("epsilon must be > 0")
        if self.tversky_alpha < 0 or self.tversky_beta < 0:
            raise UsageError("tversky weights must be >= 0")


@dataclass(frozen=True)
class BlobLossConfig:
    alpha: float = 2.0
    beta: float = 1.0
    base: BaseLoss = field(default_factory=BaseLoss)
    masking_enabled: bool = True

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise UsageError("alpha and beta must be >= 0")

    def scaled(self, factor: float) -> "BlobLossConfig":
        return replace(self, alpha=self.alpha * factor, beta=self.beta * factor)


DICE = BlobLossConfig(alpha=1.0, beta=0.0)
BLOB_DICE = BlobLossConfig(alpha=2.0, beta=1.0)


@dataclass(frozen=True)
class LossResult:
    value: float
    grad: np.ndarray
    global_term: Optional[float] = None
    blob_term: Optional[float] = None
    n_instances: Optional[int] = None


def _terms(base: BaseLoss, tp, fp, gsize):
    """Loss value and d(loss)/dp at a ground-truth voxel and a background voxel.

    Inputs are the sums over the domain; scalars or equal-length arrays.
    """
    eps = base.epsilon
    num = 2.0 * tp + eps
    if base.kind == "soft-dice":
        den = gsize + tp + fp + eps
        dden_fg = 1.0
        dden_bg = 1.0
    else:
        a2 = 2.0 * base.tversky_alpha
        b2 = 2.0 * base.tversky_beta
        den = 2.0 * tp + a2 * fp + b2 * (gsize - tp) + eps
        dden_fg = 2.0 - b2
        dden_bg = a2
    den2 = den * den
    value = 1.0 - num / den
    d_fg = -(2.0 * den - num * dden_fg) / den2
    d_bg = num * dden_bg / den2
    return value, d_fg, d_bg


def _checked(result: LossResult) -> LossResult:
    if not (np.isfinite(result.value) and np.all(np.isfinite(result.grad))):
        raise NumericalError("loss or gradient is not finite")
    return result


def _ordered_sum(values) -> float:
    total = 0.0
    for v in values:
        total += float(v)
    return total


def base_loss(p, g, base: BaseLoss = BaseLoss(), domain=None) -> LossResult:
    """Base loss of ``p`` against ``g`` restricted to ``domain`` (default: everything)."""
    p = as_probability(p)
    g = as_mask(g, "g")
    domain = np.ones(p.shape, dtype=bool) if domain is None else as_mask(domain, "domain")
    check_same_dims(p, g, domain)
    # 0 = outside domain, 1 = domain background, 2 = domain foreground
    code = (domain.astype(np.intp) * (1 + g.astype(np.intp))).ravel()
    psum = np.bincount(code, weights=p.ravel(), minlength=3)
    count = np.bincount(code, minlength=3)
    value, d_fg, d_bg = _terms(base, psum[2], psum[1], float(count[2]))
    table = np.array([0.0, d_bg, d_fg])
    grad = table[code].reshape(p.shape)
    return _checked(LossResult(float(value), grad))


def instance_domain_mask(labels: InstanceLabeling, n: int) -> np.ndarray:
    """Whole volume minus the voxels of every instance other than ``n``."""
    if not 1 <= n <= labels.n_instances:
        raise UsageError(f"instance id {n} outside 1..{labels.n_instances}")
    return (labels.labels == 0) | (labels.labels == n)


def blob_table(base: BaseLoss, psum, sizes, masking_enabled: bool = True):
    """Blob-term value and per-label gradient lookup from per-label sums.

    ``psum[k]`` is the prediction mass and ``sizes[k]`` the voxel count of
    label ``k`` (0 = background). ``table[k]`` is d(blob term)/dp at a voxel
    carrying label ``k``.
    """
    n = len(psum) - 1
    tp = np.asarray(psum[1:], dtype=np.float64)
    if masking_enabled:
        fp = np.full(n, psum[0])
    else:
        # other instances count as background when the domain is not masked
        fp = np.array([_ordered_sum(psum[k] for k in range(n + 1) if k != i)
                       for i in range(1, n + 1)])
    values, d_fg, d_bg = _terms(base, tp, fp, np.asarray(sizes[1:], dtype=np.float64))
    value = _ordered_sum(values) / n
    table = np.empty(n + 1)
    table[0] = _ordered_sum(d_bg) / n
    if masking_enabled:
        table[1:] = d_fg / n
    else:
        for i in range(n):
            table[i + 1] = (d_fg[i] + _ordered_sum(d_bg[k] for k in range(n) if k != i)) / n
    return value, table


def blob_term(p, labels: InstanceLabeling, base: BaseLoss = BaseLoss(),
              masking_enabled: bool = True) -> LossResult:
    """Mean of the per-instance base losses, each on its own domain."""
    p = as_probability(p)
    check_same_dims(p, labels.labels)
    n = labels.n_instances
    if n == 0:
        raise UsageError("blob term is undefined for an empty ground truth")
    code = labels.labels.ravel().astype(np.intp)
    psum = np.bincount(code, weights=p.ravel(), minlength=n + 1)
    sizes = np.bincount(code, minlength=n + 1)
    value, table = blob_table(base, psum, sizes, masking_enabled)
    grad = table[code].reshape(p.shape)
    return _checked(LossResult(float(value), grad, n_instances=n))


def _check_labels(g, labels: InstanceLabeling):
    check_same_dims(g, labels.labels)
    if not np.array_equal(labels.foreground, g):
        raise UsageError("instance labels do not cover exactly the ground-truth foreground")


def blob_loss(p, g, labels: Optional[InstanceLabeling] = None,
              cfg: BlobLossConfig = BlobLossConfig(),
              conn=DEFAULT_CONNECTIVITY) -> LossResult:
    """``alpha * global + beta * blob``; labels are derived from ``g`` if omitted."""
    p = as_probability(p)
    g = as_mask(g, "g")
    check_same_dims(p, g)
    if labels is None:
        labels = label_components(g, conn)
    _check_labels(g, labels)
    glob = base_loss(p, g, cfg.base)
    if labels.n_instances:
        blob = blob_term(p, labels, cfg.base, cfg.masking_enabled)
        blob_value, blob_grad = blob.value, blob.grad
    else:
        blob_value, blob_grad = 0.0, np.zeros_like(p)
    value = cfg.alpha * glob.value + cfg.beta * blob_value
    grad = cfg.alpha * glob.grad + cfg.beta * blob_grad
    return _checked(LossResult(float(value), grad, global_term=glob.value,
                               blob_term=blob_value, n_instances=labels.n_instances))


@dataclass(frozen=True)
class OneHotSegmentation:
    """Foreground channels ``(C, nz, ny, nx)`` and one labeling per channel."""

    masks: np.ndarray
    labelings: tuple

    def __post_init__(self):
        masks = np.asarray(self.masks, dtype=bool)
        if masks.ndim != 4 or masks.shape[0] < 1:
            raise UsageError("masks must have shape (C, nz, ny, nx) with C >= 1")
        if np.any(masks.sum(axis=0) > 1):
            raise UsageError("one-hot channels overlap")
        if len(self.labelings) != masks.shape[0]:
            raise DimsMismatchError(
                f"{len(self.labelings)} labelings for {masks.shape[0]} channels")
        for mask, lab in zip(masks, self.labelings):
            _check_labels(mask, lab)
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "labelings", tuple(self.labelings))

    @classmethod
    def from_masks(cls, masks, conn=DEFAULT_CONNECTIVITY) -> "OneHotSegmentation":
        masks = np.asarray(masks, dtype=bool)
        return cls(masks, tuple(label_components(m, conn) for m in masks))

    @classmethod
    def from_class_map(cls, classes, n_classes: int, conn=DEFAULT_CONNECTIVITY):
        """Build from an integer map where 0 is background and 1..C are classes."""
        classes = np.asarray(classes)
        masks = np.stack([classes == c for c in range(1, n_classes + 1)])
        return cls.from_masks(masks, conn)

    @property
    def n_classes(self) -> int:
        return self.masks.shape[0]


def multiclass_blob_loss(p, g: OneHotSegmentation,
                         cfg: BlobLossConfig = BlobLossConfig()) -> LossResult:
    """Class-averaged global and blob terms; classes without instances skip the blob average."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 4 or p.shape[0] != g.n_classes:
        raise DimsMismatchError(
            f"prediction stack {p.shape} does not match {g.n_classes} classes")
    check_same_dims(p[0], g.masks[0])
    n_classes = g.n_classes
    glob_values, glob_grads, blob_values, blob_grads = [], [], [], []
    for c in range(n_classes):
        res = base_loss(p[c], g.masks[c], cfg.base)
        glob_values.append(res.value)
        glob_grads.append(res.grad)
        if g.labelings[c].n_instances:
            res = blob_term(p[c], g.labelings[c], cfg.base, cfg.masking_enabled)
            blob_values.append(res.value)
            blob_grads.append(res.grad)
        else:
            blob_values.append(None)
            blob_grads.append(None)
    glob_value = _ordered_sum(glob_values) / n_classes
    active = [v for v in blob_values if v is not None]
    blob_value = _ordered_sum(active) / len(active) if active else 0.0
    grad = np.empty_like(p)
    for c in range(n_classes):
        grad[c] = cfg.alpha * (glob_grads[c] / n_classes)
        if blob_grads[c] is not None:
            grad[c] += cfg.beta * (blob_grads[c] / len(active))
    value = cfg.alpha * glob_value + cfg.beta * blob_value
    n_total = sum(lab.n_instances for lab in g.labelings)
    return _checked(LossResult(float(value), grad, global_term=glob_value,
                               blob_term=blob_value, n_instances=n_total))
