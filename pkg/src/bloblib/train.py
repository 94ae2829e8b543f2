"""Per-voxel logistic model trained by full-batch gradient descent.

The model stands in for a segmentation network: four box-filter features per
voxel feed a logistic unit, and the loss gradient with respect to the
prediction map is chained through ``p * (1 - p)`` into the parameters.
"""
from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import expit

from . import _accel
from ._accel import njit
from .components import DEFAULT_CONNECTIVITY, Connectivity, label_components
from .errors import FormatError, NumericalError, UsageError
from .losses import BlobLossConfig, _ordered_sum, _terms, blob_loss, blob_table
from .metrics import MATCHING_MODES, MetricsReport, full_report, mean_report
from .synth import SynthSpec, generate, make_rng
from .volume import InstanceLabeling

N_FEATURES = 4
CHECKPOINT_POLICIES = ("last", "best-validation-loss")


def _box_offsets(half: int) -> np.ndarray:
    r = np.arange(-half, half + 1)
    dz, dy, dx = np.meshgrid(r, r, r, indexing="ij")
    return np.stack([dz.ravel(), dy.ravel(), dx.ravel()], axis=1).astype(np.int64)


_BOX3 = _box_offsets(1)
_BOX5 = _box_offsets(2)


@njit(cache=True)
def _featurize_numba(padded, nz, ny, nx):
    # padded by 2 with edge values; offsets run dz, dy, dx like the numpy path
    out = np.empty((4, nz, ny, nx))
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                s3 = 0.0
                for dz in range(1, 4):
                    for dy in range(1, 4):
                        for dx in range(1, 4):
                            s3 += padded[z + dz, y + dy, x + dx]
                m3 = s3 / 27
                v3 = 0.0
                for dz in range(1, 4):
                    for dy in range(1, 4):
                        for dx in range(1, 4):
                            d = padded[z + dz, y + dy, x + dx] - m3
                            v3 += d * d
                s5 = 0.0
                for dz in range(5):
                    for dy in range(5):
                        for dx in range(5):
                            s5 += padded[z + dz, y + dy, x + dx]
                out[0, z, y, x] = padded[z + 2, y + 2, x + 2]
                out[1, z, y, x] = m3
                out[2, z, y, x] = np.sqrt(v3 / 27)
                out[3, z, y, x] = s5 / 125
    return out


def _featurize_numpy(vol):
    shape = vol.shape
    padded = np.pad(vol, 2, mode="edge")

    def shifted(dz, dy, dx):
        return padded[2 + dz:2 + dz + shape[0], 2 + dy:2 + dy + shape[1],
                      2 + dx:2 + dx + shape[2]]

    s3 = np.zeros(shape)
    for d in _BOX3:
        s3 += shifted(*d)
    m3 = s3 / len(_BOX3)
    v3 = np.zeros(shape)
    for d in _BOX3:
        diff = shifted(*d) - m3
        v3 += diff * diff
    s5 = np.zeros(shape)
    for d in _BOX5:
        s5 += shifted(*d)
    return np.stack([vol, m3, np.sqrt(v3 / len(_BOX3)), s5 / len(_BOX5)])


def featurize(intensity) -> np.ndarray:
    """Feature maps ``(4, nz, ny, nx)``: value, 3^3 mean, 3^3 std, 5^3 mean.

    ``features[:, z, y, x]`` is the feature vector of one voxel. Box filters
    clamp coordinates at the volume border.
    """
    vol = np.ascontiguousarray(intensity, dtype=np.float64)
    if vol.ndim != 3:
        raise UsageError(f"expected a 3D volume, got shape {vol.shape}")
    if _accel.use_numba():
        return _featurize_numba(np.pad(vol, 2, mode="edge"), *vol.shape)
    return _featurize_numpy(vol)


@dataclass(frozen=True)
class VoxelModel:
    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).ravel()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    @classmethod
    def zeros(cls, n_features: int = N_FEATURES) -> "VoxelModel":
        return cls(np.zeros(n_features), 0.0)

    @property
    def n_features(self) -> int:
        return self.weights.size

    def params(self) -> np.ndarray:
        return np.append(self.weights, self.bias)

    @classmethod
    def from_params(cls, theta) -> "VoxelModel":
        theta = np.asarray(theta, dtype=np.float64)
        return cls(theta[:-1], theta[-1])

    def __eq__(self, other):
        if not isinstance(other, VoxelModel):
            return NotImplemented
        return np.array_equal(self.params(), other.params())

    __hash__ = None


def _check_width(model: "VoxelModel", features):
    if features.shape[0] != model.n_features:
        raise UsageError(
            f"feature width {features.shape[0]} != model width {model.n_features}")


def _logits(model: VoxelModel, features) -> np.ndarray:
    features = np.asarray(features)
    _check_width(model, features)
    # fixed summation order; avoids BLAS thread-count dependence
    z = np.full(features.shape[1:], model.bias)
    for k in range(model.n_features):
        z += features[k] * model.weights[k]
    return z


def forward(model: VoxelModel, features) -> np.ndarray:
    return expit(_logits(model, features))


@dataclass(frozen=True)
class Sample:
    intensity: np.ndarray
    gt: np.ndarray
    labels: InstanceLabeling
    features: np.ndarray

    @property
    def code(self) -> np.ndarray:
        return self.labels.labels.ravel().astype(np.int64)

    @classmethod
    def build(cls, intensity, gt, conn=DEFAULT_CONNECTIVITY) -> "Sample":
        gt = np.asarray(gt, dtype=bool)
        return cls(np.asarray(intensity, dtype=np.float64), gt,
                   label_components(gt, conn), featurize(intensity))


@njit(cache=True)
def _forward_sums(feats, weights, bias, code, n_labels):
    n = code.shape[0]
    p = np.empty(n)
    psum = np.zeros(n_labels)
    sizes = np.zeros(n_labels, dtype=np.int64)
    for i in range(n):
        z = bias
        for k in range(weights.shape[0]):
            z += feats[k, i] * weights[k]
        if z >= 0:
            pi = 1.0 / (1.0 + np.exp(-z))
        else:
            e = np.exp(z)
            pi = e / (1.0 + e)
        p[i] = pi
        psum[code[i]] += pi
        sizes[code[i]] += 1
    return p, psum, sizes


@njit(cache=True)
def _backward(feats, p, code, table):
    nf = feats.shape[0]
    grad = np.zeros(nf + 1)
    for i in range(code.shape[0]):
        dz = table[code[i]] * p[i] * (1.0 - p[i])
        for k in range(nf):
            grad[k] += feats[k, i] * dz
        grad[nf] += dz
    return grad


def _loss_and_grad_fused(model: VoxelModel, sample: "Sample", cfg: BlobLossConfig):
    code = sample.code
    n = sample.labels.n_instances
    feats = sample.features.reshape(model.n_features, -1)
    p, psum, sizes = _forward_sums(feats, model.weights, model.bias, code, n + 1)
    glob_value, d_fg, d_bg = _terms(cfg.base, _ordered_sum(psum[1:]), psum[0],
                                    float(sizes[1:].sum()))
    table = np.full(n + 1, cfg.alpha * d_fg)
    table[0] = cfg.alpha * d_bg
    value = cfg.alpha * glob_value
    if n:
        blob_value, blob_tab = blob_table(cfg.base, psum, sizes, cfg.masking_enabled)
        table += cfg.beta * blob_tab
        value += cfg.beta * blob_value
    return float(value), _backward(feats, p, code, table)


def _loss_and_grad_composed(model: VoxelModel, sample: "Sample", cfg: BlobLossConfig):
    p = forward(model, sample.features)
    res = blob_loss(p, sample.gt, sample.labels, cfg)
    dz = (res.grad * p * (1.0 - p)).ravel()
    feats = sample.features.reshape(model.n_features, -1)
    grad = np.empty(model.n_features + 1)
    for k in range(model.n_features):
        grad[k] = np.sum(feats[k] * dz)
    grad[-1] = np.sum(dz)
    return res.value, grad


def loss_and_grad(model: VoxelModel, sample: "Sample", cfg: BlobLossConfig):
    """Loss value and its gradient with respect to ``model.params()``.

    The compiled path fuses the forward pass with the per-label reductions;
    the fallback composes :func:`forward` and :func:`losses.blob_loss`.
    """
    _check_width(model, sample.features)
    if _accel.use_numba():
        return _loss_and_grad_fused(model, sample, cfg)
    return _loss_and_grad_composed(model, sample, cfg)


def _step(model: VoxelModel, grad, lr: float) -> VoxelModel:
    if not np.all(np.isfinite(grad)):
        bad = np.flatnonzero(~np.isfinite(grad)).tolist()
        raise NumericalError(f"non-finite gradient in parameters {bad}")
    if lr == 0:
        return model
    theta = model.params() - lr * grad
    if not np.all(np.isfinite(theta)):
        raise NumericalError("parameter update produced non-finite values")
    return VoxelModel.from_params(theta)


def train_step(model: VoxelModel, sample: Sample, loss_cfg: BlobLossConfig,
               lr: float) -> tuple[VoxelModel, float]:
    """One full-batch gradient step on a single sample."""
    value, grad = loss_and_grad(model, sample, loss_cfg)
    return _step(model, grad, lr), value


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 300
    loss: BlobLossConfig = field(default_factory=BlobLossConfig)
    seed: int = 0
    checkpoint_policy: str = "last"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise UsageError("learning_rate must be > 0")
        if self.epochs < 1:
            raise UsageError("epochs must be >= 1")
        if self.checkpoint_policy not in CHECKPOINT_POLICIES:
            raise UsageError(f"checkpoint_policy must be one of {CHECKPOINT_POLICIES}")


@dataclass(frozen=True)
class EvalConfig:
    threshold: float = 0.5
    connectivity: Connectivity = DEFAULT_CONNECTIVITY
    tol: float = 1.0
    matching: str = "greedy"
    min_overlap: int = 1

    def __post_init__(self):
        object.__setattr__(self, "connectivity", Connectivity.parse(self.connectivity))
        if self.matching not in MATCHING_MODES:
            raise UsageError(f"matching must be one of {MATCHING_MODES}")
        if self.tol < 0 or self.min_overlap < 1:
            raise UsageError("tol must be >= 0 and min_overlap >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    validation_loss: float
    validation: Optional[MetricsReport]


def _map_ordered(fn, items):
    """``map`` over ``items`` with up to BLOBLIB_THREADS workers, results in order."""
    items = list(items)
    workers = min(_accel.max_workers(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _sum_ordered(arrays):
    total = np.zeros_like(arrays[0])
    for a in arrays:
        total = total + a
    return total


def _mean(values) -> float:
    total = 0.0
    for v in values:
        total += v
    return total / len(values)


def evaluate(model: VoxelModel, samples, eval_cfg: EvalConfig = EvalConfig()) -> MetricsReport:
    """Test-set report: per-sample ``full_report`` averaged over samples."""
    def one(s):
        return full_report(forward(model, s.features), s.gt, eval_cfg.threshold,
                           eval_cfg.connectivity, eval_cfg.tol, eval_cfg.matching,
                           eval_cfg.min_overlap)
    return mean_report(_map_ordered(one, samples))


def run_experiment(train_set, val_set, test_set, cfg: TrainConfig,
                   eval_cfg: EvalConfig = EvalConfig(), init: Optional[VoxelModel] = None,
                   validate_metrics: bool = True):
    """Train, select a checkpoint, and evaluate it on the test split.

    Gradients of all training samples are summed before each update. Epoch
    ``e`` records the mean training loss before its update and the validation
    loss of the model after it. Returns ``(model, history, test_report)``.
    """
    if not train_set or not val_set or not test_set:
        raise UsageError("train, validation and test splits must be nonempty")
    model = init if init is not None else VoxelModel.zeros()
    history: list[EpochRecord] = []
    checkpoints = []
    for epoch in range(cfg.epochs):
        results = _map_ordered(lambda s: loss_and_grad(model, s, cfg.loss), train_set)
        train_loss = _mean([v for v, _ in results])
        model = _step(model, _sum_ordered([g for _, g in results]), cfg.learning_rate)
        val_losses = _map_ordered(lambda s: loss_and_grad(model, s, cfg.loss)[0], val_set)
        report = evaluate(model, val_set, eval_cfg) if validate_metrics else None
        history.append(EpochRecord(epoch + 1, train_loss, _mean(val_losses), report))
        checkpoints.append(model)
    chosen = select_checkpoint(history, cfg.checkpoint_policy)
    model = checkpoints[chosen]
    return model, history, evaluate(model, test_set, eval_cfg)


def select_checkpoint(history, policy: str) -> int:
    """Index into ``history`` of the checkpoint chosen by ``policy``."""
    if policy == "last":
        return len(history) - 1
    if policy == "best-validation-loss":
        losses = [h.validation_loss for h in history]
        return int(np.argmin(losses))  # argmin returns the earliest tie
    raise UsageError(f"unknown checkpoint policy {policy!r}")


def sample_seed(run_seed: int, split: int, entry: int, copy: int, spec_seed: int) -> int:
    return int(make_rng(run_seed, split, entry, copy, spec_seed).integers(0, 2 ** 63))


def build_split(entries, run_seed: int, split_index: int = 0,
                conn=DEFAULT_CONNECTIVITY) -> list[Sample]:
    """Generate samples for ``[(SynthSpec, count), ...]`` keyed by the run seed."""
    jobs = []
    for e, (spec, count) in enumerate(entries):
        for c in range(count):
            jobs.append(spec.with_seed(sample_seed(run_seed, split_index, e, c, spec.seed)))

    def make(spec):
        return Sample.build(*generate(spec), conn=conn)
    return _map_ordered(make, jobs)


def acceptance_splits() -> dict:
    """8/2/4 samples of the instance-imbalanced 48^3 setup used for acceptance."""
    spec = SynthSpec(dims=(48, 48, 48), n_large=1, large_radius=6, n_small=6,
                     small_radius=(1, 2), small_contrast=0.45, noise_sigma=0.08, min_gap=3)
    return {"train": [(spec, 8)], "validation": [(spec, 2)], "test": [(spec, 4)]}


def write_model(path, model: VoxelModel) -> None:
    data = struct.pack("<I", model.n_features) + model.params().astype("<f8").tobytes()
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_model(path) -> VoxelModel:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if len(buf) < 4:
        raise FormatError(f"{path}: truncated model header")
    (n,) = struct.unpack_from("<I", buf)
    if len(buf) != 4 + 8 * (n + 1):
        raise FormatError(f"{path}: expected {4 + 8 * (n + 1)} bytes, got {len(buf)}")
    return VoxelModel.from_params(np.frombuffer(buf, dtype="<f8", offset=4))
