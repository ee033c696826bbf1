"""
Quanvolutional pocket classification.

Three pipelines classify multi-channel voxel grids into
{nucleotide, heme, other}:

    quanv_mlp: frozen 4-qubit quanvolution filter + MLP head
    random_cnn_mlp: frozen seeded Conv3D (C -> 2C, k=4, s=4) + MLP head
    trainable_cnn_mlp: the same Conv3D, trained together with the head

The quanvolution filter reads 2x4x4x4 patches. A patch is reduced to four
RY encoding angles by a frozen row-normalized random projection squashed
as pi * tanh(.), because the reduction from 128 values to 4 angles is not
fixed anywhere else. The circuit is: random prefix, RY encoding, RY
entangler with a CNOT ring, then four Pauli-Z expectations.
"""

import hashlib
import logging
import struct
from dataclasses import dataclass, field
from math import pi
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ContractViolation, DataError
from .metrics import classification_metrics
from .nn import AdamState, Conv3DLayer, DenseLayer, Flatten, Sequential, adam_step, cross_entropy
from .qsim import chain_circuits, cnot_ring, random_circuit, rotation_layer, run_circuit_batch

logger = logging.getLogger(__name__)

CLASS_NAMES = ('nucleotide', 'heme', 'other')
VARIANTS = ('quanv_mlp', 'random_cnn_mlp', 'trainable_cnn_mlp')
N_FILTER_QUBITS = 4
HEAD_HIDDEN = 256

VOXB_MAGIC = b'VOXB'
VOXB_VERSION = 1
_VOXB_HEADER = struct.Struct('<4sIIII')

PROJECTION_DISCLOSURE = (
    'patch-to-angle reduction: frozen seeded random linear projection (rows normalized to unit L2), '
    'angles = pi * tanh(P . patch); not a learned or published mapping'
)


@dataclass
class VoxelGrid:
    data: np.ndarray
    label: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 4 or len(set(self.data.shape[1:])) != 1:
            raise ContractViolation(f'voxel grid must be (channels, dim, dim, dim), got {self.data.shape}')
        if not np.all(np.isfinite(self.data)):
            raise ContractViolation('voxel grid holds non-finite values')
        if not 0 <= int(self.label) < len(CLASS_NAMES):
            raise ContractViolation(f'label {self.label} out of range')
        self.label = int(self.label)

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def dim(self):
        return self.data.shape[1]

    def digest(self):
        return hashlib.sha256(np.ascontiguousarray(self.data, dtype='<f8').tobytes()).hexdigest()


def _check_patch_contract(channels, dim, patch, stride, channel_group):
    if channels % channel_group:
        raise ContractViolation(f'{channels} channels are not divisible into groups of {channel_group}')
    if dim % stride or dim < patch:
        raise ContractViolation(f'grid dim {dim} incompatible with patch {patch} / stride {stride}')


def patch_matrix(grid, patch=4, stride=4, channel_group=2):
    """(n_patches, channel_group * patch**3) in (pair, z, y, x) order, plus the grid of positions."""
    _check_patch_contract(grid.channels, grid.dim, patch, stride, channel_group)
    groups = grid.data.reshape(grid.channels // channel_group, channel_group, *grid.data.shape[1:])
    windows = sliding_window_view(groups, (patch,) * 3, axis=(2, 3, 4))[:, :, ::stride, ::stride, ::stride]
    layout = windows.shape[:1] + windows.shape[2:5]
    rows = windows.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(int(np.prod(layout)), -1)
    return rows, layout


def extract_patches(grid, patch=4, stride=4, channel_group=2):
    """List of ((pair, z, y, x), block of shape (channel_group, patch, patch, patch))."""
    rows, layout = patch_matrix(grid, patch, stride, channel_group)
    positions = np.ndindex(*layout)
    return [(pos, row.reshape(channel_group, patch, patch, patch)) for pos, row in zip(positions, rows)]


@dataclass
class QuanvFilter:
    """
    Frozen 4-qubit quanvolution filter; every part is drawn from `seed`.
    """

    seed: int = 0
    depth: int = 2
    patch: int = 4
    stride: int = 4
    channel_group: int = 2
    workers: int = 1
    circuit: object = field(init=False, repr=False)
    angles: np.ndarray = field(init=False, repr=False)
    projection: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        prefix = random_circuit(self.seed, N_FILTER_QUBITS, self.depth)
        encoder = rotation_layer(N_FILTER_QUBITS)
        entangler = chain_circuits([rotation_layer(N_FILTER_QUBITS), cnot_ring(N_FILTER_QUBITS)])
        self.circuit = chain_circuits([prefix, encoder, entangler])
        rng = np.random.default_rng([self.seed, 1])
        weights = rng.uniform(0.0, 2.0 * pi, size=N_FILTER_QUBITS)
        self._prefix = np.asarray(prefix.fixed_params)
        self._weights = weights
        projection = rng.normal(size=(N_FILTER_QUBITS, self.channel_group * self.patch ** 3))
        self.projection = projection / np.linalg.norm(projection, axis=1, keepdims=True)

    @property
    def patch_size(self):
        return self.channel_group * self.patch ** 3

    def encode(self, rows):
        return pi * np.tanh(rows @ self.projection.T)

    def __call__(self, rows):
        """(n, patch_size) patches -> (n, 4) Z expectations."""
        angles = self.encode(rows)
        params = np.concatenate([
            np.broadcast_to(self._prefix, (rows.shape[0], self._prefix.size)),
            angles,
            np.broadcast_to(self._weights, (rows.shape[0], N_FILTER_QUBITS)),
        ], axis=1)
        return run_circuit_batch(self.circuit, params, np.zeros((rows.shape[0], N_FILTER_QUBITS)), self.workers)


def quanvolve(grid, qfilter):
    rows, layout = patch_matrix(grid, qfilter.patch, qfilter.stride, qfilter.channel_group)
    return qfilter(rows).reshape(*layout, N_FILTER_QUBITS)


def random_cnn(channels, seed, trainable=False):
    return Conv3DLayer(channels, 2 * channels, 4, 4, trainable=trainable, rng=np.random.default_rng(seed))


def random_cnn_features(grid, seed):
    return random_cnn(grid.channels, seed).forward(grid.data)


def feature_count(channels, dim, patch=4, stride=4):
    per_axis = (dim - patch) // stride + 1
    return (channels // 2) * per_axis ** 3 * N_FILTER_QUBITS


class FeatureCache:
    """Frozen-extractor features keyed by (variant, extractor seed, grid sha256)."""

    def __init__(self):
        self._store = {}
        self.hits = 0

    def get(self, variant, seed, grid, compute):
        key = (variant, seed, grid.digest())
        if key in self._store:
            self.hits += 1
        else:
            self._store[key] = compute(grid)
        return self._store[key]

    def __len__(self):
        return len(self._store)


def stratified_folds(labels, folds=2):
    """
    Fold index per sample. Classes are dealt round-robin in label order and
    the fold pointer carries over from one class to the next.
    """
    labels = np.asarray(labels, dtype=int)
    assignment = np.zeros(labels.shape[0], dtype=int)
    pointer = 0
    for label in range(len(CLASS_NAMES)):
        members = np.flatnonzero(labels == label)
        if members.size < folds:
            raise DataError(
                f'class {CLASS_NAMES[label]!r} has {members.size} sample(s), needs at least {folds}',
                {'class': CLASS_NAMES[label], 'count': int(members.size)},
            )
        for index in members:
            assignment[index] = pointer % folds
            pointer += 1
    return assignment


@dataclass
class PipelineSpec:
    variant: str = 'quanv_mlp'
    extractor_seed: int = 0
    filter_depth: int = 2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractViolation(f'unknown pipeline variant {self.variant!r}; expected one of {VARIANTS}')

    @property
    def frozen(self):
        return self.variant != 'trainable_cnn_mlp'


def _head(n_features, rng):
    return [
        DenseLayer(n_features, HEAD_HIDDEN, 'leaky_relu', rng=rng),
        DenseLayer(HEAD_HIDDEN, len(CLASS_NAMES), 'none', rng=rng),
    ]


def _extractor(spec, workers):
    if spec.variant == 'quanv_mlp':
        qfilter = QuanvFilter(seed=spec.extractor_seed, depth=spec.filter_depth, workers=workers)
        return lambda grid: quanvolve(grid, qfilter).ravel()
    return lambda grid: random_cnn_features(grid, spec.extractor_seed).ravel()


def _evaluate(model, inputs, labels):
    return classification_metrics(model.forward(inputs), labels)


def train_pipeline(spec, dataset, folds=2, epochs=50, batch=32, lr=1e-5, seed=0,
                   workers=1, cache=None, on_epoch=None):
    """
    Stratified k-fold training of one pipeline variant.

    Args:
        spec (PipelineSpec): variant and extractor seeds
        dataset: VoxelDataset (anything with `.samples` of VoxelGrid)
        on_epoch: optional callback receiving each record as it is produced

    Returns:
        list[dict]: one record per (fold, epoch) with train/val loss and accuracy
    """
    samples = list(dataset.samples)
    if not samples:
        raise DataError('empty voxel dataset')
    labels = np.array([sample.label for sample in samples], dtype=int)
    assignment = stratified_folds(labels, folds)
    channels = samples[0].channels

    if spec.frozen:
        cache = cache if cache is not None else FeatureCache()
        extract = _extractor(spec, workers)
        inputs = np.stack([cache.get(spec.variant, spec.extractor_seed, s, extract) for s in samples])
    else:
        inputs = np.stack([s.data for s in samples])
    logger.info(f'{spec.variant}: {len(samples)} samples, input shape {inputs.shape[1:]}, {folds} folds')

    records = []
    for fold in range(folds):
        rng = np.random.default_rng([seed, fold])
        if spec.frozen:
            model = Sequential(_head(inputs.shape[1], rng))
        else:
            conv = random_cnn(channels, spec.extractor_seed, trainable=True)
            n_features = conv.out_channels * int(np.prod(conv.output_shape(inputs.shape[2:])))
            model = Sequential([conv, Flatten()] + _head(n_features, rng))
        params = model.parameters()
        adam = AdamState.for_params(params)
        train_idx = np.flatnonzero(assignment != fold)
        val_idx = np.flatnonzero(assignment == fold)

        for epoch in range(1, epochs + 1):
            order = np.random.default_rng([seed, fold, epoch]).permutation(train_idx)
            for start in range(0, order.size, batch):
                chunk = order[start:start + batch]
                logits = model.forward(inputs[chunk])
                _, grad = cross_entropy(logits, labels[chunk])
                adam_step(adam, params, model.backward(grad), lr)
            train = _evaluate(model, inputs[train_idx], labels[train_idx])
            val = _evaluate(model, inputs[val_idx], labels[val_idx]) if val_idx.size else train
            record = {
                'fold': fold,
                'epoch': epoch,
                'train_loss': train['cross_entropy'],
                'val_loss': val['cross_entropy'],
                'train_acc': train['accuracy'],
                'val_acc': val['accuracy'],
            }
            records.append(record)
            logger.info(
                f"{spec.variant} fold {fold} epoch {epoch}: train loss {record['train_loss']:.4f} "
                f"acc {record['train_acc']:.3f}, val loss {record['val_loss']:.4f} acc {record['val_acc']:.3f}"
            )
            if on_epoch is not None:
                on_epoch(record)
    return records


def pipeline_report(spec, channels, dim):
    report = {
        'variant': spec.variant,
        'feature_count': feature_count(channels, dim),
        'trainable_extractor': not spec.frozen,
    }
    if spec.variant == 'quanv_mlp':
        report['projection'] = PROJECTION_DISCLOSURE
        report['filter_depth'] = spec.filter_depth
    return report


def write_voxb(path, samples):
    """Write VoxelGrids in the VOXB binary format (little-endian)."""
    samples = list(samples)
    channels, dim = (samples[0].channels, samples[0].dim) if samples else (0, 0)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'wb') as handle:
            handle.write(_VOXB_HEADER.pack(VOXB_MAGIC, VOXB_VERSION, len(samples), channels, dim))
            for sample in samples:
                if (sample.channels, sample.dim) != (channels, dim):
                    raise ContractViolation('all VOXB samples must share channels and dim')
                handle.write(struct.pack('<B', sample.label))
                handle.write(np.ascontiguousarray(sample.data, dtype='<f4').tobytes())
    except OSError as exc:
        raise DataError(f'cannot write {path}: {exc.strerror}', {'path': str(path)}) from exc
    return path


def read_voxb(path):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f'cannot read {path}: {exc.strerror}', {'path': str(path)}) from exc
    if len(raw) < _VOXB_HEADER.size:
        raise DataError(f'{path}: truncated VOXB header')
    magic, version, n_samples, channels, dim = _VOXB_HEADER.unpack_from(raw)
    if magic != VOXB_MAGIC or version != VOXB_VERSION:
        raise DataError(f'{path}: not a VOXB v{VOXB_VERSION} file')
    values = channels * dim ** 3
    record = 1 + 4 * values
    if len(raw) != _VOXB_HEADER.size + n_samples * record:
        raise DataError(f'{path}: expected {n_samples} samples of {record} bytes')
    samples = []
    offset = _VOXB_HEADER.size
    for _ in range(n_samples):
        label = raw[offset]
        data = np.frombuffer(raw, dtype='<f4', count=values, offset=offset + 1)
        try:
            samples.append(VoxelGrid(data.reshape(channels, dim, dim, dim).astype(float), label))
        except ContractViolation as exc:
            raise DataError(f'{path}: {exc}') from exc
        offset += record
    return samples
