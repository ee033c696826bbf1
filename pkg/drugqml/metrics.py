"""
Evaluation metrics: Frechet distance between Gaussian fits of feature
batches, molecule descriptors, and classification metrics.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .exceptions import ContractViolation, NumericalError
from .molgraph import BondKind, count_rings, is_valid
from .nn import log_softmax

logger = logging.getLogger(__name__)

DESCRIPTOR_ATOMS = ('C', 'N', 'O', 'F')
DESCRIPTOR_BONDS = (BondKind.SINGLE, BondKind.DOUBLE, BondKind.TRIPLE, BondKind.AROMATIC)
DESCRIPTOR_SIZE = len(DESCRIPTOR_ATOMS) + len(DESCRIPTOR_BONDS) + 2


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def dim(self):
        return self.mean.shape[0]


def fit_gaussian(features):
    """Sample mean and unbiased (n - 1) covariance, symmetrized."""
    rows = [np.asarray(row, dtype=float).ravel() for row in features]
    if len(rows) < 2:
        raise ContractViolation(f'need at least 2 feature vectors, got {len(rows)}')
    dims = {row.shape[0] for row in rows}
    if len(dims) != 1:
        raise ContractViolation(f'feature vectors have mixed dimensions {sorted(dims)}')
    data = np.stack(rows)
    cov = np.atleast_2d(np.cov(data, rowvar=False, ddof=1))
    return GaussianStats(data.mean(axis=0), (cov + cov.T) / 2.0)


def _sqrt_psd(matrix):
    values, vectors = linalg.eigh((matrix + matrix.T) / 2.0)
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T


def frechet_distance(a, b):
    """
    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    The cross term is Tr((S_a^(1/2) S_b S_a^(1/2))^(1/2)), computed with
    symmetric eigendecompositions and eigenvalues clamped at zero.
    """
    if a.dim != b.dim:
        raise ContractViolation(f'dimension mismatch: {a.dim} vs {b.dim}')
    for stats in (a, b):
        if not (np.all(np.isfinite(stats.mean)) and np.all(np.isfinite(stats.cov))):
            raise NumericalError('non-finite Gaussian statistics in Frechet distance')
    root_a = _sqrt_psd(a.cov)
    cross = root_a @ b.cov @ root_a
    cross_values = np.clip(linalg.eigvalsh((cross + cross.T) / 2.0), 0.0, None)
    diff = a.mean - b.mean
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.sum(np.sqrt(cross_values)))
    return max(value, 0.0)


def molecule_descriptor(mol):
    """
    Atom counts (C, N, O, F), bond counts (single, double, triple, aromatic),
    ring count and a validity flag.
    """
    present = mol.present()
    if not present:
        return np.zeros(DESCRIPTOR_SIZE)
    symbols = [mol.atoms[i] for i in present]
    kinds = [kind for *_, kind in mol.edges()]
    descriptor = [symbols.count(symbol) for symbol in DESCRIPTOR_ATOMS]
    descriptor += [kinds.count(kind) for kind in DESCRIPTOR_BONDS]
    descriptor += [max(count_rings(mol), 0), 1 if is_valid(mol) else 0]
    return np.asarray(descriptor, dtype=float)


def batch_descriptors(mols):
    return [molecule_descriptor(mol) for mol in mols]


def descriptor_fd(real, fake):
    """Frechet distance between descriptor Gaussians of two molecule batches."""
    return frechet_distance(fit_gaussian(batch_descriptors(real)), fit_gaussian(batch_descriptors(fake)))


def classification_metrics(logits, labels):
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    labels = np.asarray(labels, dtype=int)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ContractViolation(f'expected {n} labels, got shape {labels.shape}')
    if np.any(labels < 0) or np.any(labels >= k):
        raise ContractViolation(f'labels must lie in [0, {k})')
    log_probs = log_softmax(logits, axis=1)
    loss = -float(np.mean(log_probs[np.arange(n), labels]))
    accuracy = float(np.mean(np.argmax(logits, axis=1) == labels))
    return {'cross_entropy': loss, 'accuracy': accuracy}
