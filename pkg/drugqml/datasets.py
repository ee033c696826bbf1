"""
Molecule and voxel datasets: file loaders plus seeded synthetic generators.

The synthetic generators stand in for QM9 (exhaustive tiny molecules),
protein-pocket voxel grids and large-mode ligands.
"""

import itertools
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractViolation, DataError
from .molgraph import (
    BondKind,
    MoleculeGraph,
    canonical_key,
    get_alphabet,
    is_valid,
    read_jsonl,
    read_sdf,
)
from .quanv import VoxelGrid, read_voxb

logger = logging.getLogger(__name__)

MOLECULE_FORMATS = ('jsonl', 'sdf')
ENUMERATION_ATOMS = ('C', 'N', 'O', 'F')
ENUMERATION_BONDS = (BondKind.NONE, BondKind.SINGLE, BondKind.DOUBLE, BondKind.TRIPLE)
VOXEL_NOISE = 0.1


@dataclass
class MoleculeDataset:
    mode: str
    molecules: list = field(default_factory=list)

    def __post_init__(self):
        alphabet = get_alphabet(self.mode)
        for index, mol in enumerate(self.molecules):
            if mol.max_atoms != alphabet.max_atoms:
                raise ContractViolation(
                    f'molecule {index} has {mol.max_atoms} slots, {self.mode} mode needs {alphabet.max_atoms}'
                )

    @property
    def alphabet(self):
        return get_alphabet(self.mode)

    def __len__(self):
        return len(self.molecules)

    def __iter__(self):
        return iter(self.molecules)

    def keys(self):
        return {canonical_key(mol) for mol in self.molecules}


@dataclass
class VoxelDataset:
    samples: list = field(default_factory=list)

    @property
    def class_counts(self):
        return dict(sorted(Counter(sample.label for sample in self.samples).items()))

    @property
    def labels(self):
        return np.array([sample.label for sample in self.samples], dtype=int)

    def __len__(self):
        return len(self.samples)


def enumerate_small_molecules(max_atoms=3):
    """
    Every valid molecule over {C, N, O, F} with at most `max_atoms` heavy
    atoms and non-aromatic bonds, one representative per canonical key, in
    a fixed order (by atom count, then enumeration order).
    """
    if not 1 <= max_atoms <= 4:
        raise ContractViolation(f'max_atoms must lie in [1, 4], got {max_atoms}')
    alphabet = get_alphabet('small')
    found = {}
    for n in range(1, max_atoms + 1):
        pairs = list(itertools.combinations(range(n), 2))
        # Sorted atom tuples suffice: every relabeling shares a canonical key.
        for atoms in itertools.combinations_with_replacement(ENUMERATION_ATOMS, n):
            capacity = [alphabet.max_valence[symbol] for symbol in atoms]
            for kinds in itertools.product(ENUMERATION_BONDS, repeat=len(pairs)):
                if sum(1 for kind in kinds if kind) < n - 1:
                    continue
                load = [0] * n
                for (i, j), kind in zip(pairs, kinds):
                    load[i] += int(kind)
                    load[j] += int(kind)
                if any(used > cap for used, cap in zip(load, capacity)):
                    continue
                edges = [(i, j, kind) for (i, j), kind in zip(pairs, kinds) if kind]
                mol = MoleculeGraph.from_edges(atoms, edges, alphabet.max_atoms)
                if not is_valid(mol):
                    continue
                found.setdefault(canonical_key(mol), mol)
    logger.info(f'Enumerated {len(found)} molecules with up to {max_atoms} heavy atoms')
    return MoleculeDataset('small', list(found.values()))


def _free_valence(alphabet, atoms, load, index):
    return alphabet.max_valence[atoms[index]] - load[index]


def gen_synthetic_ligands(n, seed, min_atoms=4, max_atoms=12):
    """
    Random valid large-mode molecules: a spanning tree grown from a carbon,
    mostly single bonds, with occasional double bonds and ring closures.
    """
    alphabet = get_alphabet('large')
    max_atoms = max_atoms or alphabet.max_atoms
    if not 1 <= min_atoms <= max_atoms <= alphabet.max_atoms:
        raise ContractViolation(f'bad ligand size range [{min_atoms}, {max_atoms}]')
    rng = np.random.default_rng(seed)
    symbols = ('C', 'N', 'O', 'S', 'F', 'X')
    weights = np.array([0.6, 0.12, 0.14, 0.05, 0.05, 0.04])
    molecules = []
    for _ in range(n):
        target = int(rng.integers(min_atoms, max_atoms + 1))
        atoms, load, edges = ['C'], [0], {}
        while len(atoms) < target:
            open_sites = [i for i in range(len(atoms)) if _free_valence(alphabet, atoms, load, i) >= 1]
            if not open_sites:
                break
            anchor = open_sites[int(rng.integers(len(open_sites)))]
            symbol = symbols[int(rng.choice(len(symbols), p=weights))]
            new = len(atoms)
            atoms.append(symbol)
            load.append(0)
            order = 1
            if (min(_free_valence(alphabet, atoms, load, anchor), alphabet.max_valence[symbol]) >= 2
                    and rng.random() < 0.15):
                order = 2
            edges[(anchor, new)] = BondKind(order)
            load[anchor] += order
            load[new] += order
        for _ in range(int(rng.integers(0, 3))):
            i, j = sorted(int(v) for v in rng.choice(len(atoms), size=2, replace=False)) if len(atoms) > 2 else (0, 0)
            if i == j or (i, j) in edges:
                continue
            if _free_valence(alphabet, atoms, load, i) >= 1 and _free_valence(alphabet, atoms, load, j) >= 1:
                edges[(i, j)] = BondKind.SINGLE
                load[i] += 1
                load[j] += 1
        mol = MoleculeGraph.from_edges(atoms, [(i, j, kind) for (i, j), kind in edges.items()], alphabet.max_atoms)
        molecules.append(mol)
    return MoleculeDataset('large', molecules)


def gen_synthetic_voxels(n_per_class, channels, dim, seed, n_classes=3):
    """
    Balanced voxel classes: a Gaussian blob at a class-specific centre,
    scaled per channel by a class-specific signature, plus N(0, 0.1) noise.
    """
    if n_per_class < 1:
        raise ContractViolation(f'n_per_class must be >= 1, got {n_per_class}')
    rng = np.random.default_rng(seed)
    axis = np.arange(dim, dtype=float)
    zz, yy, xx = np.meshgrid(axis, axis, axis, indexing='ij')
    width = max(dim / 6.0, 1.0)
    samples = []
    for label in range(n_classes):
        centre = np.array([dim * (label + 1) / (n_classes + 1)] * 3)
        phase = 2.0 * np.pi * (np.arange(channels) / channels + label / n_classes)
        signature = 0.5 + 0.5 * np.cos(phase)
        for _ in range(n_per_class):
            offset = centre + rng.uniform(-1.0, 1.0, size=3)
            distance = (zz - offset[0]) ** 2 + (yy - offset[1]) ** 2 + (xx - offset[2]) ** 2
            blob = np.exp(-distance / (2.0 * width ** 2))
            data = signature[:, None, None, None] * blob[None]
            data = data + rng.normal(0.0, VOXEL_NOISE, size=data.shape)
            samples.append(VoxelGrid(data.astype(np.float32).astype(float), label))
    return VoxelDataset(samples)


def load_molecules(path, format='jsonl', mode='small'):
    """
    Load a molecule file, keeping only valid molecules.

    Raises:
        DataError: unreadable file or no valid molecule in it.
    """
    if format not in MOLECULE_FORMATS:
        raise ContractViolation(f'unknown molecule format {format!r}; expected one of {MOLECULE_FORMATS}')
    alphabet = get_alphabet(mode)
    reader = read_jsonl if format == 'jsonl' else read_sdf
    molecules = reader(path, alphabet)
    valid = [mol for mol in molecules if is_valid(mol)]
    skipped = len(molecules) - len(valid)
    if skipped:
        logger.warning(f'Skipped {skipped} invalid molecule(s) in {path}')
    if not valid:
        raise DataError(
            f'no valid molecules in {path} ({skipped} invalid record(s) skipped)',
            {'path': str(path), 'skipped': skipped},
        )
    logger.info(f'Loaded {len(valid)} molecules from {path}')
    return MoleculeDataset(alphabet.name, valid)


def load_voxels(path):
    return VoxelDataset(read_voxb(path))
