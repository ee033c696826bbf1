"""
Molecular graph model for drugqml.

A molecule is an atom vector plus a symmetric bond-kind matrix, both padded
to the `max_atoms` of its alphabet with the null atom. Hydrogens are implicit.

This module contains:
    - AtomAlphabet / BondKind: the two alphabets and their valence tables
    - MoleculeGraph: the padded graph with structural checks
    - decode_graph / to_one_hot: logits <-> graphs
    - is_valid / count_rings / property_scores: chemistry on graphs
    - to_smiles: deterministic SMILES emission
    - parse_sdf / read_jsonl / write_jsonl: molecule file formats
    - canonical_key: permutation-invariant deduplication key
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .exceptions import ContractViolation, DataError, MoleculeParseError

logger = logging.getLogger(__name__)

NULL_ATOM = '∅'
VALENCE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class AtomAlphabet:
    name: str
    symbols: tuple
    max_valence: dict = field(hash=False)
    max_atoms: int

    def index(self, symbol):
        try:
            return self.symbols.index(symbol)
        except ValueError:
            raise ContractViolation(f'atom {symbol!r} is not in the {self.name} alphabet') from None

    def __len__(self):
        return len(self.symbols)


SMALL_ALPHABET = AtomAlphabet(
    'small',
    (NULL_ATOM, 'C', 'N', 'O', 'F'),
    {NULL_ATOM: 0, 'C': 4, 'N': 3, 'O': 2, 'F': 1},
    9,
)
LARGE_ALPHABET = AtomAlphabet(
    'large',
    (NULL_ATOM, 'C', 'N', 'O', 'S', 'F', 'X'),
    {NULL_ATOM: 0, 'C': 4, 'N': 3, 'O': 2, 'S': 6, 'F': 1, 'X': 1},
    32,
)
ALPHABETS = {'small': SMALL_ALPHABET, 'large': LARGE_ALPHABET}

# Elements folded into the generic halogen-like atom of the large alphabet.
GENERIC_HALOGENS = ('Cl', 'Br', 'I')


def get_alphabet(mode):
    if isinstance(mode, AtomAlphabet):
        return mode
    if mode not in ALPHABETS:
        raise ContractViolation(f'unknown molecule mode {mode!r}; expected one of {sorted(ALPHABETS)}')
    return ALPHABETS[mode]


class BondKind(IntEnum):
    NONE = 0
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4

    @property
    def order(self):
        return BOND_ORDER[self]

    @classmethod
    def parse(cls, value):
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise ContractViolation(f'unknown bond kind {value!r}') from None
        return cls(int(value))


BOND_ORDER = {
    BondKind.NONE: 0.0,
    BondKind.SINGLE: 1.0,
    BondKind.DOUBLE: 2.0,
    BondKind.TRIPLE: 3.0,
    BondKind.AROMATIC: 1.5,
}
BOND_SYMBOLS = {
    BondKind.SINGLE: '',
    BondKind.DOUBLE: '=',
    BondKind.TRIPLE: '#',
    BondKind.AROMATIC: ':',
}
N_BOND_KINDS = len(BondKind)
_ORDER_LOOKUP = np.array([BOND_ORDER[kind] for kind in BondKind])

LOGP_CONTRIBUTION = {'C': 0.40, 'N': -0.45, 'O': -0.55, 'S': 0.30, 'F': 0.15, 'X': 0.0}


@dataclass
class MoleculeGraph:
    """
    Heavy-atom graph padded to `max_atoms` slots.

    Structural invariants (checked on construction): the bond matrix is
    symmetric with a null diagonal, and no bond touches a null atom.
    """

    atoms: tuple
    bonds: np.ndarray

    def __post_init__(self):
        self.atoms = tuple(self.atoms)
        self.bonds = np.asarray(self.bonds, dtype=np.int8)
        n = len(self.atoms)
        if self.bonds.shape != (n, n):
            raise ContractViolation(f'bond matrix shape {self.bonds.shape} does not match {n} atoms')
        if not np.array_equal(self.bonds, self.bonds.T):
            raise ContractViolation('bond matrix is not symmetric')
        if np.any(np.diag(self.bonds)):
            raise ContractViolation('bond matrix diagonal must be empty')
        if self.bonds.min(initial=0) < 0 or self.bonds.max(initial=0) >= N_BOND_KINDS:
            raise ContractViolation('bond matrix holds an unknown bond kind')
        null = np.array([symbol == NULL_ATOM for symbol in self.atoms], dtype=bool)
        if np.any(self.bonds[null]):
            raise ContractViolation('bond incident to a null atom')

    @classmethod
    def empty(cls, max_atoms):
        return cls((NULL_ATOM,) * max_atoms, np.zeros((max_atoms, max_atoms), dtype=np.int8))

    @classmethod
    def from_edges(cls, atoms, edges=(), max_atoms=None):
        """
        Build a graph from atom symbols and (i, j, kind) edges, padding with
        null atoms up to `max_atoms` (defaults to the number of atoms given).
        """
        atoms = list(atoms)
        size = len(atoms) if max_atoms is None else max_atoms
        if len(atoms) > size:
            raise ContractViolation(f'{len(atoms)} atoms exceed max_atoms={size}')
        atoms += [NULL_ATOM] * (size - len(atoms))
        bonds = np.zeros((size, size), dtype=np.int8)
        for i, j, kind in edges:
            i, j = int(i), int(j)
            if not (0 <= i < size and 0 <= j < size) or i == j:
                raise ContractViolation(f'bad bond endpoints ({i}, {j})')
            bonds[i, j] = bonds[j, i] = BondKind.parse(kind)
        return cls(tuple(atoms), bonds)

    @property
    def max_atoms(self):
        return len(self.atoms)

    def present(self):
        return [i for i, symbol in enumerate(self.atoms) if symbol != NULL_ATOM]

    def n_atoms(self):
        return len(self.present())

    def edges(self):
        """Bonds as (i, j, BondKind) with i < j, row-major."""
        rows, cols = np.nonzero(np.triu(self.bonds, k=1))
        return [(int(i), int(j), BondKind(int(self.bonds[i, j]))) for i, j in zip(rows, cols)]

    def bond_orders(self):
        return _ORDER_LOOKUP[self.bonds]

    def compact(self, max_atoms=None):
        """Same molecule with present atoms moved to the front, order kept."""
        keep = self.present()
        remap = {old: new for new, old in enumerate(keep)}
        edges = [(remap[i], remap[j], kind) for i, j, kind in self.edges()]
        return MoleculeGraph.from_edges(
            [self.atoms[i] for i in keep], edges, max_atoms if max_atoms is not None else self.max_atoms
        )

    def permuted(self, order):
        """Relabel so that new atom k is old atom order[k]."""
        order = list(order)
        if sorted(order) != list(range(self.max_atoms)):
            raise ContractViolation('order must be a permutation of atom indices')
        return MoleculeGraph(tuple(self.atoms[i] for i in order), self.bonds[np.ix_(order, order)])


@dataclass(frozen=True)
class Validity:
    valid: bool
    reason: str = None

    def __bool__(self):
        return self.valid


def decode_graph(atom_logits, bond_logits, alphabet=SMALL_ALPHABET):
    """
    Argmax-decode generator logits into a graph.

    Args:
        atom_logits: (max_atoms, |atoms|) array
        bond_logits: (max_atoms, max_atoms, |bonds|) array; only i < j is read

    Returns:
        MoleculeGraph with bonds touching null atoms removed.
    """
    alphabet = get_alphabet(alphabet)
    atom_logits = np.asarray(atom_logits, dtype=float)
    bond_logits = np.asarray(bond_logits, dtype=float)
    n = atom_logits.shape[0]
    if atom_logits.shape != (n, len(alphabet)):
        raise ContractViolation(f'atom logits shape {atom_logits.shape} != ({n}, {len(alphabet)})')
    if bond_logits.shape != (n, n, N_BOND_KINDS):
        raise ContractViolation(f'bond logits shape {bond_logits.shape} != ({n}, {n}, {N_BOND_KINDS})')
    atoms = tuple(alphabet.symbols[k] for k in np.argmax(atom_logits, axis=1))
    upper = np.triu(np.argmax(bond_logits, axis=2), k=1)
    bonds = (upper + upper.T).astype(np.int8)
    null = np.array([symbol == NULL_ATOM for symbol in atoms])
    bonds[null, :] = 0
    bonds[:, null] = 0
    return MoleculeGraph(atoms, bonds)


def to_one_hot(mol, alphabet=SMALL_ALPHABET):
    """Atom one-hot (n, |atoms|) and symmetric bond one-hot (n, n, |bonds|)."""
    alphabet = get_alphabet(alphabet)
    atom_idx = [alphabet.index(symbol) for symbol in mol.atoms]
    atoms = np.eye(len(alphabet))[atom_idx]
    bonds = np.eye(N_BOND_KINDS)[mol.bonds.astype(int)]
    return atoms, bonds


def _components(mol, present):
    if not present:
        return 0
    sub = mol.bonds[np.ix_(present, present)] > 0
    count, _ = connected_components(csr_matrix(sub), directed=False)
    return int(count)


def is_valid(mol):
    present = mol.present()
    if not present:
        return Validity(False, 'empty')
    totals = mol.bond_orders().sum(axis=1)
    for i in present:
        limit = _max_valence(mol.atoms[i])
        if totals[i] > limit + VALENCE_TOLERANCE:
            return Validity(False, f'valence exceeded at atom {i}')
    if len(present) >= 2:
        for i in present:
            if not np.any(mol.bonds[i]):
                return Validity(False, f'isolated atom {i}')
    if _components(mol, present) > 1:
        return Validity(False, 'disconnected')
    return Validity(True)


def _max_valence(symbol):
    for alphabet in (SMALL_ALPHABET, LARGE_ALPHABET):
        if symbol in alphabet.max_valence:
            return alphabet.max_valence[symbol]
    raise ContractViolation(f'unknown atom symbol {symbol!r}')


def count_rings(mol):
    present = mol.present()
    if not present:
        return 0
    n_bonds = int(np.count_nonzero(np.triu(mol.bonds, k=1)))
    return n_bonds - len(present) + _components(mol, present)


@dataclass(frozen=True)
class PropertyScores:
    logp_proxy: float = 0.0
    druglike_proxy: float = 0.0
    sa_proxy: float = 0.0

    def to_dict(self):
        return {'logp_proxy': self.logp_proxy, 'druglike_proxy': self.druglike_proxy, 'sa_proxy': self.sa_proxy}


def property_scores(mol):
    """
    Rule-based property proxies (not RDKit values). Invalid molecules score
    zero everywhere.
    """
    if not is_valid(mol):
        return PropertyScores()
    symbols = [mol.atoms[i] for i in mol.present()]
    logp = float(sum(LOGP_CONTRIBUTION[s] for s in symbols))
    rings = count_rings(mol)
    rules = (
        2 <= len(symbols) <= mol.max_atoms,
        any(s != 'C' for s in symbols),
        rings <= 2,
        -2.0 <= logp <= 2.0,
    )
    triples = sum(1 for *_, kind in mol.edges() if kind == BondKind.TRIPLE)
    sa = 1.0 - 0.15 * rings - 0.15 * triples - 0.05 * max(0, len(symbols) - 6)
    return PropertyScores(logp, sum(rules) / 4.0, float(min(max(sa, 0.0), 1.0)))


def _ring_label(number):
    return str(number) if number < 10 else f'%{number}'


def to_smiles(mol):
    """
    Depth-first SMILES from the lowest-index atom, neighbors in index order.
    Ring-closure digits are numbered from 1 in discovery order; bonds are
    written as typed.
    """
    validity = is_valid(mol)
    if not validity:
        raise ContractViolation(f'cannot write SMILES for an invalid molecule: {validity.reason}')
    present = mol.present()
    neighbors = {i: [j for j in present if mol.bonds[i, j]] for i in present}
    children = {i: [] for i in present}
    opens = {i: [] for i in present}
    closes = {i: [] for i in present}
    visited, on_stack = set(), set()
    ring_count = 0

    def walk(atom, parent):
        nonlocal ring_count
        visited.add(atom)
        on_stack.add(atom)
        for other in neighbors[atom]:
            if other == parent:
                continue
            if other not in visited:
                children[atom].append(other)
                walk(other, atom)
            elif other in on_stack:
                ring_count += 1
                opens[other].append(ring_count)
                closes[atom].append((ring_count, BondKind(int(mol.bonds[atom, other]))))
        on_stack.discard(atom)

    def emit(atom, bond):
        text = BOND_SYMBOLS.get(bond, '') + mol.atoms[atom]
        text += ''.join(_ring_label(n) for n in opens[atom])
        text += ''.join(BOND_SYMBOLS[kind] + _ring_label(n) for n, kind in closes[atom])
        kids = children[atom]
        for kid in kids[:-1]:
            text += '(' + emit(kid, BondKind(int(mol.bonds[atom, kid]))) + ')'
        if kids:
            text += emit(kids[-1], BondKind(int(mol.bonds[atom, kids[-1]])))
        return text

    walk(present[0], None)
    return emit(present[0], None)


def canonical_key(mol):
    """
    Permutation-invariant key. Exhaustive over relabelings up to 4 atoms;
    beyond that a sorted multiset of atoms, typed bonds and degrees, which is
    a deduplication key and not an isomorphism test.
    """
    compact = mol.compact()
    present = compact.present()
    n = len(present)
    if n <= 4:
        best = None
        for order in itertools.permutations(range(n)):
            atoms = tuple(compact.atoms[i] for i in order)
            bonds = tuple(int(compact.bonds[order[a], order[b]]) for a in range(n) for b in range(a + 1, n))
            candidate = (atoms, bonds)
            if best is None or candidate < best:
                best = candidate
        return ('exact',) + (best or ((), ()))
    atoms = tuple(sorted(compact.atoms[i] for i in present))
    bonds = tuple(sorted(
        (tuple(sorted((compact.atoms[i], compact.atoms[j]))), int(kind)) for i, j, kind in compact.edges()
    ))
    degrees = tuple(sorted(
        (compact.atoms[i], int(np.count_nonzero(compact.bonds[i]))) for i in present
    ))
    return ('multiset', atoms, bonds, degrees)


# ---------------------------------------------------------------- SDF subset

_SDF_BOND_KINDS = {1: BondKind.SINGLE, 2: BondKind.DOUBLE, 3: BondKind.TRIPLE, 4: BondKind.AROMATIC}


def _sdf_symbol(element, alphabet):
    if element in alphabet.symbols and element != NULL_ATOM:
        return element
    if 'X' in alphabet.symbols and element in GENERIC_HALOGENS:
        return 'X'
    return None


def _parse_counts(line, number):
    if 'V2000' not in line:
        raise MoleculeParseError('malformed counts line (expected V2000)', number)
    try:
        return int(line[0:3]), int(line[3:6])
    except ValueError:
        tokens = line.split()
        try:
            return int(tokens[0]), int(tokens[1])
        except (IndexError, ValueError):
            raise MoleculeParseError('malformed counts line', number) from None


def _is_record_end(line):
    return line.startswith('M  END') or line.startswith('$$$$')


def parse_sdf(text, alphabet=SMALL_ALPHABET):
    """
    Parse the V2000 connection-table subset.

    Explicit hydrogens are dropped with their bonds. Records holding elements
    outside the alphabet, more heavy atoms than `max_atoms`, or no heavy atom
    at all are skipped and reported in one counted warning.

    Raises:
        MoleculeParseError: malformed counts line or truncated block, with the
        1-based line number.
    """
    alphabet = get_alphabet(alphabet)
    lines = text.splitlines()
    molecules = []
    skipped = 0
    pos = 0
    while pos < len(lines):
        if not any(line.strip() for line in lines[pos:]):
            break
        counts_at = pos + 3
        if counts_at >= len(lines):
            raise MoleculeParseError('truncated record header', len(lines) + 1)
        n_atoms, n_bonds = _parse_counts(lines[counts_at], counts_at + 1)
        pos = counts_at + 1

        elements = []
        for _ in range(n_atoms):
            line = lines[pos] if pos < len(lines) else ''
            tokens = line.split()
            if pos >= len(lines) or _is_record_end(line) or len(tokens) < 4 or not tokens[3].isalpha():
                raise MoleculeParseError(f'truncated atom block ({n_atoms} atoms declared)', pos + 1)
            elements.append(tokens[3])
            pos += 1

        edges = []
        for _ in range(n_bonds):
            line = lines[pos] if pos < len(lines) else ''
            if pos >= len(lines) or _is_record_end(line):
                raise MoleculeParseError(f'truncated bond block ({n_bonds} bonds declared)', pos + 1)
            try:
                i, j, kind = (int(value) for value in (line[0:3], line[3:6], line[6:9]))
            except ValueError:
                try:
                    i, j, kind = (int(value) for value in line.split()[:3])
                except ValueError:
                    raise MoleculeParseError('malformed bond line', pos + 1) from None
            if not (1 <= i <= n_atoms and 1 <= j <= n_atoms) or i == j or kind not in _SDF_BOND_KINDS:
                raise MoleculeParseError(f'bad bond {i} {j} {kind}', pos + 1)
            edges.append((i - 1, j - 1, _SDF_BOND_KINDS[kind]))
            pos += 1

        while pos < len(lines) and not lines[pos].startswith('$$$$'):
            pos += 1
        pos += 1

        heavy = [k for k, element in enumerate(elements) if element != 'H']
        symbols = [_sdf_symbol(elements[k], alphabet) for k in heavy]
        if not heavy or None in symbols or len(heavy) > alphabet.max_atoms:
            skipped += 1
            continue
        remap = {old: new for new, old in enumerate(heavy)}
        kept = [(remap[i], remap[j], kind) for i, j, kind in edges if i in remap and j in remap]
        molecules.append(MoleculeGraph.from_edges(symbols, kept, alphabet.max_atoms))

    if skipped:
        logger.warning(f'Skipped {skipped} SDF record(s) outside the {alphabet.name} alphabet or size limit')
    return molecules


def read_sdf(path, alphabet=SMALL_ALPHABET):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f'cannot read {path}: {exc.strerror}', {'path': str(path)}) from exc
    return parse_sdf(text, alphabet)


# ----------------------------------------------------------------- JSONL

def molecule_to_record(mol, **extra):
    compact = mol.compact()
    record = {
        'atoms': [compact.atoms[i] for i in compact.present()],
        'bonds': [[i, j, kind.name] for i, j, kind in compact.edges()],
    }
    record.update(extra)
    return record


def molecule_from_record(record, alphabet=SMALL_ALPHABET):
    alphabet = get_alphabet(alphabet)
    atoms = record.get('atoms')
    bonds = record.get('bonds', [])
    if not isinstance(atoms, list) or not isinstance(bonds, list):
        raise ContractViolation('record needs an "atoms" list and a "bonds" list')
    for symbol in atoms:
        alphabet.index(symbol)
    if len(atoms) > alphabet.max_atoms:
        raise ContractViolation(f'{len(atoms)} atoms exceed max_atoms={alphabet.max_atoms}')
    for bond in bonds:
        if not isinstance(bond, list) or len(bond) != 3:
            raise ContractViolation(f'bond entry {bond!r} is not [i, j, kind]')
    return MoleculeGraph.from_edges(atoms, bonds, alphabet.max_atoms)


def read_jsonl(path, alphabet=SMALL_ALPHABET):
    """
    Read molecules from JSONL. Records that do not fit the alphabet are
    skipped with a counted warning; unparsable JSON is an error.
    """
    molecules, skipped = [], 0
    try:
        handle = open(path)
    except OSError as exc:
        raise DataError(f'cannot read {path}: {exc.strerror}', {'path': str(path)}) from exc
    with handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MoleculeParseError(f'invalid JSON ({exc.msg})', number) from exc
            if not isinstance(record, dict):
                raise MoleculeParseError('expected a JSON object', number)
            try:
                molecules.append(molecule_from_record(record, alphabet))
            except ContractViolation as exc:
                logger.debug(f'line {number}: {exc}')
                skipped += 1
    if skipped:
        logger.warning(f'Skipped {skipped} JSONL record(s) in {path} outside the {get_alphabet(alphabet).name} alphabet')
    return molecules


def write_jsonl(path, records):
    """Write one JSON object per line; molecules are converted with `molecule_to_record`."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w') as handle:
            for record in records:
                if isinstance(record, MoleculeGraph):
                    record = molecule_to_record(record)
                handle.write(json.dumps(record, ensure_ascii=False) + '\n')
    except OSError as exc:
        raise DataError(f'cannot write {path}: {exc.strerror}', {'path': str(path)}) from exc
    return path
