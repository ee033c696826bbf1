"""
Statevector simulation of parameterized quantum circuits.

This module holds the quantum stage shared by the generator, the quanvolution
filter and the VAE quantum layers:

    StateVector: dense complex amplitude vector over n qubits
    Gate: one gate of a circuit program (H, RX, RY, RZ, CNOT, CZ, CRY)
    ParamCircuit: ordered gate program whose rotation angles come from a
        parameter vector (trainable) or a stored frozen vector
    PatchedCircuit: independent sub-circuits over consecutive qubit ranges

Qubit 0 is the most significant bit of a basis index, so |10> has qubit 0 set.
Every circuit run starts from |0...0>, applies RY(init_angles[q]) on each qubit
(the initialization stage), then the gate program, and returns the Pauli-Z
expectation of every qubit. Expectations are exact (infinite-shot limit).

Internally all simulation is batched: amplitudes have shape (rows, 2**n) and
each row carries its own parameter vector, which is how parameter-shift
gradients and generator batches are evaluated in one pass.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from math import pi, sqrt

import numpy as np

from .exceptions import ContractViolation, NumericalError

logger = logging.getLogger(__name__)

MAX_QUBITS = 20
NORM_TOLERANCE = 1e-10


class GateKind(str, Enum):
    H = 'H'
    RX = 'RX'
    RY = 'RY'
    RZ = 'RZ'
    CNOT = 'CNOT'
    CZ = 'CZ'
    CRY = 'CRY'


ROTATION_KINDS = frozenset({GateKind.RX, GateKind.RY, GateKind.RZ, GateKind.CRY})
CONTROLLED_KINDS = frozenset({GateKind.CNOT, GateKind.CZ, GateKind.CRY})

_FIXED_MATRICES = {
    GateKind.H: np.array([[1, 1], [1, -1]], dtype=complex) / sqrt(2),
    GateKind.CNOT: np.array([[0, 1], [1, 0]], dtype=complex),
    GateKind.CZ: np.array([[1, 0], [0, -1]], dtype=complex),
}

# (coefficient, shift) pairs; gradient = sum(c * f(theta + s))
_TWO_TERM_RULE = ((0.5, pi / 2), (-0.5, -pi / 2))
_C_PLUS = (sqrt(2) + 1) / (4 * sqrt(2))
_C_MINUS = (sqrt(2) - 1) / (4 * sqrt(2))
_FOUR_TERM_RULE = (
    (_C_PLUS, pi / 2),
    (-_C_PLUS, -pi / 2),
    (-_C_MINUS, 3 * pi / 2),
    (_C_MINUS, -3 * pi / 2),
)


@dataclass(frozen=True)
class Gate:
    kind: GateKind
    target: int
    control: int | None = None
    param_slot: int | None = None

    def __post_init__(self):
        try:
            object.__setattr__(self, 'kind', GateKind(self.kind))
        except ValueError:
            raise ContractViolation(f'unknown gate kind {self.kind!r}') from None
        if self.target < 0 or (self.control is not None and self.control < 0):
            raise ContractViolation(f'{self.kind.value}: negative qubit index')
        if self.kind in CONTROLLED_KINDS and self.control is None:
            raise ContractViolation(f'{self.kind.value} needs a control qubit')
        if self.kind not in CONTROLLED_KINDS and self.control is not None:
            raise ContractViolation(f'{self.kind.value} takes no control qubit')
        if self.control is not None and self.control == self.target:
            raise ContractViolation(f'{self.kind.value}: control equals target ({self.target})')
        if self.kind in ROTATION_KINDS and self.param_slot is None:
            raise ContractViolation(f'{self.kind.value} needs a parameter slot')
        if self.kind not in ROTATION_KINDS and self.param_slot is not None:
            raise ContractViolation(f'{self.kind.value} takes no parameter slot')

    @property
    def qubits(self):
        return (self.target,) if self.control is None else (self.control, self.target)

    def to_dict(self):
        return {
            'kind': self.kind.value,
            'target': self.target,
            'control': self.control,
            'slot': self.param_slot,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            kind=data['kind'],
            target=int(data['target']),
            control=None if data.get('control') is None else int(data['control']),
            param_slot=None if data.get('slot') is None else int(data['slot']),
        )


@dataclass
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        _check_qubit_count(self.n_qubits)
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (2 ** self.n_qubits,):
            raise ContractViolation(
                f'{self.n_qubits} qubits need {2 ** self.n_qubits} amplitudes, '
                f'got shape {self.amplitudes.shape}'
            )

    @classmethod
    def zeros(cls, n_qubits):
        """The |0...0> state."""
        _check_qubit_count(n_qubits)
        amplitudes = np.zeros(2 ** n_qubits, dtype=np.complex128)
        amplitudes[0] = 1.0
        return cls(n_qubits, amplitudes)

    @classmethod
    def basis(cls, bits):
        """Computational basis state from a bit string, qubit 0 first ('10' = |10>)."""
        n_qubits = len(bits)
        _check_qubit_count(n_qubits)
        amplitudes = np.zeros(2 ** n_qubits, dtype=np.complex128)
        amplitudes[int(bits, 2)] = 1.0
        return cls(n_qubits, amplitudes)

    def norm(self):
        return float(np.vdot(self.amplitudes, self.amplitudes).real)


@dataclass(frozen=True)
class ParamCircuit:
    n_qubits: int
    gates: tuple
    n_params: int
    n_layers: int = 1
    fixed_params: tuple | None = None

    def __post_init__(self):
        _check_qubit_count(self.n_qubits)
        object.__setattr__(self, 'gates', tuple(self.gates))
        slots = []
        for gate in self.gates:
            for qubit in gate.qubits:
                if qubit >= self.n_qubits:
                    raise ContractViolation(
                        f'{gate.kind.value} touches qubit {qubit} of a {self.n_qubits}-qubit circuit'
                    )
            if gate.param_slot is not None:
                slots.append(gate.param_slot)
        if sorted(slots) != list(range(self.n_params)):
            raise ContractViolation(
                f'parameter slots must reference each of 0..{self.n_params - 1} exactly once'
            )
        if self.fixed_params is not None:
            fixed = tuple(float(v) for v in self.fixed_params)
            if len(fixed) != self.n_params:
                raise ContractViolation(f'{len(fixed)} frozen values for {self.n_params} slots')
            object.__setattr__(self, 'fixed_params', fixed)

    @property
    def trainable(self):
        return self.fixed_params is None

    def slot_kinds(self):
        kinds = [None] * self.n_params
        for gate in self.gates:
            if gate.param_slot is not None:
                kinds[gate.param_slot] = gate.kind
        return kinds

    def to_dict(self):
        data = {
            'type': 'param',
            'n_qubits': self.n_qubits,
            'n_layers': self.n_layers,
            'n_params': self.n_params,
            'gates': [gate.to_dict() for gate in self.gates],
        }
        if self.fixed_params is not None:
            data['fixed_params'] = list(self.fixed_params)
        return data


@dataclass(frozen=True)
class PatchedCircuit:
    sub_circuits: tuple

    def __post_init__(self):
        object.__setattr__(self, 'sub_circuits', tuple(self.sub_circuits))
        if not self.sub_circuits:
            raise ContractViolation('a patched circuit needs at least one sub-circuit')
        _check_qubit_count(self.n_qubits)

    @property
    def n_qubits(self):
        return sum(sub.n_qubits for sub in self.sub_circuits)

    @property
    def n_params(self):
        return sum(sub.n_params for sub in self.sub_circuits)

    @property
    def n_layers(self):
        return max(sub.n_layers for sub in self.sub_circuits)

    @property
    def trainable(self):
        return all(sub.trainable for sub in self.sub_circuits)

    @property
    def partition(self):
        """Consecutive (start, stop) qubit ranges, one per sub-circuit."""
        return _ranges([sub.n_qubits for sub in self.sub_circuits])

    @property
    def param_ranges(self):
        return _ranges([sub.n_params for sub in self.sub_circuits])

    def slot_kinds(self):
        return [kind for sub in self.sub_circuits for kind in sub.slot_kinds()]

    def as_monolithic(self):
        """The same gates placed on one register with shifted qubit indices and slots."""
        gates = []
        for sub, (q0, _), (p0, _) in zip(self.sub_circuits, self.partition, self.param_ranges):
            for gate in sub.gates:
                gates.append(Gate(
                    gate.kind,
                    gate.target + q0,
                    None if gate.control is None else gate.control + q0,
                    None if gate.param_slot is None else gate.param_slot + p0,
                ))
        return ParamCircuit(self.n_qubits, tuple(gates), self.n_params, self.n_layers)

    def to_dict(self):
        return {
            'type': 'patched',
            'n_qubits': self.n_qubits,
            'n_layers': self.n_layers,
            'n_params': self.n_params,
            'sub_circuits': [sub.to_dict() for sub in self.sub_circuits],
        }


def circuit_from_dict(data):
    """Rebuild a ParamCircuit or PatchedCircuit from its JSON description."""
    if data.get('type') == 'patched':
        return PatchedCircuit(tuple(circuit_from_dict(sub) for sub in data['sub_circuits']))
    if data.get('type') != 'param':
        raise ContractViolation(f'unknown circuit type {data.get("type")!r}')
    return ParamCircuit(
        n_qubits=int(data['n_qubits']),
        gates=tuple(Gate.from_dict(g) for g in data['gates']),
        n_params=int(data['n_params']),
        n_layers=int(data.get('n_layers', 1)),
        fixed_params=data.get('fixed_params'),
    )


def _ranges(sizes):
    out, start = [], 0
    for size in sizes:
        out.append((start, start + size))
        start += size
    return out


def _check_qubit_count(n_qubits):
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise ContractViolation(f'qubit count must be in [1, {MAX_QUBITS}], got {n_qubits}')


def _rotation_matrices(kind, angles):
    angles = np.asarray(angles, dtype=float)
    cos, sin = np.cos(angles / 2), np.sin(angles / 2)
    matrices = np.zeros((angles.shape[0], 2, 2), dtype=np.complex128)
    if kind in (GateKind.RY, GateKind.CRY):
        matrices[:, 0, 0], matrices[:, 0, 1] = cos, -sin
        matrices[:, 1, 0], matrices[:, 1, 1] = sin, cos
    elif kind == GateKind.RX:
        matrices[:, 0, 0], matrices[:, 0, 1] = cos, -1j * sin
        matrices[:, 1, 0], matrices[:, 1, 1] = -1j * sin, cos
    else:
        matrices[:, 0, 0] = np.exp(-0.5j * angles)
        matrices[:, 1, 1] = np.exp(0.5j * angles)
    return matrices


def _apply_single(amps, matrices, qubit, n_qubits):
    rows = amps.shape[0]
    psi = amps.reshape(rows, 2 ** qubit, 2, 2 ** (n_qubits - qubit - 1))
    return np.einsum('bij,bxjy->bxiy', matrices, psi).reshape(rows, -1)


def _apply_controlled(amps, matrices, control, target, n_qubits):
    rows = amps.shape[0]
    lo, hi = sorted((control, target))
    psi = amps.reshape(rows, 2 ** lo, 2, 2 ** (hi - lo - 1), 2, 2 ** (n_qubits - hi - 1)).copy()
    if control < target:
        psi[:, :, 1] = np.einsum('bij,bamjz->bamiz', matrices, psi[:, :, 1])
    else:
        psi[:, :, :, :, 1] = np.einsum('bij,bajmz->baimz', matrices, psi[:, :, :, :, 1])
    return psi.reshape(rows, -1)


def _apply_rows(amps, gate, angles, n_qubits):
    rows = amps.shape[0]
    if gate.kind in ROTATION_KINDS:
        matrices = _rotation_matrices(gate.kind, angles[:, gate.param_slot])
    else:
        matrices = np.broadcast_to(_FIXED_MATRICES[gate.kind], (rows, 2, 2))
    if gate.control is None:
        return _apply_single(amps, matrices, gate.target, n_qubits)
    return _apply_controlled(amps, matrices, gate.control, gate.target, n_qubits)


def _z_expectations(amps, n_qubits):
    probs = (np.abs(amps) ** 2).reshape((amps.shape[0],) + (2,) * n_qubits)
    out = np.empty((amps.shape[0], n_qubits))
    for qubit in range(n_qubits):
        axes = tuple(axis for axis in range(1, n_qubits + 1) if axis != qubit + 1)
        marginal = probs.sum(axis=axes) if axes else probs
        out[:, qubit] = marginal[:, 0] - marginal[:, 1]
    return out


def _check_norms(amps):
    drift = np.abs(np.sum(np.abs(amps) ** 2, axis=1) - 1.0)
    if drift.size and drift.max() > NORM_TOLERANCE:
        raise NumericalError(
            f'statevector norm drifted by {drift.max():.3e}',
            {'max_drift': float(drift.max())},
        )


def _simulate_rows(circuit, angles, init_angles):
    n = circuit.n_qubits
    amps = np.zeros((init_angles.shape[0], 2 ** n), dtype=np.complex128)
    amps[:, 0] = 1.0
    for qubit in range(n):
        amps = _apply_single(amps, _rotation_matrices(GateKind.RY, init_angles[:, qubit]), qubit, n)
    for gate in circuit.gates:
        amps = _apply_rows(amps, gate, angles, n)
    _check_norms(amps)
    return amps


def _expectation_rows(circuit, angles, init_angles):
    if isinstance(circuit, PatchedCircuit):
        parts = []
        for sub, (q0, q1), (p0, p1) in zip(circuit.sub_circuits, circuit.partition, circuit.param_ranges):
            parts.append(_expectation_rows(sub, angles[:, p0:p1], init_angles[:, q0:q1]))
        return np.concatenate(parts, axis=1)
    return _z_expectations(_simulate_rows(circuit, angles, init_angles), circuit.n_qubits)


def _evaluate(circuit, angles, init_angles, workers=1):
    rows = init_angles.shape[0]
    if workers <= 1 or rows < 2 * workers:
        return _expectation_rows(circuit, angles, init_angles)
    chunks = np.array_split(np.arange(rows), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(lambda idx: _expectation_rows(circuit, angles[idx], init_angles[idx]), chunks)
        return np.concatenate(list(parts), axis=0)


def _resolve_params(circuit, params):
    if params is None:
        if isinstance(circuit, ParamCircuit) and circuit.fixed_params is not None:
            return np.asarray(circuit.fixed_params, dtype=float)
        if isinstance(circuit, PatchedCircuit) and not circuit.trainable:
            return np.concatenate([np.asarray(sub.fixed_params, dtype=float) for sub in circuit.sub_circuits])
        raise ContractViolation('a trainable circuit needs an explicit parameter vector')
    params = np.asarray(params, dtype=float)
    if params.shape[-1] != circuit.n_params:
        raise ContractViolation(f'circuit has {circuit.n_params} parameters, got {params.shape[-1]}')
    if not np.all(np.isfinite(params)):
        raise NumericalError('non-finite circuit parameters')
    return params


def _resolve_rows(circuit, params, init_angles):
    params = _resolve_params(circuit, params)
    init_angles = np.asarray(init_angles, dtype=float)
    if init_angles.ndim != 2 or init_angles.shape[1] != circuit.n_qubits:
        raise ContractViolation(
            f'init_angles must have {circuit.n_qubits} columns, got shape {init_angles.shape}'
        )
    if params.ndim == 1:
        params = np.broadcast_to(params, (init_angles.shape[0], params.shape[0]))
    elif params.shape[0] != init_angles.shape[0]:
        raise ContractViolation(f'{params.shape[0]} parameter rows for {init_angles.shape[0]} init rows')
    return params, init_angles


def apply_gate(state, gate, params):
    """Apply one gate to a StateVector; returns a new normalized state."""
    for qubit in gate.qubits:
        if qubit >= state.n_qubits:
            raise ContractViolation(f'qubit {qubit} out of range for {state.n_qubits} qubits')
    params = np.asarray(params if params is not None else [], dtype=float)
    if gate.param_slot is not None and gate.param_slot >= params.shape[0]:
        raise ContractViolation(f'parameter slot {gate.param_slot} out of range ({params.shape[0]} given)')
    amps = _apply_rows(state.amplitudes[None, :], gate, params[None, :], state.n_qubits)
    _check_norms(amps)
    return StateVector(state.n_qubits, amps[0])


def expectation_z(state, qubit):
    """<psi|Z_qubit|psi>."""
    if not 0 <= qubit < state.n_qubits:
        raise ContractViolation(f'qubit {qubit} out of range for {state.n_qubits} qubits')
    return float(_z_expectations(state.amplitudes[None, :], state.n_qubits)[0, qubit])


def run_circuit(circuit, params, init_angles):
    """Z expectation of every qubit after the initialization stage and the gate program."""
    init_angles = np.asarray(init_angles, dtype=float)
    if init_angles.shape != (circuit.n_qubits,):
        raise ContractViolation(f'expected {circuit.n_qubits} init angles, got shape {init_angles.shape}')
    params, rows = _resolve_rows(circuit, params, init_angles[None, :])
    return _evaluate(circuit, params, rows)[0]


def run_circuit_batch(circuit, params, init_angles, workers=1):
    """
    Evaluate many rows at once.

    Args:
        circuit: ParamCircuit or PatchedCircuit
        params: shared (P,) vector, per-row (B, P) matrix, or None for frozen circuits
        init_angles: (B, N) initialization angles
        workers: row chunks evaluated on a thread pool, reassembled in row order

    Returns:
        np.ndarray: (B, N) expectations
    """
    params, rows = _resolve_rows(circuit, params, init_angles)
    return _evaluate(circuit, params, rows, workers)


def param_shift_jacobian(circuit, params, init_angles, workers=1):
    """
    Exact d<Z_q>/d(theta_p) for every row, qubit and parameter slot.

    RX/RY/RZ slots use the two-term shift rule; CRY slots use the four-term
    rule, which is exact for a controlled rotation.

    Returns:
        np.ndarray: (B, N, P)
    """
    params, rows = _resolve_rows(circuit, params, init_angles)
    n_rows, n_params = rows.shape[0], circuit.n_params
    jacobian = np.zeros((n_rows, circuit.n_qubits, n_params))
    if n_params == 0:
        return jacobian

    terms, shifted = [], []
    for slot, kind in enumerate(circuit.slot_kinds()):
        rule = _FOUR_TERM_RULE if kind == GateKind.CRY else _TWO_TERM_RULE
        for coeff, shift in rule:
            moved = np.array(params, dtype=float)
            moved[:, slot] += shift
            shifted.append(moved)
            terms.append((slot, coeff))

    values = _evaluate(
        circuit,
        np.concatenate(shifted, axis=0),
        np.tile(rows, (len(terms), 1)),
        workers,
    ).reshape(len(terms), n_rows, circuit.n_qubits)
    for k, (slot, coeff) in enumerate(terms):
        jacobian[:, :, slot] += coeff * values[k]
    return jacobian


def param_shift_grad(circuit, params, init_angles):
    """(N features x n_params) gradient for a single run."""
    init_angles = np.asarray(init_angles, dtype=float)
    if init_angles.shape != (circuit.n_qubits,):
        raise ContractViolation(f'expected {circuit.n_qubits} init angles, got shape {init_angles.shape}')
    return param_shift_jacobian(circuit, params, init_angles[None, :])[0]


def build_qgan_ansatz(n_qubits, n_layers):
    """
    Generator ansatz: per layer, RY on every qubit followed by a CRY chain
    on (i, i+1). L * (2N - 1) parameters.
    """
    if n_qubits < 2:
        raise ContractViolation(f'the generator ansatz needs at least 2 qubits, got {n_qubits}')
    if n_layers < 1:
        raise ContractViolation(f'the generator ansatz needs at least 1 layer, got {n_layers}')
    gates, slot = [], 0
    for _ in range(n_layers):
        for qubit in range(n_qubits):
            gates.append(Gate(GateKind.RY, qubit, param_slot=slot))
            slot += 1
        for qubit in range(n_qubits - 1):
            gates.append(Gate(GateKind.CRY, qubit + 1, control=qubit, param_slot=slot))
            slot += 1
    return ParamCircuit(n_qubits, tuple(gates), slot, n_layers)


def build_patched_ansatz(n_qubits, n_patches, n_layers):
    """P-QGAN circuit: `n_patches` equal generator ansatz blocks side by side."""
    if n_patches < 1 or n_qubits % n_patches:
        raise ContractViolation(f'{n_qubits} qubits cannot be split into {n_patches} equal patches')
    return PatchedCircuit(tuple(
        build_qgan_ansatz(n_qubits // n_patches, n_layers) for _ in range(n_patches)
    ))


def random_circuit(seed, n_qubits, depth):
    """
    Seeded random circuit with frozen angles. Each of `depth` layers draws one
    gate per qubit from {RX, RY, RZ, CNOT}; CNOT targets the current qubit with
    a random other control. Angles are uniform in [0, 2pi).
    """
    if depth < 1:
        raise ContractViolation(f'depth must be >= 1, got {depth}')
    _check_qubit_count(n_qubits)
    rng = np.random.default_rng(seed)
    kinds = [GateKind.RX, GateKind.RY, GateKind.RZ]
    if n_qubits > 1:
        kinds.append(GateKind.CNOT)
    gates, angles = [], []
    for _ in range(depth):
        for qubit in range(n_qubits):
            kind = kinds[int(rng.integers(len(kinds)))]
            if kind == GateKind.CNOT:
                control = (qubit + 1 + int(rng.integers(n_qubits - 1))) % n_qubits
                gates.append(Gate(kind, qubit, control=control))
            else:
                gates.append(Gate(kind, qubit, param_slot=len(angles)))
                angles.append(float(rng.uniform(0.0, 2 * pi)))
    return ParamCircuit(n_qubits, tuple(gates), len(angles), depth, tuple(angles))


def chain_circuits(circuits):
    """
    Run `circuits` one after another on the same register. Parameter slots
    are renumbered in order, so the chained parameter vector is the
    concatenation of the parts' vectors. The result is always trainable.
    """
    circuits = list(circuits)
    if not circuits:
        raise ContractViolation('nothing to chain')
    n_qubits = circuits[0].n_qubits
    gates, offset = [], 0
    for circuit in circuits:
        if circuit.n_qubits != n_qubits:
            raise ContractViolation(f'cannot chain {circuit.n_qubits} qubits onto {n_qubits}')
        for gate in circuit.gates:
            slot = None if gate.param_slot is None else gate.param_slot + offset
            gates.append(Gate(gate.kind, gate.target, gate.control, slot))
        offset += circuit.n_params
    return ParamCircuit(n_qubits, tuple(gates), offset, sum(c.n_layers for c in circuits))


def rotation_layer(n_qubits, kind=GateKind.RY):
    """One rotation per qubit, slot q on qubit q."""
    return ParamCircuit(n_qubits, tuple(Gate(kind, q, param_slot=q) for q in range(n_qubits)), n_qubits)


def cnot_ring(n_qubits):
    """CNOT(q -> q+1 mod n) for every qubit; a single CNOT for two qubits."""
    if n_qubits < 2:
        return ParamCircuit(n_qubits, (), 0)
    pairs = [(q, (q + 1) % n_qubits) for q in range(n_qubits if n_qubits > 2 else 1)]
    return ParamCircuit(n_qubits, tuple(Gate(GateKind.CNOT, t, control=c) for c, t in pairs), 0)


def finite_difference_jacobian(circuit, params, init_angles, step=1e-5, workers=1):
    """Central-difference counterpart of `param_shift_jacobian`, (B, N, P)."""
    params, rows = _resolve_rows(circuit, params, init_angles)
    n_params = circuit.n_params
    jacobian = np.zeros((rows.shape[0], circuit.n_qubits, n_params))
    for slot in range(n_params):
        up, down = np.array(params, dtype=float), np.array(params, dtype=float)
        up[:, slot] += step
        down[:, slot] -= step
        jacobian[:, :, slot] = (
            _evaluate(circuit, up, rows, workers) - _evaluate(circuit, down, rows, workers)
        ) / (2.0 * step)
    return jacobian


def gradient_error(circuit, params, init_angles, step=1e-5, workers=1):
    """
    Largest elementwise |shift - fd| / max(1, |shift|, |fd|) between the
    parameter-shift and central-difference Jacobians.
    """
    exact = param_shift_jacobian(circuit, params, init_angles, workers)
    approx = finite_difference_jacobian(circuit, params, init_angles, step, workers)
    scale = np.maximum(1.0, np.maximum(np.abs(exact), np.abs(approx)))
    return float(np.max(np.abs(exact - approx) / scale)) if exact.size else 0.0
