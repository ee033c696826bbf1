"""
Ligand VAE with a pluggable quantum layer between the latent sample and the
decoder.

Variants (QuantumLayerVariant.kind):
    classical_none: no quantum layer, z goes straight to the decoder
    angle_embed: RY(pi * tanh(z)) encoding, one frozen entangling layer
    data_reupload: `reupload_rounds` of RY(w * pi * tanh(z) + b) + CNOT ring,
        with trainable per-round w and b

The 32-dim latent is split into 4 groups of 8 qubits; every group runs the
same circuit. `normalized=True` standardizes the 32 circuit outputs with
running statistics.
"""

import logging
from dataclasses import dataclass, field
from math import pi

import numpy as np

from .exceptions import ContractViolation, DataError
from .molgraph import LARGE_ALPHABET, N_BOND_KINDS, decode_graph, to_one_hot
from .nn import AdamState, adam_step, log_softmax, mlp, softmax
from .qsim import chain_circuits, cnot_ring, param_shift_jacobian, rotation_layer, run_circuit_batch

logger = logging.getLogger(__name__)

VARIANT_KINDS = ('classical_none', 'angle_embed', 'data_reupload')
LATENT_DIM = 32
GROUP_QUBITS = 8
N_GROUPS = LATENT_DIM // GROUP_QUBITS
LOGVAR_CLAMP = 10.0
MAX_ATOMS = LARGE_ALPHABET.max_atoms
ATOM_SHAPE = (MAX_ATOMS, len(LARGE_ALPHABET))
BOND_SHAPE = (MAX_ATOMS, MAX_ATOMS, N_BOND_KINDS)
N_GRAPH_FEATURES = int(np.prod(ATOM_SHAPE) + np.prod(BOND_SHAPE))
ENCODER_HIDDEN = (512, 128)
DECODER_HIDDEN = (128, 512)
_UPPER = np.triu_indices(MAX_ATOMS, k=1)
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class QuantumLayerVariant:
    kind: str = 'classical_none'
    normalized: bool = False
    n_qubits: int = GROUP_QUBITS
    reupload_rounds: int = 4

    def __post_init__(self):
        if self.kind not in VARIANT_KINDS:
            raise ContractViolation(f'unknown quantum layer {self.kind!r}; expected one of {VARIANT_KINDS}')
        if self.n_qubits != GROUP_QUBITS:
            raise ContractViolation(f'quantum layer groups have {GROUP_QUBITS} qubits, got {self.n_qubits}')
        if self.reupload_rounds < 1:
            raise ContractViolation('reupload_rounds must be >= 1')

    @property
    def name(self):
        if self.kind == 'classical_none' or not self.normalized:
            return self.kind
        return f'{self.kind}_norm'

    @classmethod
    def from_name(cls, name, reupload_rounds=4):
        kind, _, suffix = name.partition('_norm')
        if name.endswith('_norm') and not suffix:
            return cls(kind, True, reupload_rounds=reupload_rounds)
        return cls(name, False, reupload_rounds=reupload_rounds)


class RunningStandardizer:
    """Per-feature (x - mean) / sqrt(var + eps) with exponentially averaged statistics."""

    def __init__(self, n_features, momentum=0.9, eps=1e-5):
        self.momentum = momentum
        self.eps = eps
        self.mean = np.zeros(n_features)
        self.var = np.ones(n_features)
        self._scale = None

    def forward(self, x, update=True):
        if update:
            m = self.momentum
            batch_mean = x.mean(axis=0)
            batch_var = x.var(axis=0, ddof=1 if len(x) > 1 else 0)
            # variance of the m : (1 - m) mixture of the running and batch distributions
            shift = (batch_mean - self.mean) ** 2
            self.var = m * self.var + (1 - m) * batch_var + m * (1 - m) * shift
            self.mean = m * self.mean + (1 - m) * batch_mean
        self._scale = 1.0 / np.sqrt(self.var + self.eps)
        return (x - self.mean) * self._scale

    def backward(self, grad_out):
        # statistics are treated as constants
        return grad_out * self._scale

    def state_dict(self):
        return {'mean': self.mean.tolist(), 'var': self.var.tolist()}

    def load_state_dict(self, state):
        self.mean = np.asarray(state['mean'], dtype=float)
        self.var = np.asarray(state['var'], dtype=float)


class QuantumLatentLayer:
    def __init__(self, variant, seed=0, workers=1):
        self.variant = variant
        self.workers = workers
        self.norm = RunningStandardizer(LATENT_DIM) if variant.normalized and variant.kind != 'classical_none' else None
        self.weights = np.zeros((N_GROUPS, 0, GROUP_QUBITS))
        self.bias = np.zeros((N_GROUPS, 0, GROUP_QUBITS))
        if variant.kind == 'angle_embed':
            rng = np.random.default_rng([seed, 2])
            self.entangler = rng.uniform(0.0, 2.0 * pi, size=GROUP_QUBITS)
            self.circuit = chain_circuits([
                rotation_layer(GROUP_QUBITS), rotation_layer(GROUP_QUBITS), cnot_ring(GROUP_QUBITS),
            ])
        elif variant.kind == 'data_reupload':
            rounds = variant.reupload_rounds
            self.weights = np.ones((N_GROUPS, rounds, GROUP_QUBITS))
            self.bias = np.zeros((N_GROUPS, rounds, GROUP_QUBITS))
            self.circuit = chain_circuits(
                [rotation_layer(GROUP_QUBITS), cnot_ring(GROUP_QUBITS)] * rounds
            )
        else:
            self.circuit = None
        self._cache = None

    def _angles(self, squashed):
        """Per-row circuit parameters for squashed latents of shape (B, groups, qubits)."""
        batch = squashed.shape[0]
        if self.variant.kind == 'angle_embed':
            encoded = (pi * squashed).reshape(batch * N_GROUPS, GROUP_QUBITS)
            frozen = np.broadcast_to(self.entangler, encoded.shape)
            return np.concatenate([encoded, frozen], axis=1)
        angles = self.weights[None] * pi * squashed[:, :, None, :] + self.bias[None]
        return angles.reshape(batch * N_GROUPS, -1)

    def forward(self, z, update=True):
        z = np.asarray(z, dtype=float)
        if z.ndim != 2 or z.shape[1] != LATENT_DIM:
            raise ContractViolation(f'latent must have {LATENT_DIM} columns, got shape {z.shape}')
        if self.circuit is None:
            return z
        squashed = np.tanh(z).reshape(z.shape[0], N_GROUPS, GROUP_QUBITS)
        params = self._angles(squashed)
        zeros = np.zeros((params.shape[0], GROUP_QUBITS))
        out = run_circuit_batch(self.circuit, params, zeros, self.workers).reshape(z.shape[0], LATENT_DIM)
        self._cache = (squashed, params)
        if self.norm is not None:
            out = self.norm.forward(out, update)
        return out

    def backward(self, grad_out):
        """Gradient w.r.t. z and the trainable per-round weights."""
        if self.circuit is None:
            return grad_out, {}
        if self._cache is None:
            raise ContractViolation('quantum layer backward called before forward')
        squashed, params = self._cache
        batch = squashed.shape[0]
        if self.norm is not None:
            grad_out = self.norm.backward(grad_out)
        zeros = np.zeros((params.shape[0], GROUP_QUBITS))
        jacobian = param_shift_jacobian(self.circuit, params, zeros, self.workers)
        grad_rows = grad_out.reshape(batch * N_GROUPS, GROUP_QUBITS)
        grad_angles = np.einsum('rq,rqa->ra', grad_rows, jacobian)
        dsquash = pi * (1.0 - squashed ** 2)
        if self.variant.kind == 'angle_embed':
            grad_enc = grad_angles[:, :GROUP_QUBITS].reshape(batch, N_GROUPS, GROUP_QUBITS)
            return (grad_enc * dsquash).reshape(batch, LATENT_DIM), {}
        grad_angles = grad_angles.reshape(batch, N_GROUPS, self.weights.shape[1], GROUP_QUBITS)
        grads = {
            'weights': np.einsum('bgri,bgi->gri', grad_angles, pi * squashed),
            'bias': grad_angles.sum(axis=0),
        }
        grad_z = np.einsum('bgri,gri->bgi', grad_angles, self.weights) * dsquash
        return grad_z.reshape(batch, LATENT_DIM), grads

    def parameters(self):
        if self.variant.kind != 'data_reupload':
            return {}
        return {'weights': self.weights, 'bias': self.bias}

    def state_dict(self):
        state = {'weights': self.weights.tolist(), 'bias': self.bias.tolist()}
        if self.norm is not None:
            state['norm'] = self.norm.state_dict()
        return state

    def load_state_dict(self, state):
        weights = np.asarray(state['weights'], dtype=float).reshape(self.weights.shape)
        bias = np.asarray(state['bias'], dtype=float).reshape(self.bias.shape)
        self.weights[...], self.bias[...] = weights, bias
        if self.norm is not None:
            if 'norm' not in state:
                raise ContractViolation(f'{self.variant.name} state has no running statistics')
            self.norm.load_state_dict(state['norm'])


def quantum_latent_transform(layer, z):
    """Apply a quantum layer to one latent vector (or a batch) without touching running statistics."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    out = layer.forward(z[None] if single else z, update=False)
    return out[0] if single else out


class LigandVae:
    """
    Encoder: graph one-hot -> 512 -> 128 -> (mu, logvar) of size 32.
    Decoder: 32 -> 128 -> 512 -> atom logits (32x7) + bond logits (32x32x5).
    Every dense layer is spectrally normalized; hidden layers use LeakyReLU.
    The classical weights depend only on `seed`, so all variants built with
    the same seed start from the same encoder and decoder.
    """

    def __init__(self, variant=None, seed=0, workers=1):
        self.variant = variant or QuantumLayerVariant()
        rng = np.random.default_rng(seed)
        self.encoder = mlp([N_GRAPH_FEATURES, *ENCODER_HIDDEN, 2 * LATENT_DIM], rng, spectral_norm=True)
        self.decoder = mlp([LATENT_DIM, *DECODER_HIDDEN, N_GRAPH_FEATURES], rng, spectral_norm=True)
        self.quantum = QuantumLatentLayer(self.variant, seed, workers)

    def parameters(self):
        params = {f'encoder.{k}': v for k, v in self.encoder.parameters().items()}
        params.update({f'decoder.{k}': v for k, v in self.decoder.parameters().items()})
        params.update({f'quantum.{k}': v for k, v in self.quantum.parameters().items()})
        return params

    def state_dict(self):
        return {
            'variant': self.variant.name,
            'encoder': self.encoder.state_dict(),
            'decoder': self.decoder.state_dict(),
            'quantum': self.quantum.state_dict(),
        }

    def load_state_dict(self, state):
        if state['variant'] != self.variant.name:
            raise ContractViolation(f"state is for {state['variant']!r}, model is {self.variant.name!r}")
        self.encoder.load_state_dict(state['encoder'])
        self.decoder.load_state_dict(state['decoder'])
        self.quantum.load_state_dict(state['quantum'])


def graph_features(mols):
    rows = []
    for mol in mols:
        if mol.max_atoms != MAX_ATOMS:
            raise ContractViolation(f'ligand VAE needs large-mode molecules ({MAX_ATOMS} slots), got {mol.max_atoms}')
        atoms, bonds = to_one_hot(mol, LARGE_ALPHABET)
        rows.append(np.concatenate([atoms.ravel(), bonds.ravel()]))
    return np.stack(rows)


def encode(vae, mol):
    """(mu, logvar) for a molecule or a list of molecules; logvar clamped to [-10, 10]."""
    single = not isinstance(mol, (list, tuple))
    out = vae.encoder.forward(graph_features([mol] if single else mol))
    mu, logvar = out[:, :LATENT_DIM], np.clip(out[:, LATENT_DIM:], -LOGVAR_CLAMP, LOGVAR_CLAMP)
    return (mu[0], logvar[0]) if single else (mu, logvar)


def reparameterize(mu, logvar, noise):
    mu, logvar, noise = (np.asarray(a, dtype=float) for a in (mu, logvar, noise))
    if not (mu.shape == logvar.shape == noise.shape):
        raise ContractViolation(f'shape mismatch {mu.shape} / {logvar.shape} / {noise.shape}')
    return mu + np.exp(logvar / 2.0) * noise


def decode(vae, z):
    """Atom logits (..., 32, 7) and bond logits (..., 32, 32, 5), bonds symmetrized."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    out = vae.decoder.forward(z[None] if single else z)
    batch = out.shape[0]
    split = int(np.prod(ATOM_SHAPE))
    atoms = out[:, :split].reshape(batch, *ATOM_SHAPE)
    bonds = out[:, split:].reshape(batch, *BOND_SHAPE)
    bonds = 0.5 * (bonds + bonds.transpose(0, 2, 1, 3))
    return (atoms[0], bonds[0]) if single else (atoms, bonds)


def kl_divergence(mu, logvar):
    """Per-item 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar)."""
    return 0.5 * np.sum(mu ** 2 + np.exp(logvar) - 1.0 - logvar, axis=-1)


def reconstruction_loss(atom_logits, bond_logits, atom_truth, bond_truth):
    """
    Mean atom cross-entropy plus mean cross-entropy over the upper-triangle
    bonds, per item, with gradients w.r.t. both logit tensors (batch-mean).
    """
    batch = atom_logits.shape[0]
    atom_lp = log_softmax(atom_logits)
    atom_ce = -np.sum(atom_truth * atom_lp, axis=-1).mean(axis=1)
    upper_logits = bond_logits[:, _UPPER[0], _UPPER[1]]
    upper_truth = bond_truth[:, _UPPER[0], _UPPER[1]]
    bond_ce = -np.sum(upper_truth * log_softmax(upper_logits), axis=-1).mean(axis=1)

    grad_atoms = (softmax(atom_logits) - atom_truth) / (ATOM_SHAPE[0] * batch)
    grad_upper = (softmax(upper_logits) - upper_truth) / (_UPPER[0].size * batch)
    grad_bonds = np.zeros_like(bond_logits)
    grad_bonds[:, _UPPER[0], _UPPER[1]] = grad_upper
    return atom_ce + bond_ce, grad_atoms, grad_bonds


def elbo_loss(vae, mol, noise):
    """Loss terms of one molecule (or a list) for a fixed noise draw."""
    mols = list(mol) if isinstance(mol, (list, tuple)) else [mol]
    noise = np.atleast_2d(np.asarray(noise, dtype=float))
    terms = _forward_loss(vae, graph_features(mols), noise, update=False)[0]
    return {name: float(np.mean(values)) for name, values in terms.items()}


def _forward_loss(vae, features, noise, update=True):
    encoded = vae.encoder.forward(features)
    mu, raw_logvar = encoded[:, :LATENT_DIM], encoded[:, LATENT_DIM:]
    logvar = np.clip(raw_logvar, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    z = reparameterize(mu, logvar, noise)
    q = vae.quantum.forward(z, update)
    atoms, bonds = decode(vae, q)
    split = int(np.prod(ATOM_SHAPE))
    atom_truth = features[:, :split].reshape(-1, *ATOM_SHAPE)
    bond_truth = features[:, split:].reshape(-1, *BOND_SHAPE)
    recon, grad_atoms, grad_bonds = reconstruction_loss(atoms, bonds, atom_truth, bond_truth)
    kl = kl_divergence(mu, logvar)
    terms = {'total': recon + kl, 'recon': recon, 'kl': kl}
    return terms, (mu, raw_logvar, logvar, noise, grad_atoms, grad_bonds)


def loss_and_grads(vae, features, noise, update=True):
    """Batch-mean ELBO terms and gradients for every trainable parameter of `vae`."""
    terms, (mu, raw_logvar, logvar, noise, grad_atoms, grad_bonds) = _forward_loss(vae, features, noise, update)
    batch = features.shape[0]
    grad_bonds = 0.5 * (grad_bonds + grad_bonds.transpose(0, 2, 1, 3))
    grad_out = np.concatenate([grad_atoms.reshape(batch, -1), grad_bonds.reshape(batch, -1)], axis=1)
    grads = {f'decoder.{k}': v for k, v in vae.decoder.backward(grad_out).items()}
    grad_z, quantum_grads = vae.quantum.backward(vae.decoder.input_grad)
    grads.update({f'quantum.{k}': v for k, v in quantum_grads.items()})

    scale = np.exp(logvar / 2.0)
    grad_mu = grad_z + mu / batch
    grad_logvar = grad_z * noise * 0.5 * scale + 0.5 * (np.exp(logvar) - 1.0) / batch
    grad_logvar = np.where(np.abs(raw_logvar) > LOGVAR_CLAMP, 0.0, grad_logvar)
    grads.update({
        f'encoder.{k}': v
        for k, v in vae.encoder.backward(np.concatenate([grad_mu, grad_logvar], axis=1)).items()
    })
    return {name: float(np.mean(values)) for name, values in terms.items()}, grads


@dataclass
class VaeRun:
    records: list = field(default_factory=list)
    models: dict = field(default_factory=dict)
    optimizers: dict = field(default_factory=dict)
    rng_states: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)


def train_vae_comparison(dataset, variants, epochs=100, lr=1e-3, seed=0, batch_size=32,
                         workers=1, on_epoch=None):
    """
    Train one LigandVae per variant from identical classical weights, data
    order and noise draws.

    Returns:
        VaeRun with records {variant, epoch, total, recon, kl} and the trained models
    """
    variants = [QuantumLayerVariant.from_name(v) if isinstance(v, str) else v for v in variants]
    if not variants:
        raise ContractViolation('no VAE variants requested')
    if not len(dataset):
        raise DataError('empty ligand dataset')
    features = graph_features(dataset.molecules)
    run = VaeRun(config={'epochs': epochs, 'lr': lr, 'seed': seed, 'batch_size': batch_size})
    for variant in variants:
        vae = LigandVae(variant, seed, workers)
        params = vae.parameters()
        adam = AdamState.for_params(params)
        data_rng = np.random.default_rng([seed, 1])
        for epoch in range(1, epochs + 1):
            order = data_rng.permutation(len(features))
            sums = {'total': 0.0, 'recon': 0.0, 'kl': 0.0}
            for start in range(0, order.size, batch_size):
                chunk = order[start:start + batch_size]
                noise = data_rng.standard_normal((chunk.size, LATENT_DIM))
                terms, grads = loss_and_grads(vae, features[chunk], noise)
                adam_step(adam, params, grads, lr)
                for name in sums:
                    sums[name] += terms[name] * chunk.size
            record = {'variant': variant.name, 'epoch': epoch}
            record.update({name: value / len(features) for name, value in sums.items()})
            run.records.append(record)
            logger.info(
                f"{variant.name} epoch {epoch}: total {record['total']:.4f} "
                f"recon {record['recon']:.4f} kl {record['kl']:.4f}"
            )
            if on_epoch is not None:
                on_epoch(record)
        run.models[variant.name] = vae
        run.optimizers[variant.name] = adam
        run.rng_states[variant.name] = data_rng.bit_generator.state
    return run


def sample_molecules(vae, n, seed):
    """Decode `n` draws from the standard-normal prior through the quantum layer."""
    z = np.random.default_rng(seed).standard_normal((n, LATENT_DIM))
    atoms, bonds = decode(vae, quantum_latent_transform(vae.quantum, z))
    return [decode_graph(a, b, LARGE_ALPHABET) for a, b in zip(atoms, bonds)]


def checkpoint_arrays(vae, adam):
    """Encoder/decoder weights and buffers plus the Adam moments of every parameter block."""
    arrays = {f'encoder.{k}': v for k, v in vae.encoder.state_arrays().items()}
    arrays.update({f'decoder.{k}': v for k, v in vae.decoder.state_arrays().items()})
    for name in adam.m:
        arrays[f'adam.m.{name}'] = adam.m[name]
        arrays[f'adam.v.{name}'] = adam.v[name]
    return arrays


def vae_checkpoint(run, name):
    """
    JSON part of one trained variant's checkpoint. The classical weights and
    Adam moments are too large for JSON; store `checkpoint_arrays` beside it
    and record the manifest under 'arrays'.
    """
    vae, adam = run.models[name], run.optimizers[name]
    final = [r for r in run.records if r['variant'] == name][-1]
    return {
        'format_version': CHECKPOINT_VERSION,
        'command': 'qvae train',
        'config': run.config,
        'variant': name,
        'reupload_rounds': vae.variant.reupload_rounds,
        'epoch': final['epoch'],
        'final': {key: final[key] for key in ('total', 'recon', 'kl')},
        'quantum': vae.quantum.state_dict(),
        'adam_step': adam.step,
        'rng': run.rng_states[name],
    }


def _prefixed(arrays, prefix):
    return {key[len(prefix):]: value for key, value in arrays.items() if key.startswith(prefix)}


def vae_from_checkpoint(checkpoint, arrays, workers=1):
    """Rebuild the trained LigandVae and its AdamState from a checkpoint and its arrays."""
    if checkpoint.get('format_version') != CHECKPOINT_VERSION or checkpoint.get('command') != 'qvae train':
        raise DataError('not a QVAE checkpoint')
    variant = QuantumLayerVariant.from_name(checkpoint['variant'], checkpoint['reupload_rounds'])
    vae = LigandVae(variant, checkpoint['config']['seed'], workers)
    try:
        vae.encoder.load_state_dict(_prefixed(arrays, 'encoder.'))
        vae.decoder.load_state_dict(_prefixed(arrays, 'decoder.'))
        vae.quantum.load_state_dict(checkpoint['quantum'])
    except (ContractViolation, ValueError) as exc:
        raise DataError(f'checkpoint weights do not fit the {variant.name} model: {exc}') from exc
    adam = AdamState.for_params(vae.parameters())
    adam.load_state_dict({
        'step': checkpoint['adam_step'],
        'm': _prefixed(arrays, 'adam.m.'),
        'v': _prefixed(arrays, 'adam.v.'),
    })
    return vae, adam
