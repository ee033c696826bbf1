"""
Quantum GAN with a hybrid generator (QGAN-HG) for small-molecule graphs.

The generator runs a parameterized circuit on random initialization angles,
feeds the Z expectations through a classical head, and emits atom and bond
logits that decode into a MoleculeGraph. A classical critic is trained with
the WGAN gradient-penalty objective. Generator circuit gradients come from
the parameter-shift Jacobian chained with head backpropagation.

Generator kinds:
    quantum: one circuit over all qubits
    patched: `n_patches` independent sub-circuits
    classical: Gaussian noise straight into the head (MolGAN-style baseline)
"""

import logging
from dataclasses import asdict, dataclass, field
from math import pi

import numpy as np

from .exceptions import ConfigError, ContractViolation, DataError
from .metrics import descriptor_fd
from .molgraph import (
    N_BOND_KINDS,
    decode_graph,
    get_alphabet,
    is_valid,
    molecule_to_record,
    property_scores,
    to_one_hot,
    to_smiles,
)
from .nn import AdamState, adam_step, add_grads, mlp, softmax, softmax_backward
from .qsim import build_patched_ansatz, build_qgan_ansatz, circuit_from_dict, param_shift_jacobian, run_circuit_batch

logger = logging.getLogger(__name__)

GENERATOR_KINDS = ('quantum', 'patched', 'classical')
CHECKPOINT_VERSION = 1
FD_SAMPLE_MAX = 256
BASELINE_HIDDEN = (128, 256, 512)
BASELINE_Z_DIM = 32
CRITIC_HIDDEN = (128, 64)


@dataclass
class GeneratorSpec:
    kind: str = 'quantum'
    n_qubits: int = 8
    n_layers: int = 1
    n_patches: int = 2
    z_dim: int = BASELINE_Z_DIM
    hidden: tuple = (64, 128)
    mode: str = 'small'

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise ContractViolation(f'unknown generator kind {self.kind!r}; expected one of {GENERATOR_KINDS}')
        self.hidden = tuple(int(h) for h in self.hidden)
        get_alphabet(self.mode)

    def to_dict(self):
        data = asdict(self)
        data['hidden'] = list(self.hidden)
        return data


@dataclass
class GanTrainConfig:
    lr0: float = 1e-4
    decay_start: int = 3000
    decay_span: int = 2000
    max_epochs: int = 5000
    batch_size: int = 32
    gp_lambda: float = 10.0
    n_critic: int = 5
    fd_patience: int = 500
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        for name in ('lr0', 'decay_span', 'max_epochs', 'batch_size', 'n_critic', 'fd_patience', 'threads'):
            if getattr(self, name) <= 0:
                raise ContractViolation(f'{name} must be positive, got {getattr(self, name)}')
        if self.gp_lambda < 0 or self.decay_start < 0:
            raise ContractViolation('gp_lambda and decay_start must be non-negative')

    def to_dict(self):
        return asdict(self)


def lr_schedule(cfg, epoch):
    """Constant lr0 until decay_start, then linear decay to 0 over decay_span epochs."""
    if epoch < cfg.decay_start:
        return cfg.lr0
    return max(cfg.lr0 * (1.0 - (epoch - cfg.decay_start) / cfg.decay_span), 0.0)


class HybridGenerator:
    def __init__(self, spec, rng=None, workers=1):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = spec
        self.workers = workers
        self.alphabet = get_alphabet(spec.mode)
        n = self.alphabet.max_atoms
        self.atom_shape = (n, len(self.alphabet))
        self.bond_shape = (n, n, N_BOND_KINDS)
        self.n_outputs = int(np.prod(self.atom_shape) + np.prod(self.bond_shape))
        if spec.kind == 'classical':
            self.circuit = None
            self.theta = np.zeros(0)
            n_inputs = spec.z_dim
        else:
            if spec.kind == 'quantum':
                self.circuit = build_qgan_ansatz(spec.n_qubits, spec.n_layers)
            else:
                self.circuit = build_patched_ansatz(spec.n_qubits, spec.n_patches, spec.n_layers)
            self.theta = rng.uniform(-pi, pi, size=self.circuit.n_params)
            n_inputs = spec.n_qubits
        self.head = mlp([n_inputs, *spec.hidden, self.n_outputs], rng)
        self._cache = None

    @property
    def quantum(self):
        return self.circuit is not None

    def sample_noise(self, batch, rng):
        if batch < 1:
            raise ContractViolation(f'batch must be >= 1, got {batch}')
        if self.quantum:
            return rng.uniform(-pi, pi, size=(batch, self.spec.n_qubits))
        return rng.standard_normal((batch, self.spec.z_dim))

    def features(self, noise):
        if not self.quantum:
            return np.asarray(noise, dtype=float)
        return run_circuit_batch(self.circuit, self.theta, noise, self.workers)

    def logits(self, noise):
        """Atom logits (B, n, |A|) and symmetrized bond logits (B, n, n, |B|)."""
        out = self.head.forward(self.features(noise))
        batch = out.shape[0]
        split = int(np.prod(self.atom_shape))
        atoms = out[:, :split].reshape(batch, *self.atom_shape)
        bonds = out[:, split:].reshape(batch, *self.bond_shape)
        bonds = 0.5 * (bonds + bonds.transpose(0, 2, 1, 3))
        return atoms, bonds

    def relaxed(self, noise):
        """Softmax-relaxed graph vectors (B, F); the bond diagonal is pinned to 'no bond'."""
        atoms, bonds = self.logits(noise)
        atom_probs = softmax(atoms)
        bond_probs = softmax(bonds)
        diag = np.arange(self.bond_shape[0])
        bond_probs[:, diag, diag, :] = np.eye(N_BOND_KINDS)[0]
        self._cache = (np.asarray(noise, dtype=float), atom_probs, bond_probs)
        return np.concatenate([atom_probs.reshape(len(atoms), -1), bond_probs.reshape(len(atoms), -1)], axis=1)

    def backward(self, grad_relaxed):
        """Parameter gradients (keys as in `parameters()`) from d(loss)/d(relaxed)."""
        if self._cache is None:
            raise ContractViolation('generator backward called before relaxed()')
        noise, atom_probs, bond_probs = self._cache
        batch = grad_relaxed.shape[0]
        split = int(np.prod(self.atom_shape))
        grad_atoms = softmax_backward(atom_probs, grad_relaxed[:, :split].reshape(batch, *self.atom_shape))
        grad_bond_probs = grad_relaxed[:, split:].reshape(batch, *self.bond_shape).copy()
        diag = np.arange(self.bond_shape[0])
        grad_bond_probs[:, diag, diag, :] = 0.0
        grad_sym = softmax_backward(bond_probs, grad_bond_probs)
        grad_bonds = 0.5 * (grad_sym + grad_sym.transpose(0, 2, 1, 3))
        grad_out = np.concatenate([grad_atoms.reshape(batch, -1), grad_bonds.reshape(batch, -1)], axis=1)
        grads = {f'head.{name}': value for name, value in self.head.backward(grad_out).items()}
        if self.quantum:
            jacobian = param_shift_jacobian(self.circuit, self.theta, noise, self.workers)
            grads['theta'] = np.einsum('bn,bnp->p', self.head.input_grad, jacobian)
        return grads

    def parameters(self):
        params = {f'head.{name}': value for name, value in self.head.parameters().items()}
        if self.quantum:
            params['theta'] = self.theta
        return params

    def state_dict(self):
        return {'theta': self.theta.tolist(), 'head': self.head.state_dict()}

    def load_state_dict(self, state):
        theta = np.asarray(state['theta'], dtype=float)
        if theta.shape != self.theta.shape:
            raise ContractViolation(f'theta shape {theta.shape} != {self.theta.shape}')
        self.theta[...] = theta
        self.head.load_state_dict(state['head'])

    def decode(self, atom_logits, bond_logits):
        return [decode_graph(a, b, self.alphabet) for a, b in zip(atom_logits, bond_logits)]


def generate_batch(gen, batch, rng_seed):
    """Decode `batch` molecules; returns (molecules, atom logits, bond logits)."""
    rng = np.random.default_rng(rng_seed)
    atoms, bonds = gen.logits(gen.sample_noise(batch, rng))
    return gen.decode(atoms, bonds), atoms, bonds


def build_critic(n_features, rng):
    return mlp([n_features, *CRITIC_HIDDEN, 1], rng)


def graph_vectors(mols, alphabet):
    rows = []
    for mol in mols:
        atoms, bonds = to_one_hot(mol, alphabet)
        rows.append(np.concatenate([atoms.ravel(), bonds.ravel()]))
    return np.stack(rows)


def critic_update(d, real, fake, gp_lambda, rng):
    """
    WGAN-GP critic losses and their parameter gradients.

    Returns:
        tuple: ({d_loss, g_loss, gp}, gradient dict of d_loss)
    """
    real = np.asarray(real, dtype=float)
    fake = np.asarray(fake, dtype=float)
    if real.shape != fake.shape:
        raise ContractViolation(f'real batch {real.shape} and fake batch {fake.shape} differ')
    batch = real.shape[0]
    real_score = d.forward(real)
    grads_real = d.backward(np.full((batch, 1), -1.0 / batch))
    fake_score = d.forward(fake)
    grads_fake = d.backward(np.full((batch, 1), 1.0 / batch))
    eps = rng.uniform(0.0, 1.0, size=(batch, 1))
    mixed = eps * real + (1.0 - eps) * fake
    _, _, gp, grads_gp = d.gradient_penalty(mixed)
    losses = {
        'd_loss': float(fake_score.mean() - real_score.mean() + gp_lambda * gp),
        'g_loss': float(-fake_score.mean()),
        'gp': gp,
    }
    grads_gp = {name: gp_lambda * value for name, value in grads_gp.items()}
    return losses, add_grads(grads_real, grads_fake, grads_gp)


def wgan_losses(d, real_batch, fake_batch, gp_lambda, rng_seed):
    losses, _ = critic_update(d, real_batch, fake_batch, gp_lambda, np.random.default_rng(rng_seed))
    return losses


def generator_update(gen, d, noise):
    """g_loss = -mean D(relaxed fake) and its gradients w.r.t. generator parameters."""
    fake = gen.relaxed(noise)
    score = d.forward(fake)
    d.backward(np.full((fake.shape[0], 1), -1.0 / fake.shape[0]))
    return float(-score.mean()), gen.backward(d.input_grad)


def _dense_params(sizes):
    return sum(n_in * n_out + n_out for n_in, n_out in zip(sizes[:-1], sizes[1:]))


def count_generator_params(gen):
    quantum = int(gen.theta.size)
    classical = gen.head.n_parameters()
    baseline = _dense_params([BASELINE_Z_DIM, *BASELINE_HIDDEN, gen.n_outputs])
    return {
        'quantum': quantum,
        'classical': classical,
        'baseline_total': baseline,
        'reduction': 1.0 - (quantum + classical) / baseline,
    }


def _epoch_metrics(gen, dataset, seed, epoch):
    rng = np.random.default_rng([seed, epoch, 1])
    size = min(FD_SAMPLE_MAX, len(dataset))
    real = [dataset.molecules[i] for i in rng.choice(len(dataset), size=size, replace=False)]
    fake, _, _ = generate_batch(gen, size, rng.integers(2 ** 63))
    scores = [property_scores(mol) for mol in fake]
    return {
        'fd': descriptor_fd(real, fake) if size >= 2 else 0.0,
        'validity_fraction': float(np.mean([bool(is_valid(mol)) for mol in fake])),
        'druglike_mean': float(np.mean([s.druglike_proxy for s in scores])),
        'logp_mean': float(np.mean([s.logp_proxy for s in scores])),
        'sa_mean': float(np.mean([s.sa_proxy for s in scores])),
    }


@dataclass
class QganRun:
    records: list = field(default_factory=list)
    checkpoint: dict = None
    stop_reason: str = 'max_epochs'
    initial_fd: float = None


def _build(cfg, gen_spec):
    rng = np.random.default_rng(cfg.seed)
    gen = HybridGenerator(gen_spec, rng, workers=cfg.threads)
    n_features = int(np.prod(gen.atom_shape) + np.prod(gen.bond_shape))
    critic = build_critic(n_features, rng)
    return rng, gen, critic


def train_qgan(cfg, dataset, gen_spec, resume=None, on_epoch=None):
    """
    Train a QGAN-HG (or the classical baseline) with WGAN-GP.

    Each epoch runs `n_critic` critic steps and one generator step, then
    measures the descriptor FD between min(256, len(dataset)) real molecules
    and as many generated ones. Training stops when FD has not improved for
    `fd_patience` epochs.

    Args:
        cfg (GanTrainConfig): schedule, batch and seed
        dataset: MoleculeDataset in the generator's mode
        gen_spec (GeneratorSpec): generator kind and circuit shape
        resume (dict): checkpoint to continue from
        on_epoch: optional callback receiving each record

    Returns:
        QganRun
    """
    if not len(dataset):
        raise DataError('empty molecule dataset')
    if len(dataset) < cfg.batch_size:
        raise DataError(
            f'dataset has {len(dataset)} molecules, fewer than batch_size={cfg.batch_size}; reduce batch_size',
            {'dataset_size': len(dataset), 'batch_size': cfg.batch_size},
        )
    if dataset.alphabet != get_alphabet(gen_spec.mode):
        raise ConfigError(f'dataset mode {dataset.mode!r} does not match generator mode {gen_spec.mode!r}')

    rng, gen, critic = _build(cfg, gen_spec)
    g_params, d_params = gen.parameters(), critic.parameters()
    g_adam, d_adam = AdamState.for_params(g_params), AdamState.for_params(d_params)
    real_vectors = graph_vectors(dataset.molecules, dataset.alphabet)

    run = QganRun()
    start, best_fd, best_epoch, best_state, patience = 1, np.inf, 0, None, 0
    if resume is not None:
        latest = resume['latest']
        gen.load_state_dict(latest['generator'])
        critic.load_state_dict(latest['discriminator'])
        g_adam.load_state_dict(latest['adam_generator'])
        d_adam.load_state_dict(latest['adam_discriminator'])
        rng.bit_generator.state = latest['rng']
        start = int(resume['epoch']) + 1
        best = resume['best']
        best_fd = np.inf if best['fd'] is None else best['fd']
        best_epoch, best_state = best['epoch'], best['generator']
        patience = int(resume['patience'])
        run.initial_fd = resume.get('initial_fd')
        logger.info(f'Resuming QGAN training at epoch {start}')
    else:
        run.initial_fd = _epoch_metrics(gen, dataset, cfg.seed, 0)['fd']
        logger.info(f'Initial FD {run.initial_fd:.6f}')

    epoch = start - 1
    for epoch in range(start, cfg.max_epochs + 1):
        lr = lr_schedule(cfg, epoch)
        for _ in range(cfg.n_critic):
            idx = rng.choice(len(dataset), size=cfg.batch_size, replace=False)
            fake = gen.relaxed(gen.sample_noise(cfg.batch_size, rng))
            losses, grads = critic_update(critic, real_vectors[idx], fake, cfg.gp_lambda, rng)
            adam_step(d_adam, d_params, grads, lr)
        g_loss, g_grads = generator_update(gen, critic, gen.sample_noise(cfg.batch_size, rng))
        adam_step(g_adam, g_params, g_grads, lr)

        record = {'epoch': epoch, 'lr': lr}
        record.update(_epoch_metrics(gen, dataset, cfg.seed, epoch))
        record.update({'d_loss': losses['d_loss'], 'g_loss': g_loss})
        run.records.append(record)
        logger.info(
            f"epoch {epoch}: fd {record['fd']:.6f} validity {record['validity_fraction']:.3f} "
            f"d_loss {record['d_loss']:.4f} g_loss {record['g_loss']:.4f}"
        )
        if on_epoch is not None:
            on_epoch(record)

        if record['fd'] < best_fd:
            best_fd, best_epoch, best_state, patience = record['fd'], epoch, gen.state_dict(), 0
        else:
            patience += 1
            if patience >= cfg.fd_patience:
                run.stop_reason = 'early_stop_fd'
                logger.info(f'FD has not improved for {patience} epochs; stopping at epoch {epoch}')
                break

    run.checkpoint = {
        'format_version': CHECKPOINT_VERSION,
        'command': 'qgan train',
        'config': cfg.to_dict(),
        'generator_spec': gen_spec.to_dict(),
        'circuit': gen.circuit.to_dict() if gen.quantum else None,
        'epoch': epoch,
        'initial_fd': run.initial_fd,
        'patience': patience,
        'stop_reason': run.stop_reason,
        'latest': {
            'generator': gen.state_dict(),
            'discriminator': critic.state_dict(),
            'adam_generator': g_adam.state_dict(),
            'adam_discriminator': d_adam.state_dict(),
            'rng': rng.bit_generator.state,
        },
        'best': {'epoch': best_epoch, 'fd': float(best_fd) if np.isfinite(best_fd) else None, 'generator': best_state},
    }
    return run


def generator_from_checkpoint(checkpoint, which='best', workers=1):
    if checkpoint.get('format_version') != CHECKPOINT_VERSION or checkpoint.get('command') != 'qgan train':
        raise DataError('not a QGAN checkpoint')
    spec = GeneratorSpec(**checkpoint['generator_spec'])
    gen = HybridGenerator(spec, workers=workers)
    if checkpoint.get('circuit') is not None and circuit_from_dict(checkpoint['circuit']) != gen.circuit:
        raise DataError('checkpoint circuit does not match its generator spec')
    state = checkpoint['best']['generator'] if which == 'best' else None
    gen.load_state_dict(state if state is not None else checkpoint['latest']['generator'])
    return gen


def sample_molecules(checkpoint, n, seed, workers=1):
    """Decode `n` molecules from a checkpoint's best generator, with SMILES and proxies."""
    gen = generator_from_checkpoint(checkpoint, workers=workers)
    mols, _, _ = generate_batch(gen, n, seed)
    rows = []
    for mol in mols:
        validity = is_valid(mol)
        rows.append(molecule_to_record(
            mol,
            valid=validity.valid,
            reason=validity.reason,
            smiles=to_smiles(mol) if validity else None,
            **property_scores(mol).to_dict(),
        ))
    return rows
