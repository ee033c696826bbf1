# serializers.py
"""
Serializers for drugqml run configurations.

A run configuration is one JSON document with global keys (seed, output_dir,
threads) and one optional section per command family. Every serializer is
strict: a key that is not declared is rejected with a ConfigError naming it,
so a typo such as "learningrate" never silently falls back to a default.

Serializers included:
- QganSectionSerializer: generator, schedule and data options for `qgan`
- QuanvSectionSerializer: pipelines, folds and voxel data for `quanv`
- QvaeSectionSerializer: variants and ligand data for `qvae`
- DatasetSectionSerializer: synthetic dataset options for `dataset synth`
- CheckSectionSerializer: `gradcheck` circuit sizes and tolerance
- RunConfigSerializer: the whole document
"""

import json
import logging
from pathlib import Path

from django.conf import settings
from rest_framework import serializers

from .exceptions import ConfigError, DataError, handle_unknown_keys_error
from .molgraph import ALPHABETS
from .qgan import GENERATOR_KINDS
from .qsim import MAX_QUBITS
from .quanv import VARIANTS as PIPELINE_VARIANTS

logger = logging.getLogger(__name__)

VAE_VARIANTS = ('classical_none', 'angle_embed', 'data_reupload', 'data_reupload_norm', 'angle_embed_norm')
DATASET_KINDS = ('molecules', 'voxels', 'ligands')


class StrictSerializer(serializers.Serializer):
    """
    Serializer that rejects undeclared keys instead of ignoring them.
    """

    def to_internal_value(self, data):
        if not isinstance(data, dict):
            raise serializers.ValidationError({'non_field_errors': 'Expected a JSON object.'})
        unknown = set(data) - set(self.fields)
        if unknown:
            raise handle_unknown_keys_error(unknown, self.field_name or '')
        return super().to_internal_value(data)


class QganSectionSerializer(StrictSerializer):
    """
    Options of `qgan train` / `qgan sample`.

    Example:
    {
        "kind": "patched",
        "n_qubits": 8,
        "n_patches": 4,
        "max_epochs": 500,
        "fd_patience": 100
    }
    """

    kind = serializers.ChoiceField(choices=GENERATOR_KINDS, default='quantum')
    n_qubits = serializers.IntegerField(min_value=2, max_value=MAX_QUBITS, default=8)
    n_layers = serializers.IntegerField(min_value=1, default=1)
    n_patches = serializers.IntegerField(min_value=1, default=2)
    z_dim = serializers.IntegerField(min_value=1, default=32)
    hidden = serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=1, default=[64, 128])
    mode = serializers.ChoiceField(choices=sorted(ALPHABETS), default='small')
    lr0 = serializers.FloatField(min_value=0.0, default=1e-4)
    decay_start = serializers.IntegerField(min_value=0, default=3000)
    decay_span = serializers.IntegerField(min_value=1, default=2000)
    max_epochs = serializers.IntegerField(min_value=1, default=5000)
    batch_size = serializers.IntegerField(min_value=1, default=32)
    gp_lambda = serializers.FloatField(min_value=0.0, default=10.0)
    n_critic = serializers.IntegerField(min_value=1, default=5)
    fd_patience = serializers.IntegerField(min_value=1, default=500)
    data = serializers.CharField(required=False)
    data_format = serializers.ChoiceField(choices=('jsonl', 'sdf'), default='jsonl')
    enumerate_max_atoms = serializers.IntegerField(min_value=1, max_value=4, default=4)
    n_samples = serializers.IntegerField(min_value=1, default=64)

    def validate(self, attrs):
        """
        Check that a patched generator splits its qubits evenly.

        Raises:
            ValidationError: If n_qubits is not a multiple of n_patches
        """
        if attrs.get('kind') == 'patched' and attrs['n_qubits'] % attrs['n_patches']:
            raise serializers.ValidationError({
                'n_patches': f"{attrs['n_qubits']} qubits cannot be split into {attrs['n_patches']} equal patches."
            })
        return attrs


class QuanvSectionSerializer(StrictSerializer):
    variants = serializers.ListField(
        child=serializers.ChoiceField(choices=PIPELINE_VARIANTS), min_length=1, default=list(PIPELINE_VARIANTS),
    )
    folds = serializers.IntegerField(min_value=2, default=2)
    epochs = serializers.IntegerField(min_value=1, default=50)
    batch_size = serializers.IntegerField(min_value=1, default=32)
    lr = serializers.FloatField(min_value=0.0, default=1e-5)
    data = serializers.CharField(required=False)
    n_per_class = serializers.IntegerField(min_value=1, default=50)
    channels = serializers.IntegerField(min_value=2, default=8)
    dim = serializers.IntegerField(min_value=4, default=16)
    extractor_seed = serializers.IntegerField(min_value=0, required=False)
    filter_depth = serializers.IntegerField(min_value=1, default=2)

    def validate(self, attrs):
        if attrs['channels'] % 2 or attrs['dim'] % 4:
            raise serializers.ValidationError({
                'non_field_errors': 'channels must be even and dim a multiple of 4.'
            })
        return attrs


class QvaeSectionSerializer(StrictSerializer):
    variants = serializers.ListField(
        child=serializers.ChoiceField(choices=VAE_VARIANTS), min_length=1,
        default=['classical_none', 'angle_embed', 'data_reupload', 'data_reupload_norm'],
    )
    epochs = serializers.IntegerField(min_value=1, default=100)
    lr = serializers.FloatField(min_value=0.0, default=1e-3)
    batch_size = serializers.IntegerField(min_value=1, default=32)
    reupload_rounds = serializers.IntegerField(min_value=1, default=4)
    data = serializers.CharField(required=False)
    n_molecules = serializers.IntegerField(min_value=1, default=200)
    n_samples = serializers.IntegerField(min_value=1, default=64)


class DatasetSectionSerializer(StrictSerializer):
    kind = serializers.ChoiceField(choices=DATASET_KINDS, default='molecules')
    max_atoms = serializers.IntegerField(min_value=1, max_value=4, default=4)
    n = serializers.IntegerField(min_value=1, default=200)
    n_per_class = serializers.IntegerField(min_value=1, default=50)
    channels = serializers.IntegerField(min_value=2, default=8)
    dim = serializers.IntegerField(min_value=4, default=16)


class CheckSectionSerializer(StrictSerializer):
    qubits = serializers.IntegerField(min_value=2, max_value=MAX_QUBITS, default=4)
    layers = serializers.IntegerField(min_value=1, default=2)
    n_circuits = serializers.IntegerField(min_value=1, default=20)
    step = serializers.FloatField(min_value=1e-9, default=1e-5)
    tolerance = serializers.FloatField(min_value=0.0, default=1e-5)


class RunConfigSerializer(StrictSerializer):
    """
    The complete run configuration document.

    Example:
    {
        "seed": 7,
        "output_dir": "runs/qgan-p4",
        "threads": 4,
        "qgan": {"kind": "patched", "n_patches": 4}
    }
    """

    seed = serializers.IntegerField(min_value=0, required=False)
    output_dir = serializers.CharField(required=False)
    threads = serializers.IntegerField(min_value=1, required=False)
    qgan = QganSectionSerializer(required=False)
    quanv = QuanvSectionSerializer(required=False)
    qvae = QvaeSectionSerializer(required=False)
    dataset = DatasetSectionSerializer(required=False)
    check = CheckSectionSerializer(required=False)


SECTION_SERIALIZERS = {
    'qgan': QganSectionSerializer,
    'quanv': QuanvSectionSerializer,
    'qvae': QvaeSectionSerializer,
    'dataset': DatasetSectionSerializer,
    'check': CheckSectionSerializer,
}


def _flatten_errors(errors, prefix=''):
    flat = {}
    for key, value in errors.items():
        name = f'{prefix}{key}'
        if isinstance(value, dict):
            flat.update(_flatten_errors(value, f'{name}.'))
        else:
            flat[name] = [str(item) for item in value] if isinstance(value, list) else [str(value)]
    return flat


def validate_run_config(document):
    """
    Validate a parsed configuration document.

    Returns:
        dict: validated globals plus one fully defaulted dict per section

    Raises:
        ConfigError: unknown keys or invalid values
    """
    serializer = RunConfigSerializer(data=document)
    if not serializer.is_valid():
        errors = _flatten_errors(serializer.errors)
        first = next(iter(errors))
        raise ConfigError(f'{first}: {errors[first][0]}', {'errors': errors})
    config = dict(serializer.validated_data)
    for section, section_serializer in SECTION_SERIALIZERS.items():
        if section not in config:
            defaults = section_serializer(data={})
            defaults.is_valid(raise_exception=False)
            config[section] = dict(defaults.validated_data)
        else:
            config[section] = dict(config[section])
    return config


def apply_overrides(name, section, overrides):
    """
    Merge command-line values into a validated section and validate again,
    so a flag is held to the same ranges as its config key. None means the
    flag was not given.
    """
    merged = {**section, **{key: value for key, value in overrides.items() if value is not None}}
    serializer = SECTION_SERIALIZERS[name](data=merged)
    if not serializer.is_valid():
        errors = _flatten_errors(serializer.errors, f'{name}.')
        first = next(iter(errors))
        raise ConfigError(f'{first}: {errors[first][0]}', {'errors': errors})
    return dict(serializer.validated_data)


def load_run_config(path=None):
    """Read and validate a JSON configuration file; no path means all defaults."""
    if path is None:
        return validate_run_config({})
    try:
        document = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f'cannot read config {path}: {exc.strerror}', {'path': str(path)}) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f'config {path} is not valid JSON (line {exc.lineno}: {exc.msg})') from exc
    logger.debug(f'Loaded run config from {path}')
    return validate_run_config(document)


def resolve_globals(config, seed=None, output_dir=None, threads=None):
    """Flag > config file > environment (settings) > built-in default."""

    def pick(flag, key, fallback):
        if flag is not None:
            return flag
        if config.get(key) is not None:
            return config[key]
        return fallback

    resolved = {
        'seed': int(pick(seed, 'seed', settings.DRUGQML_SEED)),
        'output_dir': Path(pick(output_dir, 'output_dir', settings.DRUGQML_OUTPUT_DIR)),
        'threads': int(pick(threads, 'threads', settings.DRUGQML_THREADS)),
    }
    if resolved['threads'] < 1:
        raise ConfigError(f"threads must be >= 1, got {resolved['threads']}")
    if resolved['seed'] < 0:
        raise ConfigError(f"seed must be >= 0, got {resolved['seed']}")
    return resolved
