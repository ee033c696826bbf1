"""
Run artifacts: per-epoch metrics CSVs, JSON checkpoints (with .npy array
files for large weights) and SVG curves.

Everything written here is a pure function of its inputs, so reruns with the
same config and seed produce byte-identical files.
"""

import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .exceptions import ContractViolation, DataError  # noqa: E402

logger = logging.getLogger(__name__)

QGAN_COLUMNS = ('epoch', 'lr', 'fd', 'validity_fraction', 'druglike_mean', 'logp_mean', 'sa_mean', 'd_loss', 'g_loss')
QUANV_COLUMNS = ('fold', 'epoch', 'train_loss', 'val_loss', 'train_acc', 'val_acc')
QVAE_COLUMNS = ('variant', 'epoch', 'total', 'recon', 'kl')
SCHEMAS = {'qgan': QGAN_COLUMNS, 'quanv': QUANV_COLUMNS, 'qvae': QVAE_COLUMNS}

FLOAT_FORMAT = '%.9g'
# Columns that index a curve rather than being plotted as one.
KEY_COLUMNS = ('epoch', 'fold', 'variant')

matplotlib.rcParams['svg.hashsalt'] = 'drugqml'


def ensure_dir(path):
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f'cannot create output directory {path}: {exc.strerror}', {'path': str(path)}) from exc
    return path


def emit_metrics_csv(records, path, schema):
    """
    Write one row per record with the schema's fixed column order.

    Args:
        records (list[dict]): homogeneous records
        path: destination file
        schema (str): 'qgan', 'quanv' or 'qvae'

    Raises:
        ContractViolation: records whose keys differ from the schema
        DataError: unwritable destination
    """
    if schema not in SCHEMAS:
        raise ContractViolation(f'unknown metrics schema {schema!r}; expected one of {tuple(SCHEMAS)}')
    columns = list(SCHEMAS[schema])
    for index, record in enumerate(records):
        if set(record) != set(columns):
            raise ContractViolation(
                f'record {index} has keys {sorted(record)}, {schema} metrics need {columns}'
            )
    frame = pd.DataFrame(list(records), columns=columns)
    path = Path(path)
    ensure_dir(path.parent)
    try:
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    except OSError as exc:
        raise DataError(f'cannot write {path}: {exc.strerror}', {'path': str(path)}) from exc
    logger.info(f'Wrote {len(frame)} {schema} metric rows to {path}')
    return path


def read_metrics_csv(path):
    try:
        return pd.read_csv(path)
    except FileNotFoundError as exc:
        raise DataError(f'metrics file {path} does not exist', {'path': str(path)}) from exc
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f'cannot read metrics file {path}: {exc}', {'path': str(path)}) from exc


def write_json(path, document):
    """Sorted keys and a trailing newline; floats keep their full repr."""
    path = Path(path)
    ensure_dir(path.parent)
    try:
        path.write_text(json.dumps(document, sort_keys=True, allow_nan=False) + '\n')
    except OSError as exc:
        raise DataError(f'cannot write {path}: {exc.strerror}', {'path': str(path)}) from exc
    except ValueError as exc:
        raise DataError(f'{path}: document holds a non-finite number', {'path': str(path)}) from exc
    return path


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f'cannot read {path}: {exc.strerror}', {'path': str(path)}) from exc
    except json.JSONDecodeError as exc:
        raise DataError(f'{path} is not valid JSON (line {exc.lineno}: {exc.msg})', {'path': str(path)}) from exc


write_checkpoint = write_json


def read_checkpoint(path, command=None):
    checkpoint = read_json(path)
    if not isinstance(checkpoint, dict) or 'format_version' not in checkpoint:
        raise DataError(f'{path} is not a drugqml checkpoint', {'path': str(path)})
    if command is not None and checkpoint.get('command') != command:
        raise DataError(
            f"{path} was written by {checkpoint.get('command')!r}, expected {command!r}", {'path': str(path)}
        )
    return checkpoint


def write_arrays(path, arrays):
    """
    Store named float arrays as one flat .npy vector in sorted-name order.

    Returns the manifest ([name, shape] pairs) that `read_arrays` needs to
    split the vector again; the manifest belongs in the JSON checkpoint.
    """
    path = Path(path)
    ensure_dir(path.parent)
    names = sorted(arrays)
    blocks = [np.asarray(arrays[name], dtype=float).ravel() for name in names]
    flat = np.concatenate(blocks) if blocks else np.zeros(0)
    try:
        np.save(path, flat, allow_pickle=False)
    except OSError as exc:
        raise DataError(f'cannot write {path}: {exc.strerror}', {'path': str(path)}) from exc
    return [[name, list(np.shape(arrays[name]))] for name in names]


def read_arrays(path, manifest):
    try:
        flat = np.load(Path(path), allow_pickle=False)
    except OSError as exc:
        raise DataError(f'cannot read {path}: {exc}', {'path': str(path)}) from exc
    except ValueError as exc:
        raise DataError(f'{path} is not a .npy array file', {'path': str(path)}) from exc
    sizes = [int(np.prod(shape)) for _, shape in manifest]
    if flat.ndim != 1 or flat.size != sum(sizes):
        raise DataError(f'{path} holds {flat.size} values, manifest expects {sum(sizes)}', {'path': str(path)})
    arrays, offset = {}, 0
    for (name, shape), size in zip(manifest, sizes):
        arrays[name] = flat[offset:offset + size].reshape(shape)
        offset += size
    return arrays


def plot_metrics(csv_path, out_dir):
    """
    One SVG line chart per metric column of a metrics CSV, named
    `<csv stem>_<column>.svg`. Rows are grouped into one line per fold or
    variant when those columns are present.

    Returns:
        list[Path]: written files, in column order
    """
    frame = read_metrics_csv(csv_path)
    if 'epoch' not in frame.columns:
        raise DataError(f'{csv_path} has no epoch column', {'path': str(csv_path)})
    out_dir = ensure_dir(out_dir)
    group = next((name for name in ('variant', 'fold') if name in frame.columns), None)
    stem = Path(csv_path).stem
    written = []
    for column in frame.columns:
        if column in KEY_COLUMNS:
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        if group is None:
            ax.plot(frame['epoch'], frame[column], label=column)
        else:
            for key, rows in frame.groupby(group, sort=False):
                ax.plot(rows['epoch'], rows[column], label=f'{group} {key}')
            ax.legend()
        ax.set_xlabel('epoch')
        ax.set_ylabel(column)
        ax.set_title(f'{stem}: {column}')
        fig.tight_layout()
        target = out_dir / f'{stem}_{column}.svg'
        try:
            fig.savefig(target, format='svg', metadata={'Date': None})
        except OSError as exc:
            raise DataError(f'cannot write {target}: {exc.strerror}', {'path': str(target)}) from exc
        finally:
            plt.close(fig)
        written.append(target)
    logger.info(f'Plotted {len(written)} metric column(s) from {csv_path}')
    return written


def write_lines(path, lines):
    path = Path(path)
    ensure_dir(path.parent)
    try:
        path.write_text(''.join(f'{line}\n' for line in lines))
    except OSError as exc:
        raise DataError(f'cannot write {path}: {exc.strerror}', {'path': str(path)}) from exc
    return path
