"""
Exceptions and command error handling for drugqml.

This module defines the error hierarchy shared by the numerical core and the
management commands, and the handler that turns those errors into structured
payloads and process exit codes.

Exit codes:
    0: success
    2: configuration error (bad flags, unknown config keys, out-of-range values)
    3: data error (unreadable or malformed inputs, unwritable outputs)
    4: numerical failure (NaN/Inf values, statevector norm drift)
"""

import logging

from helpers.response.code import exit_code

logger = logging.getLogger(__name__)


class DrugQmlError(Exception):
    """Base class for every error raised on purpose by drugqml."""

    group = 'INTERNAL'

    def __init__(self, message, details=None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    @property
    def exit_code(self):
        return exit_code()[self.group]


class ConfigError(DrugQmlError):
    group = 'CONFIG'


class DataError(DrugQmlError):
    group = 'DATA'


class MoleculeParseError(DataError):
    """Malformed molecule file; `line` is 1-based."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f'line {line}: {message}'
        super().__init__(message, {'line': line})
        self.line = line


class NumericalError(DrugQmlError):
    group = 'NUMERICAL'


class ContractViolation(ValueError):
    """A precondition of a numerical operation does not hold."""


def command_exception_handler(exc, context=None):
    """
    Convert an exception raised inside a management command into a
    structured error payload and a CommandError carrying the exit code.

    Args:
        exc: The exception instance
        context: Optional dict with 'command' and 'action' keys

    Returns:
        tuple: (payload dict, CommandError)
    """
    from django.core.management.base import CommandError

    payload = {
        'error': True,
        'message': 'An error occurred while running the command.',
        'details': {},
        'exit_code': exit_code()['INTERNAL'],
    }

    if isinstance(exc, ConfigError):
        payload['message'] = f'Configuration rejected: {exc.message}'
        payload['details'].update(exc.details)
        payload['details']['suggestions'] = [
            'Check the key names against the documented config sections.',
            'Values must be JSON numbers/strings of the documented type and range.',
        ]
    elif isinstance(exc, DataError):
        payload['message'] = f'Input or output data problem: {exc.message}'
        payload['details'].update(exc.details)
        payload['details']['suggestions'] = [
            'Verify that the input file exists and matches the documented format.',
            'Make sure the output directory is writable.',
        ]
    elif isinstance(exc, NumericalError):
        payload['message'] = f'Numerical failure: {exc.message}'
        payload['details'].update(exc.details)
        payload['details']['suggestions'] = [
            'Lower the learning rate or batch size.',
            'Rerun with the same seed and LOG_LEVEL=DEBUG to locate the first bad epoch.',
        ]
    elif isinstance(exc, ContractViolation):
        payload['message'] = f'Invalid arguments: {exc}'
        payload['exit_code'] = exit_code()['CONFIG']
    elif isinstance(exc, (FloatingPointError, OverflowError)):
        payload['message'] = f'Numerical failure: {exc}'
        payload['exit_code'] = exit_code()['NUMERICAL']
    else:
        payload['message'] = f'Unexpected failure: {exc}'
        logger.error(f"Unhandled error: {exc}", exc_info=True)

    if isinstance(exc, DrugQmlError):
        payload['exit_code'] = exc.exit_code

    if context:
        payload['details']['command'] = {
            'name': context.get('command'),
            'action': context.get('action'),
        }

    return payload, CommandError(payload['message'], returncode=payload['exit_code'])


def handle_unknown_keys_error(unknown_keys, section=""):
    """
    Build the ConfigError raised when a config section contains keys that
    are not part of its schema.

    Args:
        unknown_keys (list): Offending key names
        section (str): Config section the keys were found in

    Returns:
        ConfigError
    """
    keys = sorted(unknown_keys)
    where = f' in section "{section}"' if section else ''
    return ConfigError(
        f'unknown key{"s" if len(keys) > 1 else ""} {", ".join(repr(k) for k in keys)}{where}',
        {'unknown_keys': keys, 'section': section or None},
    )
