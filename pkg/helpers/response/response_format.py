import json

from .code import exit_code


def _write(stream, payload):
    stream.write(json.dumps(payload, sort_keys=True, default=str) + '\n')


def success_response(stream, data=None, message='Success'):
    response_data = {'status': True, 'message': message, 'detail': message, 'data': data}
    _write(stream, response_data)
    return exit_code()['SUCCESS']


def exception_response(stream, payload):
    """Render a `command_exception_handler` payload; returns its exit code."""
    _write(stream, {'status': False, **payload})
    return payload['exit_code']
