# cli.py
"""
drugqml command-line driver.

Every subcommand is a Django management command under
drugqml/management/commands/, so the same commands run as
`python manage.py <command> ...` or through `run(argv)` here. Commands share
the `DrugqmlCommand` base: global flags, config loading, the structured
error payload on stderr and a one-line JSON result on stdout.

Exit codes: 0 success, 1 internal, 2 config, 3 data, 4 numerical.
"""

import logging
import os
import sys

from django.core.management.base import BaseCommand, CommandError

from helpers.response.code import exit_code
from helpers.response.response_format import exception_response, success_response

from .exceptions import command_exception_handler
from .serializers import load_run_config, resolve_globals

logger = logging.getLogger(__name__)

COMMANDS = {
    'qgan': 'qgan {train,sample}   train a hybrid quantum GAN / sample a checkpoint',
    'quanv': 'quanv train          quanvolution vs CNN pocket classification',
    'qvae': 'qvae train           VAE comparison across quantum latent layers',
    'dataset': 'dataset synth        write a synthetic molecule or voxel dataset',
    'fd': 'fd                   descriptor Frechet distance between two molecule files',
    'molcheck': 'molcheck             validity and property proxies as CSV',
    'gradcheck': 'gradcheck            parameter-shift vs finite-difference check',
    'plot': 'plot                 one SVG per metric column of a metrics CSV',
}

COMMON_FLAGS = '--config PATH  --seed N  --out DIR  --threads N'


def usage():
    lines = ['usage: drugqml <command> [options]', '', 'commands:']
    lines += [f'  {text}' for text in COMMANDS.values()]
    lines += ['', f'common options: {COMMON_FLAGS}']
    return '\n'.join(lines) + '\n'


def add_common_arguments(parser):
    parser.add_argument('--config', help='JSON run configuration')
    parser.add_argument('--seed', type=int, help='global seed (default: config, then DRUGQML_SEED)')
    parser.add_argument('--out', help='output directory (default: config, then DRUGQML_OUTPUT_DIR)')
    parser.add_argument('--threads', type=int, help='worker cap (default: config, then DRUGQML_THREADS)')


class DrugqmlCommand(BaseCommand):
    """
    Base for drugqml commands.

    Subclasses set `section` (the config section they read) and either
    `actions` (subcommand names, dispatched to `handle_<action>`) or
    implement `handle_run`. Handlers receive (options, section, run) and
    return (data, message) for the success payload.
    """

    requires_system_checks = []
    section = None
    actions = ()
    result_stream = 'stdout'

    def add_arguments(self, parser):
        if not self.actions:
            add_common_arguments(parser)
            self.add_action_arguments('run', parser)
            return
        subparsers = parser.add_subparsers(dest='action', required=True)
        for action in self.actions:
            subparser = subparsers.add_parser(action)
            add_common_arguments(subparser)
            self.add_action_arguments(action, subparser)

    def add_action_arguments(self, action, parser):
        pass

    def handle(self, *args, **options):
        action = options.get('action') or 'run'
        context = {'command': self.command_name, 'action': action}
        self.stderr.style_func = None
        try:
            config = load_run_config(options.get('config'))
            run = resolve_globals(config, options.get('seed'), options.get('out'), options.get('threads'))
            section = dict(config[self.section]) if self.section else {}
            logger.info(f"Running {self.command_name} {action} with seed {run['seed']}")
            data, message = getattr(self, f'handle_{action}')(options, section, run)
        except CommandError:
            raise
        except Exception as exc:
            payload, error = command_exception_handler(exc, context)
            exception_response(self.stderr, payload)
            error.reported = True
            raise error from exc
        success_response(getattr(self, self.result_stream), data, message)

    @property
    def command_name(self):
        return self.__module__.rsplit('.', 1)[-1]


def _setup_django():
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'backend.settings')
    import django
    from django.apps import apps

    if not apps.ready:
        django.setup()


def run(argv=None, stdout=None, stderr=None):
    """
    Run one drugqml command.

    Args:
        argv (list[str]): command name followed by its arguments
        stdout, stderr: text streams (default: the process streams)

    Returns:
        int: process exit code
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    if not argv or argv[0] not in COMMANDS:
        if argv:
            stderr.write(f'unknown command {argv[0]!r}\n')
        stderr.write(usage())
        return exit_code()['CONFIG']

    _setup_django()
    from django.core.management import call_command

    try:
        call_command(argv[0], *argv[1:], stdout=stdout, stderr=stderr)
    except CommandError as exc:
        if getattr(exc, 'reported', False):
            return exc.returncode
        # argparse rejected the flags
        stderr.write(f'{exc}\n')
        stderr.write(usage())
        return exit_code()['CONFIG']
    return exit_code()['SUCCESS']


def main():
    sys.exit(run())


if __name__ == '__main__':
    main()
