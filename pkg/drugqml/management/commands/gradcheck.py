"""`gradcheck`: parameter-shift gradients against central finite differences."""

import logging
from math import pi

import numpy as np

from drugqml.cli import DrugqmlCommand
from drugqml.exceptions import NumericalError
from drugqml.qsim import build_qgan_ansatz, gradient_error
from drugqml.serializers import apply_overrides

logger = logging.getLogger(__name__)


class Command(DrugqmlCommand):
    help = 'Compare parameter-shift and finite-difference Jacobians on seeded generator circuits.'
    section = 'check'

    def add_action_arguments(self, action, parser):
        parser.add_argument('--qubits', type=int, help='qubits per circuit (overrides check.qubits)')
        parser.add_argument('--layers', type=int, help='ansatz layers (overrides check.layers)')
        parser.add_argument('--circuits', type=int, help='number of circuits (overrides check.n_circuits)')

    def handle_run(self, options, section, run):
        section = apply_overrides('check', section, {
            'qubits': options.get('qubits'),
            'layers': options.get('layers'),
            'n_circuits': options.get('circuits'),
        })
        qubits, layers, n_circuits = section['qubits'], section['layers'], section['n_circuits']
        circuit = build_qgan_ansatz(qubits, layers)

        errors = []
        for index in range(n_circuits):
            rng = np.random.default_rng([run['seed'], index])
            params = rng.uniform(-pi, pi, size=circuit.n_params)
            init_angles = rng.uniform(-pi, pi, size=(2, qubits))
            errors.append(gradient_error(circuit, params, init_angles, section['step'], run['threads']))
        worst = max(errors)
        logger.info(f'gradcheck over {n_circuits} circuits: max relative error {worst:.3e}')

        data = {
            'qubits': qubits,
            'layers': layers,
            'circuits': n_circuits,
            'n_params': circuit.n_params,
            'max_relative_error': worst,
            'tolerance': section['tolerance'],
        }
        if not worst < section['tolerance']:
            raise NumericalError(
                f"max relative error {worst:.3e} is not below {section['tolerance']:.1e}", data,
            )
        return data, f'max relative error {worst:.3e}'
