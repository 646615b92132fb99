""" nsiss check|simulate|compose|lmi|flower|closed-loop <scenario> [--out DIR] [--seed N]

Exit codes: 0 when every check passes, 1 when checks ran and failed, 2 on input, schema or computation errors.
"""

import argparse
import logging
import os
import sys
import numpy as np

from . import scenario as scenarios
from .errors import NsissError, SchemaError, IoError

logger = logging.getLogger(__name__)

COMMANDS = dict(check='check', simulate='simulate', compose='compose', lmi='lmi', flower='flower',
                **{'closed-loop': 'closed_loop'})


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def _encode(obj):
    if isinstance(obj, dict):
        return '{' + ','.join('"{}":{}'.format(k.replace('\\', '\\\\').replace('"', '\\"'), _encode(obj[k]))
                              for k in sorted(obj)) + '}'
    if isinstance(obj, list):
        return '[' + ','.join(_encode(v) for v in obj) + ']'
    if obj is None:
        return 'null'
    if isinstance(obj, bool):
        return 'true' if obj else 'false'
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        if np.isnan(obj):
            return '"nan"'
        if np.isinf(obj):
            return '"inf"' if obj > 0 else '"-inf"'
        return '%.12e' % obj
    return '"{}"'.format(str(obj).replace('\\', '\\\\').replace('"', '\\"').replace('\n', '\\n'))


def canonical_json(report):
    """ Sorted keys, floats as %.12e and ±inf/nan as strings, so equal reports are equal bytes. """
    return _encode(_plain(report)) + '\n'


def emit_report(report, path):
    try:
        with open(path, 'w') as f:
            f.write(canonical_json(report))
    except OSError as e:
        raise IoError("Cannot write report {}: {}.".format(path, e))


def run_scenario(path, command=None, out=None, seed=None):
    """ Loads and runs a scenario file (or builtin name), writes <kind>_report.json and, for simulations,
    <kind>_trajectory.csv into out.

    :return: exit code
    """
    try:
        s = scenarios.load(path) if isinstance(path, str) else path
        scenarios.validate(s)
        if command is not None and COMMANDS[command] != s['kind']:
            raise SchemaError("Command '{}' cannot run a '{}' scenario.".format(command, s['kind']))
        passed, report, traj = scenarios.run(s, seed)
        if out is not None:
            os.makedirs(out, exist_ok=True)
            emit_report(report, os.path.join(out, '{}_report.json'.format(s['kind'])))
            if traj is not None:
                try:
                    traj.save_csv(os.path.join(out, '{}_trajectory.csv'.format(s['kind'])))
                except OSError as e:
                    raise IoError("Cannot write trajectory: {}.".format(e))
    except (NsissError, ValueError, OSError) as e:
        logger.error("%s: %s", type(e).__name__, e)
        print("ERROR {}".format(e))
        return 2
    print("{} {}".format('PASS' if passed else 'FAIL', s['kind']))
    return 0 if passed else 1


def build_parser():
    parser = argparse.ArgumentParser(prog='nsiss', description="Nonsmooth ISS certificates for switched systems.")
    parser.add_argument('-v', '--verbose', action='store_true', help="debug logging")
    parser.add_argument('-q', '--quiet', action='store_true', help="warnings only")
    sub = parser.add_subparsers(dest='command', required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help="run a '{}' scenario".format(COMMANDS[name]))
        p.add_argument('scenario', help="scenario JSON file or builtin name ({})".format(
            ', '.join(sorted(scenarios.BUILTINS))))
        p.add_argument('--out', default='.', help="output directory for reports")
        p.add_argument('--seed', type=int, default=None, help="override the scenario seed")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(asctime)s %(name)s %(levelname)s %(message)s')
    return run_scenario(args.scenario, args.command, args.out, args.seed)


if __name__ == '__main__':
    sys.exit(main())
