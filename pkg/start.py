#!/usr/bin/python3

import sys
sys.path.append('src')

import logging
import os
import time
from tqdm import tqdm

from nsiss import scenario
from nsiss.cli import emit_report


def run_builtins(names=None, out='results', seed=None):
    """ Runs builtin scenarios and writes one report per scenario into out. """
    names = sorted(scenario.BUILTINS) if names is None else names
    os.makedirs(out, exist_ok=True)
    results = dict()
    t0 = time.time()
    for name in tqdm(names, 'Running builtin scenarios'):
        t = time.time()
        passed, report, traj = scenario.run(scenario.load(name), seed)
        emit_report(report, os.path.join(out, '{}_report.json'.format(name)))
        if traj is not None:
            traj.save_csv(os.path.join(out, '{}_trajectory.csv'.format(name)))
        results[name] = passed
        print("{}: {} ({:.1f}s)".format(name, 'PASS' if passed else 'FAIL', time.time() - t))

    print("Total time: {:.1f}s".format(time.time() - t0))
    return results


if __name__ == '__main__':
    logging.basicConfig(level=logging.WARNING)
    results = run_builtins(names=None,      # All builtins: flower, sign1d, cascade-linear, closed-loop-fixture.
                           out='results',   # Output folder for reports and trajectories.
                           seed=None)       # Keeps the seeds stored in each scenario.
    sys.exit(0 if all(results.values()) else 1)
