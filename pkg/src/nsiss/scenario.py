""" JSON scenarios: schema validation, builtin scenarios and the workflow behind each command line kind.

A scenario is a dict with a "kind" among KINDS. Matrices are row-major nested lists, comparison functions are tagged
records ({"form": "linear", "c": 2.0}), region labels are integers and mode/piece maps are keyed by str(label).
"""

import copy
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor as Executor
import numpy as np
from tqdm import tqdm

from . import kfun, linmat
from .certify import (SamplePlan, ISSCertificate, DissipationCertificate, check_main_iss, check_switched_iss,
                      check_dissipation, trajectory_check)
from .compose import SubsystemCertificate, small_gain_compose, cascade_compose
from .config import config
from .errors import SchemaError
from .nonsmooth import PiecewiseC1Fn, clarke_interval, lie_interval
from .partition import partition_from_dict, field_from_dict
from .switched import SwitchedSystem, mode_from_dict, input_from_dict, hull_vertices, simulate, Zero

logger = logging.getLogger(__name__)

KINDS = ('check', 'simulate', 'compose', 'lmi', 'flower', 'closed_loop')
VARIANTS = ('main', 'general', 'aligned', 'clarke', 'dissipation')


def _require(d, keys, where):
    missing = [k for k in keys if k not in d]
    if missing:
        raise SchemaError("Missing keys {} in {}.".format(missing, where))


def _check_labels(partition):
    labels = [r.get('label') for r in partition.get('regions', [])]
    if len(set(labels)) != len(labels):
        raise SchemaError("Duplicated region labels: {}.".format(labels))


def validate(scenario):
    """ Structural checks; dimension consistency is checked while building objects. """
    if not isinstance(scenario, dict):
        raise SchemaError("A scenario must be a JSON object, got {}.".format(type(scenario).__name__))
    kind = scenario.get('kind')
    if kind not in KINDS:
        raise SchemaError("Unknown scenario kind: {}.".format(kind))
    needs = dict(check=('system', 'certificate', 'plan'), simulate=('system', 'x0', 'T'),
                 compose=('mode', 'c1', 'c2'), lmi=(), flower=('plan',), closed_loop=())
    _require(scenario, needs[kind], "a '{}' scenario".format(kind))
    for key in ('system', 'testbed'):
        if isinstance(scenario.get(key), dict) and 'partition' in scenario[key]:
            _check_labels(scenario[key]['partition'])
    V = scenario.get('certificate', {}).get('V', {})
    if isinstance(V.get('partition'), dict):
        _check_labels(V['partition'])
    if kind == 'check' and scenario.get('variant', 'aligned') not in VARIANTS:
        raise SchemaError("Unknown check variant: {}.".format(scenario.get('variant')))
    if kind == 'compose' and scenario['mode'] not in ('small_gain', 'cascade'):
        raise SchemaError("Unknown compose mode: {}.".format(scenario['mode']))
    return scenario


def load(path):
    """ A scenario from a JSON file, or a copy of the builtin with that name. """
    if not os.path.exists(path) and path in BUILTINS:
        return copy.deepcopy(BUILTINS[path])
    try:
        with open(path) as f:
            return validate(json.load(f))
    except json.JSONDecodeError as e:
        raise SchemaError("Scenario {} is not valid JSON: {}.".format(path, e))
    except OSError as e:
        raise SchemaError("Cannot read scenario {}: {}.".format(path, e))


# Builders.

def _keyed(labels, records, build, what):
    by_name = {str(k): v for k, v in records.items()}
    if set(by_name) != {str(label) for label in labels}:
        raise SchemaError("{} keys {} do not match region labels {}.".format(what, sorted(by_name), list(labels)))
    return {label: build(by_name[str(label)]) for label in labels}


def build_system(d):
    P = partition_from_dict(d['partition'])
    modes = _keyed(P.labels, d['modes'], mode_from_dict, 'Mode')
    return SwitchedSystem(P, modes, d.get('input_dim', 0), d.get('check_origin', True))


def build_piecewise(d, system=None):
    if d.get('partition', 'system') == 'system':
        if system is None:
            raise SchemaError("A Lyapunov function on the system partition needs a system.")
        P = system.partition
    else:
        P = partition_from_dict(d['partition'])
    return PiecewiseC1Fn(P, _keyed(P.labels, d['pieces'], field_from_dict, 'Piece'))


def build_certificate(d, system=None):
    V = build_piecewise(d['V'], system)
    if 'rho_hat' in d:
        return DissipationCertificate(V, kfun.from_dict(d['alpha_lo']), kfun.from_dict(d['alpha_hi']),
                                      kfun.from_dict(d['rho_hat']), kfun.from_dict(d['gamma_hat']),
                                      d.get('form', 'state'))
    return ISSCertificate(V, kfun.from_dict(d['alpha_lo']), kfun.from_dict(d['alpha_hi']), kfun.from_dict(d['rho']),
                          kfun.from_dict(d['gamma']), d.get('rho_argument', 'state'))


def build_subsystem(d):
    fns = {k: kfun.from_dict(d[k]) for k in ('alpha_lo', 'alpha_hi', 'rho') if k in d}
    _require(fns, ('alpha_lo', 'alpha_hi', 'rho'), 'a subsystem certificate')
    chi = kfun.from_dict(d['chi']) if 'chi' in d else None
    gamma = kfun.from_dict(d['gamma']) if 'gamma' in d else None
    return SubsystemCertificate(build_piecewise(d['V']), fns['alpha_lo'], fns['alpha_hi'], fns['rho'], chi, gamma)


def _plan(d, seed):
    plan = dict(d)
    if seed is not None:
        plan['seed'] = seed
    return SamplePlan.from_dict(plan)


def _seed(scenario, seed):
    return scenario.get('seed', 0) if seed is None else seed


# Workflows. Each returns (passed, report, trajectory or None).

def _run_check(s, seed):
    S = build_system(s['system'])
    C = build_certificate(s['certificate'], S)
    plan = _plan(s['plan'], seed)
    variant = s.get('variant', 'aligned')
    if variant == 'dissipation':
        report = check_dissipation(S, C, plan)
    elif variant == 'main':
        report = check_main_iss(S, C, plan)
    else:
        report = check_switched_iss(S, C, plan, variant, s.get('threshold_slope'))
    return report.passed, dict(variant=variant, check=report.to_dict()), None


def _run_simulate(s, seed):
    S = build_system(s['system'])
    u = input_from_dict(s['input']) if 'input' in s else Zero(S.input_dim)
    options = dict(s.get('options', {}))
    options.setdefault('seed', _seed(s, seed))
    traj = simulate(S, np.asarray(s['x0'], dtype=np.float64), u, float(s['T']), **options)
    report = dict(summary=traj.summary())
    passed = traj.complete
    if 'certificate' in s:
        check = trajectory_check(traj, u, build_certificate(s['certificate'], S))
        report['trajectory_check'] = check.to_dict()
        passed = passed and check.passed
    return passed, report, traj


def _run_compose(s, seed):
    c1, c2 = build_subsystem(s['c1']), build_subsystem(s['c2'])
    options = dict(s.get('options', {}))
    if s['mode'] == 'small_gain':
        W = small_gain_compose(c1, c2, **options)
    else:
        W = cascade_compose(c1, c2, **options)
    grid = [float(v) for v in s.get('grid', [0.5, 1., 2.])]
    values = {name: [float(getattr(W, name)(r)) for r in grid] for name in ('rho', 'gamma', 'alpha_lo', 'alpha_hi')}
    if s['mode'] == 'cascade':
        values.update({name: [float(getattr(W, name)(r)) for r in grid] for name in ('nu', 'ell', 'theta')})
    else:
        values['sigma'] = [float(W.sigma(r)) for r in grid]
    report = dict(mode=s['mode'], grid=grid, values=values, composite=W.to_dict())
    passed = True
    if 'testbed' in s:
        S = build_system(s['testbed'])
        plan = _plan(s['plan'], seed)
        if s['mode'] == 'cascade':
            check = check_dissipation(S, W.dissipation_certificate(), plan)
        else:
            check = check_main_iss(S, W.certificate(), plan)
        report['check'] = check.to_dict()
        passed = check.passed
    return passed, report, None


def _plant_and_design(s):
    if s.get('fixture', 'plant' not in s):
        return linmat.load_fixture(s.get('fixture_path'))
    return linmat.plant_from_dict(s['plant']), linmat.ControllerDesign.from_dict(s['design'])


def _run_lmi(s, seed):
    plant, design = _plant_and_design(s)
    tol = s.get('tol', 1e-8)
    plant_report = linmat.verify_plant_lmis(plant, design, tol)
    observer_report = linmat.verify_observer_lmis(plant, design, tol)
    report = dict(plant=plant_report.to_dict(), observer=observer_report.to_dict())
    passed = plant_report.passed and observer_report.passed
    if passed:
        gains = linmat.closed_loop_gains(plant, design, tol)
        report['gains'] = gains.to_dict()
        passed = gains.passed
    return passed, report, None


def _run_flower(s, seed):
    B = s.get('B')
    flower = linmat.flower_instance(s.get('a1', 1.), s.get('a2', 5.), s.get('eps', 0.1), B)
    S, C = flower.system, flower.certificate
    plan = _plan(s['plan'], seed)
    threshold = flower.expected['threshold_slope']
    aligned = check_switched_iss(S, C, plan, 'aligned', threshold_slope=threshold)
    report = dict(expected=flower.expected, aligned=aligned.to_dict())
    z = np.asarray(s.get('probe', [1., 1.]), dtype=np.float64)
    hull = hull_vertices(S, z, np.zeros(S.input_dim))
    report['probe'] = dict(x=z.tolist(), clarke=clarke_interval(C.V, hull, z).to_dict(),
                           lie=lie_interval(C.V, hull, z).to_dict())
    if s.get('clarke', True):
        report['clarke'] = check_switched_iss(S, C, plan, 'clarke').to_dict()
    return aligned.passed, report, None


def _closed_loop_run(args):
    S, x0, T, options = args
    traj = simulate(S, x0, Zero(0), T, **options)
    return float(np.sum(np.abs(traj.states[-1]))), traj.complete


def _unit_ball(rng, n, count):
    d = rng.standard_normal((count, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * rng.random(count)[:, None] ** (1. / n)


def closed_loop_batch(S, initial_states, T, options):
    """ 1-norm of the final state of each simulation, and completeness flags, in input order. """
    items = [(S, x0, T, options) for x0 in initial_states]
    if config['threads'] > 1:
        with Executor(max_workers=config['threads']) as executor:
            iterator = executor.map(_closed_loop_run, items)
            if config['progress']:
                iterator = tqdm(iterator, total=len(items), desc='closed loop')
            return list(iterator)
    iterator = tqdm(items, desc='closed loop') if config['progress'] else items
    return [_closed_loop_run(item) for item in iterator]


def _run_closed_loop(s, seed):
    plant, design = _plant_and_design(s)
    tol = s.get('tol', 1e-8)
    gains = linmat.closed_loop_gains(plant, design, tol)
    S = linmat.build_closed_loop(plant, design, tol)
    rng = np.random.default_rng(_seed(s, seed))
    n = plant.n
    # Draw (x0, z0) from the unit ball and simulate on (x, e) with e = x − z.
    xz = _unit_ball(rng, 2 * n, int(s.get('n_runs', 100)))
    states = np.hstack([xz[:, :n], xz[:, :n] - xz[:, n:]])
    options = dict(dt_max=0.05, event_tol=1e-9)
    options.update(s.get('options', {}))
    results = closed_loop_batch(S, states, float(s.get('T', 20.)), options)
    finals = [r[0] for r in results]
    bound = s.get('final_bound', 1e-3)
    sims = dict(n_runs=len(finals), worst_final=max(finals), bound=bound, incomplete=sum(not r[1] for r in results))
    report = dict(gains=gains.to_dict(), simulations=sims)
    passed = gains.passed and sims['worst_final'] <= bound and sims['incomplete'] == 0
    return passed, report, None


RUNNERS = dict(check=_run_check, simulate=_run_simulate, compose=_run_compose, lmi=_run_lmi, flower=_run_flower,
               closed_loop=_run_closed_loop)


def run(scenario, seed=None):
    """ Executes a scenario.
    :param seed: overrides the scenario seed (sample plans, corner selection, initial states)
    :return: (passed, report dict, trajectory or None)
    """
    validate(scenario)
    passed, report, traj = RUNNERS[scenario['kind']](scenario, seed)
    report.update(kind=scenario['kind'], passed=bool(passed), seed=_seed(scenario, seed))
    logger.info("Scenario %s: passed=%s.", scenario['kind'], passed)
    return bool(passed), report, traj


# Builtins.

def _halfline_partition():
    return dict(dim=1, fields=dict(q1=dict(form='linear', v=[1.], offset=0.)),
                regions=[dict(label=1, constraints=[['q1', 1]]), dict(label=2, constraints=[['q1', -1]])])


def _whole_space(dim):
    return dict(dim=dim, fields={}, regions=[dict(label=1, constraints=[])])


def _square(c):
    return dict(form='power', c=c, p=2.)


BUILTINS = {
    'flower': dict(kind='flower', a1=1., a2=5., eps=0.1, B=[[1., 0.], [0., 1.]], seed=0,
                   plan=dict(state_box=[-5., 5.], n_state=10000, input_radius=1., n_input=64,
                             surface_pairs=[[1, 2]], n_surface=200, surface_points=[[1., 1.]])),
    'sign1d': dict(kind='simulate', seed=0, x0=[1.], T=2.,
                   system=dict(partition=_halfline_partition(), input_dim=0, check_origin=False,
                               modes={'1': dict(form='affine', A=[[0.]], b=[-1.]),
                                      '2': dict(form='affine', A=[[0.]], b=[1.])}),
                   input=dict(form='zero', dim=0), options=dict(dt_max=1e-2, event_tol=1e-9)),
    'cascade-linear': dict(
        kind='compose', mode='cascade', seed=0,
        c1=dict(V=dict(partition=_whole_space(1), pieces={'1': dict(form='quadratic', Q=[[1.]])}),
                alpha_lo=_square(1.), alpha_hi=_square(1.), rho=dict(form='linear', c=1.),
                gamma=dict(form='linear', c=1.)),
        c2=dict(V=dict(partition=_whole_space(1), pieces={'1': dict(form='quadratic', Q=[[1.]])}),
                alpha_lo=_square(1.), alpha_hi=_square(1.), rho=dict(form='linear', c=1.), gamma=_square(1.)),
        testbed=dict(partition=_whole_space(2), input_dim=1,
                     modes={'1': dict(form='linear', A=[[-1., 1.], [0., -1.]], B=[[0.], [1.]])}),
        plan=dict(state_box=[-3., 3.], n_state=2000, input_radius=2., n_input=64)),
    'closed-loop-fixture': dict(kind='closed_loop', fixture=True, seed=0, n_runs=100, T=20., final_bound=1e-3),
}
