import numpy as np
import pytest

from nsiss import kfun, linmat, Config
from nsiss.certify import (ISSCertificate, DissipationCertificate, SamplePlan, CheckReport, check_main_iss,
                           check_switched_iss, check_dissipation, trajectory_check)
from nsiss.errors import PartitionMismatch, TagMismatch
from nsiss.nonsmooth import PiecewiseC1Fn
from nsiss.partition import LinearForm, QuadraticForm, Callback, Region, ProperPartition
from nsiss.switched import SwitchedSystem, Linear as LinearMode, Zero, Constant, simulate


@pytest.fixture(scope='module')
def flower():
    return linmat.flower_instance(1., 5., 0.1)


def flower_plan(n_state=10000, seed=0):
    return SamplePlan([-5., 5.], n_state, input_radius=1., n_input=64, surface_pairs=[(1, 2)], n_surface=200,
                      seed=seed, surface_points=[[1., 1.]])


def scalar_system(a=-1.):
    """ ẋ = a x + u on the real line. """
    return SwitchedSystem(ProperPartition(1, [Region([], 1)]), [LinearMode([[a]], [[1.]])], 1)


def scalar_V():
    return PiecewiseC1Fn(ProperPartition(1, [Region([], 1)]), [QuadraticForm([[1.]])])


def scalar_plan():
    return SamplePlan([-3., 3.], 2000, input_radius=2., n_input=64, seed=1)


def test_flower_aligned(flower):
    report = check_switched_iss(flower.system, flower.certificate, flower_plan(),
                                threshold_slope=flower.expected['threshold_slope'])
    assert flower.expected['threshold_slope'] == pytest.approx(1 / 3)
    assert report.passed, report.witnesses
    assert set(report.margins) == {'A', 'B', 'C'}
    assert report.counts['surface'] == 201
    above = report.counts['surface_above_threshold']
    assert above > 0 and report.counts['surface_above_threshold_empty'] >= 0.99 * above


def test_flower_clarke_fails(flower):
    report = check_switched_iss(flower.system, flower.certificate, flower_plan(2000), variant='clarke')
    assert not report.passed and report.margins['C'] < 0
    assert report.margins['A'] >= 0 and report.margins['B'] >= 0
    assert report.witnesses and all(w['family'] == 'C' for w in report.witnesses)
    assert report.notes == ['surface condition uses the Clarke derivative']


def test_flower_main(flower):
    assert check_main_iss(flower.system, flower.certificate, flower_plan(2000)).passed


def test_report_is_deterministic(flower):
    plan = flower_plan(500, seed=7)
    first = check_switched_iss(flower.system, flower.certificate, plan).to_dict()
    with Config(threads=4):
        second = check_switched_iss(flower.system, flower.certificate, plan).to_dict()
    assert first == second


def general_example():
    """ Modes −x + u on x ≥ 0 and −2x + u on x ≤ 0, with V = x² below 1 and 2x² − 1 above. """
    q = LinearForm([1.])
    S = SwitchedSystem(ProperPartition(1, [Region([(q, 1)], 1), Region([(q, -1)], 2)]),
                       [LinearMode([[-1.]], [[1.]]), LinearMode([[-2.]], [[1.]])], 1)
    r = LinearForm([-1.], 1.)
    Y = ProperPartition(1, [Region([(q, -1)], 1), Region([(q, 1), (r, 1)], 2), Region([(r, -1)], 3)])
    V = PiecewiseC1Fn(Y, {1: QuadraticForm([[1.]]), 2: QuadraticForm([[1.]]),
                          3: Callback(1, lambda x: 2 * x[0] ** 2 - 1, lambda x: np.array([4 * x[0]]))})
    return S, V


def general_plan():
    return SamplePlan([-3., 3.], 3000, input_radius=1., n_input=32, surface_pairs=[(1, 2)], n_surface=20, seed=2,
                      include_y_boundary=True)


def test_general_variant():
    S, V = general_example()
    C = ISSCertificate(V, kfun.Power(1, 2), kfun.Power(2, 2), kfun.Power(1, 2), kfun.Power(8, 2))
    report = check_switched_iss(S, C, general_plan(), variant='general')
    assert report.passed, report.witnesses
    assert report.counts['y_boundary'] > 0

    with pytest.raises(PartitionMismatch):
        check_switched_iss(S, C, general_plan(), variant='aligned')

    greedy = ISSCertificate(V, kfun.Power(1, 2), kfun.Power(2, 2), kfun.Power(5, 2), kfun.Power(8, 2))
    report = check_switched_iss(S, greedy, general_plan(), variant='general')
    assert not report.passed and report.margins['B'] < 0
    assert report.witnesses and all(w['margin'] < 0 for w in report.witnesses)


def test_main_iss_scalar():
    S, V = scalar_system(), scalar_V()
    C = ISSCertificate(V, kfun.Power(1, 2), kfun.Power(1, 2), kfun.Power(1, 2), kfun.Power(16, 2))
    report = check_main_iss(S, C, scalar_plan())
    assert report.passed and report.counts['samples'] == 2000 and report.counts['empty'] == 0

    loose = ISSCertificate(V, kfun.Power(1, 2), kfun.Power(0.5, 2), kfun.Power(1, 2), kfun.Power(16, 2))
    report = check_main_iss(S, loose, scalar_plan())
    assert not report.passed and report.margins['bounds'] < 0 and report.margins['decrease'] >= 0


def test_dissipation():
    S, V = scalar_system(), scalar_V()
    # V̇ = −2x² + 2xu ≤ −x² + u².
    D = DissipationCertificate(V, kfun.Power(1, 2), kfun.Power(1, 2), kfun.Power(1, 2), kfun.Power(1, 2))
    assert check_dissipation(S, D, scalar_plan()).passed

    C = D.to_implication()
    assert C.rho(2.) == pytest.approx(2.)
    assert C.gamma(1.) == pytest.approx(2.)
    assert check_main_iss(S, C, scalar_plan()).passed

    tight = DissipationCertificate(V, kfun.Power(1, 2), kfun.Power(1, 2), kfun.Power(1.5, 2), kfun.Power(0.2, 2))
    assert not check_dissipation(S, tight, scalar_plan()).passed

    with pytest.raises(TagMismatch):
        DissipationCertificate(V, kfun.Power(1, 2), kfun.Power(1, 2), kfun.Constant(1.), kfun.Power(1, 2))


def test_trajectory_check():
    V = scalar_V()
    C = ISSCertificate(V, kfun.Power(1, 2), kfun.Power(1, 2), kfun.Power(1, 2), kfun.Power(16, 2))
    u = Constant([0.1])
    traj = simulate(scalar_system(), np.array([2.]), u, 10.)
    report = trajectory_check(traj, u, C)
    assert report.passed and report.counts['terminal_residual'] <= 0
    assert report.counts['terminal_value'] == pytest.approx(0.01, rel=1e-2)

    unstable = ISSCertificate(V, kfun.Power(1, 2), kfun.Power(1, 2), kfun.Power(1, 2), kfun.zero())
    traj = simulate(scalar_system(1.), np.array([1.]), Zero(1), 1.)
    report = trajectory_check(traj, Zero(1), unstable)
    assert not report.passed and report.margins['monotone'] < 0


def test_sample_plan():
    plan = flower_plan(100)
    again = SamplePlan.from_dict(plan.to_dict())
    assert again.to_dict() == plan.to_dict() and again.surface_pairs == [(1, 2)]
    with pytest.raises(ValueError):
        SamplePlan([-1., 1.], 0)
    with pytest.raises(ValueError):
        SamplePlan([-1., 1.], 10, input_radius=-1.)


def test_check_report():
    assert CheckReport(dict(A=np.inf, B=0.), [], {}).passed
    assert not CheckReport(dict(A=-1e-3), [dict(family='A')], {})


def test_unperturbed_specialization(flower):
    plan = SamplePlan([-5., 5.], 2000, input_radius=0., surface_pairs=[(1, 2)], n_surface=50)
    assert check_main_iss(flower.system, flower.certificate, plan).passed

    rng = np.random.default_rng(0)
    for x0 in rng.uniform(-2., 2., (10, 2)):
        traj = simulate(flower.system, x0, Zero(2), 5.)
        assert trajectory_check(traj, Zero(2), flower.certificate).passed


def test_clarke_pass_implies_lie_pass():
    S, V = scalar_system(), scalar_V()
    C = ISSCertificate(V, kfun.Power(1, 2), kfun.Power(1, 2), kfun.Power(1, 2), kfun.Power(16, 2))
    S2, V2 = general_example()
    C2 = ISSCertificate(V2, kfun.Power(1, 2), kfun.Power(2, 2), kfun.Power(1, 2), kfun.Power(8, 2))
    for system, certificate, variant in ((S, C, 'aligned'), (S2, C2, 'general')):
        plan = SamplePlan([-3., 3.], 500, input_radius=1., n_input=16, surface_pairs=(), seed=4)
        if check_switched_iss(system, certificate, plan, variant='clarke').passed:
            assert check_switched_iss(system, certificate, plan, variant=variant).passed


def test_zero_system_dissipation():
    S = SwitchedSystem(ProperPartition(1, [Region([], 1)]), [LinearMode([[0.]], [[1.]])], 1)
    D = DissipationCertificate(scalar_V(), kfun.Power(1, 2), kfun.Power(1, 2), kfun.Power(0.1, 2), kfun.Power(1, 2))
    report = check_dissipation(S, D, SamplePlan([-1., 1.], 200, input_radius=0.))
    assert not report.passed and report.margins['dissipation'] < 0


def test_equilibrium_trajectory():
    traj = simulate(scalar_system(), np.zeros(1), Zero(1), 1.)
    C = ISSCertificate(scalar_V(), kfun.Power(1, 2), kfun.Power(1, 2), kfun.Power(1, 2), kfun.Power(16, 2))
    report = trajectory_check(traj, Zero(1), C)
    assert report.passed and report.counts['monotone'] == 0
