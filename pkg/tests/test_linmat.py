import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st
from hypothesis.extra.numpy import arrays

from nsiss import linmat, scenario
from nsiss.errors import NotSymmetric, ParameterOrder, UnsupportedForm, UnverifiedDesign
from nsiss.partition import LinearForm, validate_partition


@pytest.fixture(scope='module')
def fixture():
    return linmat.load_fixture()


def test_lmi_residual():
    assert linmat.lmi_residual(np.diag([-1., -2.])) == pytest.approx(-1.)
    assert linmat.lmi_residual(np.zeros((2, 2))) == 0.
    assert linmat.lmi_residual([[0., 1.], [1., 0.]]) == pytest.approx(1.)
    with pytest.raises(NotSymmetric):
        linmat.lmi_residual([[0., 1.], [0., 0.]])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (5, 5), elements=st.floats(-10., 10.)))
def test_jacobi_matches_eigvalsh(M):
    M = M + M.T
    scale = max(1., np.abs(M).max())
    assert np.allclose(linmat.jacobi_eigenvalues(M), np.linalg.eigvalsh(M), rtol=0, atol=1e-10 * scale)


def test_norm2():
    rng = np.random.default_rng(0)
    for shape in ((2, 2), (3, 1), (4, 3)):
        M = rng.standard_normal(shape)
        assert linmat.norm2(M) == pytest.approx(np.linalg.norm(M, 2), rel=1e-8)
    assert linmat.norm2(np.zeros((2, 2))) == 0.
    assert linmat.norm2(np.eye(3)) == pytest.approx(1.)


def test_fixture_lmis(fixture):
    plant, design = fixture
    plant_report = linmat.verify_plant_lmis(plant, design)
    assert plant_report.passed
    assert set(plant_report.margins) == {'switch_equality', 'mode1', 'mode2', 'cross12', 'cross21'}
    observer_report = linmat.verify_observer_lmis(plant, design)
    assert observer_report.passed
    assert observer_report.margins['observer1'] == pytest.approx(1., abs=1e-7)


def scalar_small_gain(plant, design):
    """ The closed-loop small gain expression from numpy norms and eigenvalues. """
    eig_x = np.concatenate([np.linalg.eigvalsh(design.P1), np.linalg.eigvalsh(design.P2)])
    eig_e = np.linalg.eigvalsh(design.Pe)
    nB, nK = np.linalg.norm(plant.B, 2), np.linalg.norm(design.K, 2)
    nD = np.linalg.norm(plant.A1 - plant.A2, 2)
    return (16 * nB ** 2 * nK ** 2 * nD ** 2 * eig_x.max() ** 3 * eig_e.max() ** 3 /
            (eig_x.min() * eig_e.min() * design.a_x ** 2 * design.a_e ** 2))


def test_fixture_gains(fixture):
    plant, design = fixture
    gains = linmat.closed_loop_gains(plant, design)
    assert gains.small_gain_value == pytest.approx(0.0094649, rel=1e-4)
    assert gains.small_gain_value == pytest.approx(scalar_small_gain(plant, design), rel=1e-12)
    assert gains.passed
    assert gains.gamma_x_slope == pytest.approx(0.44)
    assert gains.gamma_e_slope == pytest.approx(0.8)
    assert gains.eta1_slope == pytest.approx(0.704)
    assert gains.eta2_slope == pytest.approx(0.44 ** 2 / 0.9)
    assert gains.eta_small_gain
    assert set(gains.to_dict()) >= {'small_gain_value', 'passed', 'eta_small_gain'}


def modified(fixture, **changes):
    plant, design = fixture
    d = plant.to_dict()
    d.update({k: v for k, v in changes.items() if k in d})
    e = design.to_dict()
    e.update({k: v for k, v in changes.items() if k in e})
    return linmat.plant_from_dict(d), linmat.ControllerDesign.from_dict(e)


def test_degenerate_coupling(fixture):
    plant, design = modified(fixture, B=np.zeros((2, 2)).tolist())
    gains = linmat.closed_loop_gains(plant, design)
    assert gains.small_gain_value == 0. and gains.passed and gains.gamma_x_slope == 0.

    plant, design = modified(fixture, A2=fixture[0].A1.tolist())
    gains = linmat.closed_loop_gains(plant, design)
    assert gains.small_gain_value == 0. and gains.gamma_e_slope == 0.


def test_destabilizing_observer(fixture):
    plant, design = modified(fixture, L1=(-2 * np.eye(2)).tolist())
    report = linmat.verify_observer_lmis(plant, design)
    assert not report.passed and report.margins['observer1'] < 0 and report.margins['observer2'] > 0
    with pytest.raises(UnverifiedDesign):
        linmat.closed_loop_gains(plant, design)
    with pytest.raises(UnverifiedDesign):
        linmat.build_closed_loop(plant, design)


def test_plant_validation(fixture):
    plant, design = fixture
    with pytest.raises(ValueError):
        linmat.LinearSwitchedPlant(plant.A1, plant.A2, plant.B, plant.C, np.eye(2))
    halfspace = linmat.LinearSwitchedPlant(plant.A1, plant.A2, plant.B, plant.C, LinearForm([1., 0.]))
    with pytest.raises(UnsupportedForm):
        linmat.verify_plant_lmis(halfspace, design)
    with pytest.raises(ValueError):
        linmat.ControllerDesign(design.K, design.L1, design.L2, -np.eye(2), design.P2, design.Pe)
    again = linmat.ControllerDesign.from_dict(design.to_dict())
    assert again.to_dict() == design.to_dict()


def test_flower_instance():
    flower = linmat.flower_instance(1., 5., 0.1)
    assert flower.expected['threshold_slope'] == pytest.approx(1 / 3)
    assert flower.expected['decrease_residual'] == pytest.approx(-0.15)
    b = flower.expected['decrease_slope']
    assert b >= 0.15 ** -1 * 2
    V = flower.certificate.V
    # P₁ − P₂ = μ_Q Q on the switching matrix Q = diag(−1, 1).
    assert np.allclose(V.P[1] - V.P[2], -4. * np.diag([-1., 1.]))
    c = max(b, 1 / 3)
    assert flower.certificate.gamma(1.) == pytest.approx(5 * c ** 2)

    # |x| ≥ b|u| gives the smooth decrease in every mode.
    rng = np.random.default_rng(0)
    eps_prime = 0.05
    for _ in range(1000):
        x = rng.standard_normal(2)
        u = rng.standard_normal(2)
        u *= np.linalg.norm(x) / (b * np.linalg.norm(u))
        for label in (1, 2):
            A, P = flower.system.modes[label].A, V.P[label]
            assert 2 * x @ P @ (A @ x + u) <= -eps_prime * x @ x + 1e-9


def test_flower_smooth_case():
    flower = linmat.flower_instance(2., 2., 0.1)
    V = flower.certificate.V
    assert np.array_equal(V.P[1], V.P[2])
    x = np.array([1., 1.])
    assert V.value(x) == pytest.approx(4.)


def test_flower_parameter_order():
    with pytest.raises(ParameterOrder):
        linmat.flower_instance(5., 1., 0.1)
    with pytest.raises(ParameterOrder):
        linmat.flower_instance(1., 5., 1.)


def test_closed_loop_system(fixture):
    plant, design = fixture
    S = linmat.build_closed_loop(plant, design)
    assert S.dim == 4 and S.input_dim == 0
    assert set(S.partition.labels) == {11, 12, 21, 22}
    assert validate_partition(S.partition, 2000, [-1., 1.], seed=0).passed

    BK = plant.B @ design.K
    M = np.block([[plant.A1 + BK, -BK], [plant.A1 - plant.A2, plant.A2 - design.L2 @ plant.C]])
    xe = np.array([0.3, -0.2, 0.1, 0.4])
    assert np.allclose(S.f(12, xe, np.zeros(0)), M @ xe)

    plant, design = modified(fixture, A2=plant.A1.tolist(), L2=design.L1.tolist())
    S = linmat.build_closed_loop(plant, design)
    for label in S.partition.labels:
        assert not np.any(S.modes[label].A[2:, :2])


def test_closed_loop_scenario():
    passed, report, _ = scenario.run(dict(kind='closed_loop', fixture=True, seed=3, n_runs=8, T=20.,
                                          final_bound=1e-3))
    assert passed
    assert report['simulations']['n_runs'] == 8 and report['simulations']['incomplete'] == 0
    assert report['gains']['small_gain_value'] < 1


def test_search_design(fixture):
    plant, design = fixture
    found, objective = linmat.search_design(plant, design.K, design.L1, design.L2, iters=300, seed=1)
    again, repeated = linmat.search_design(plant, design.K, design.L1, design.L2, iters=300, seed=1)
    assert objective == repeated and again.to_dict() == found.to_dict()
    # Identity matrices already give the residual −1 on this plant.
    assert objective <= -1. + 1e-12
    assert linmat.verify_plant_lmis(plant, found).passed
    assert linmat.verify_observer_lmis(plant, found).passed
