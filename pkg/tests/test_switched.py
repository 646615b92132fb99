import numpy as np
import pytest
import scipy.linalg

from nsiss import linmat
from nsiss.certify import trajectory_check
from nsiss.errors import DegenerateNormal, DimensionMismatch
from nsiss.partition import LinearForm, Region, ProperPartition
from nsiss.scenario import BUILTINS, build_system
from nsiss.switched import (SwitchedSystem, Affine, Linear, hull_vertices, sliding_combination, min_norm_element,
                            simulate, Zero, Constant, Sinusoid, PiecewiseConstant, input_from_dict)


@pytest.fixture(scope='module')
def flower():
    return linmat.flower_instance(1., 5., 0.1)


def whole_space(mode):
    return SwitchedSystem(ProperPartition(mode.dim, [Region([], 1)]), [mode], mode.input_dim)


def sign1d():
    return build_system(BUILTINS['sign1d']['system'])


def test_hull_vertices(flower):
    S = flower.system
    hull = hull_vertices(S, np.array([1., 1.]), np.zeros(2))
    assert hull.indices == (1, 2)
    assert np.allclose(hull.vertices, [[0.9, -5.1], [4.9, -1.1]])

    hull = hull_vertices(S, np.array([1., 0.]), np.zeros(2))
    assert hull.indices == (2,) and np.allclose(hull.vertices, [[-0.1, -1.]])

    shifted = hull_vertices(S, np.array([1., 1.]), np.array([0.3, -0.2]))
    assert np.allclose(shifted.vertices, [[1.2, -5.3], [5.2, -1.3]])

    with pytest.raises(DimensionMismatch):
        hull_vertices(S, np.array([1., 1.]), np.zeros(3))


def test_sliding_combination():
    assert sliding_combination([[-1.], [1.]], [1.]) == (0.5, 'sliding')
    assert sliding_combination([[1.], [2.]], [1.]) == (None, 'crossing')
    lam, kind = sliding_combination([[-2.], [1.]], [1.])
    assert kind == 'sliding' and lam == pytest.approx(1 / 3)
    assert sliding_combination([[0., 1.], [0., -1.]], [1., 0.]).kind == 'tangent'
    with pytest.raises(DegenerateNormal):
        sliding_combination([[-1.], [1.]], [0.])


def test_min_norm_element():
    assert np.allclose(min_norm_element([[1., 0.], [0., 1.]]), [0.5, 0.5], atol=1e-12)
    assert np.allclose(min_norm_element([[-1., 0.], [1., 0.], [0., 1.]]), [0., 0.], atol=1e-12)
    assert np.allclose(min_norm_element([[1., 1.], [1., 1.], [2., -1.]]), [1.2, 0.6], atol=1e-12)
    assert np.array_equal(min_norm_element([[3., 4.]]), [3., 4.])

    rng = np.random.default_rng(0)
    for _ in range(200):
        V = rng.uniform(-1., 1., (rng.integers(2, 6), rng.integers(1, 4)))
        x = min_norm_element(V)
        assert np.all(V @ x >= x @ x - 1e-9)


def test_origin_equilibrium():
    q = LinearForm([1.])
    P = ProperPartition(1, [Region([(q, 1)], 1), Region([(q, -1)], 2)])
    modes = [Affine([[0.]], [-1.]), Affine([[0.]], [1.])]
    with pytest.raises(ValueError):
        SwitchedSystem(P, modes, 0)
    assert SwitchedSystem(P, modes, 0, check_origin=False).dim == 1


def test_sign_system_slides():
    event_tol = 1e-9
    traj = simulate(sign1d(), np.array([1.]), Zero(0), 2., dt_max=1e-2, event_tol=event_tol)
    assert traj.complete
    first = traj.events[0]
    assert first.kind == 'slide_start'
    assert abs(first.time - 1.) <= 2 * event_tol
    tail = traj.times >= 1.05
    assert tail.any() and np.all(np.abs(traj.states[tail]) <= 1e-6)
    assert traj.max_sliding_residual <= 10 * event_tol
    assert traj.active[-1] == (1, 2)
    assert np.all(np.diff(traj.times) > 0)


def test_smooth_mode_against_exact_flow():
    A = np.array([[-1., 2.], [-2., -1.]])
    S = whole_space(Linear(A))
    x0 = np.array([1., -0.5])
    exact = scipy.linalg.expm(3 * A) @ x0
    errors = [np.linalg.norm(simulate(S, x0, Zero(0), 3., dt_max=dt).states[-1] - exact) for dt in (0.02, 0.01)]
    assert errors[1] <= 1e-8
    # Fourth order: halving the step divides the error by about 16.
    assert 10 < errors[0] / errors[1] < 22


def test_piecewise_constant_input_breakpoint():
    S = whole_space(Linear([[-1.]], [[1.]]))
    u = PiecewiseConstant([0., 0.5], [[0.], [1.]])
    traj = simulate(S, np.array([1.]), u, 1., dt_max=0.03)
    expected = np.exp(-1.) + (1 - np.exp(-0.5))
    assert traj.states[-1, 0] == pytest.approx(expected, abs=1e-7)
    assert np.any(np.isclose(traj.times, 0.5, rtol=0, atol=1e-14))


def test_state_bound_stops():
    S = whole_space(Linear([[1.]]))
    traj = simulate(S, np.array([1.]), Zero(0), 5., state_bound=10.)
    assert not traj.complete
    assert abs(traj.states[-1, 0]) > 10. and traj.times[-1] < 5.


def test_flower_decay(flower):
    S, V = flower.system, flower.certificate.V
    traj = simulate(S, np.array([1., 1.]), Zero(2), 20.)
    assert traj.complete and traj.event_counts().get('crossing', 0) > 0
    assert V.value(traj.states[-1]) == pytest.approx(6 * np.exp(-0.2 * 20), rel=1e-6)

    traj = simulate(S, np.array([1., 1.]), Zero(2), 80.)
    assert np.linalg.norm(traj.states[-1]) < 1e-3


def test_flower_bounded_input(flower):
    u = Sinusoid([0.1, 0.1], [1., 2.])
    traj = simulate(flower.system, np.array([1., 1.]), u, 30.)
    assert traj.complete
    report = trajectory_check(traj, u, flower.certificate)
    assert report.passed
    assert report.counts['terminal_residual'] <= 0


def test_inputs():
    assert np.array_equal(Zero(2)(1.), [0., 0.])
    assert Constant([3., 4.]).sup_norm_to(1.) == 5.
    u = PiecewiseConstant([0., 1., 2.], [[1.], [-3.], [2.]])
    assert u(1.5)[0] == -3. and u.sup_norm_to(0.5) == 1. and u.sup_norm_to(5.) == 3.
    assert u.breakpoints == (1., 2.)
    s = Sinusoid([2.], [np.pi])
    assert s.sup_norm_to(10.) == pytest.approx(2., rel=1e-3)
    assert input_from_dict(s.to_dict())(0.25)[0] == pytest.approx(s(0.25)[0])


def test_save_csv(tmp_path):
    traj = simulate(sign1d(), np.array([1.]), Zero(0), 1.2, dt_max=0.1)
    path = tmp_path / 'traj.csv'
    traj.save_csv(str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == 't,x1,active,event'
    assert len(lines) == len(traj) + 1
    assert any(line.endswith(',1|2,') for line in lines[1:])
    assert any(line.endswith('slide_start') for line in lines[1:])


def test_unknown_corner_selection(flower):
    with pytest.raises(ValueError):
        simulate(flower.system, np.array([1., 0.]), Zero(2), 1., corner_selection='first')


def corner_system():
    """ Three regions meeting at 0 with constant fields whose hull contains 0. """
    q1, q2 = LinearForm([1., 0.]), LinearForm([0., 1.])
    P = ProperPartition(2, [Region([(q1, 1), (q2, 1)], 1), Region([(q1, -1)], 2), Region([(q1, 1), (q2, -1)], 3)])
    modes = [Affine(np.zeros((2, 2)), [-1., -1.]), Affine(np.zeros((2, 2)), [1., 0.]),
             Affine(np.zeros((2, 2)), [-1., 1.])]
    return SwitchedSystem(P, modes, 0, check_origin=False)


def test_corner_min_norm(caplog):
    with caplog.at_level('WARNING', logger='nsiss.switched'):
        traj = simulate(corner_system(), np.array([1., 1.]), Zero(0), 2.)
    assert traj.complete and traj.event_counts().get('corner', 0) >= 1
    assert sum('reached 3 regions' in r.getMessage() for r in caplog.records) == 1
    after = traj.times >= 1. + 1e-6
    assert np.abs(traj.states[after]).max() <= 1e-8
    assert all(tuple(sorted(a)) == (1, 2, 3) for a, keep in zip(traj.active, after) if keep)


def test_corner_random_selection():
    runs = [simulate(corner_system(), np.array([1., 1.]), Zero(0), 2., corner_selection='random', seed=7)
            for _ in range(2)]
    traj = runs[0]
    assert traj.complete and traj.event_counts().get('corner', 0) >= 1
    assert np.abs(traj.states[traj.times >= 1.5]).max() <= 0.1
    assert np.array_equal(traj.states, runs[1].states)
