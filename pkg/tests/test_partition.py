import numpy as np
import pytest

from nsiss.errors import NoRegionContains, NoCrossingFound, NotSymmetric, DimensionMismatch
from nsiss.partition import (LinearForm, QuadraticForm, Callback, Region, ProperPartition, active_indices,
                             surface_sample, validate_partition, partition_from_dict)
from nsiss.test import gradh


def flower_partition():
    q = QuadraticForm(np.diag([-1., 1.]))
    return ProperPartition(2, [Region([(q, 1)], 1), Region([(q, -1)], 2)])


def halfspace_partition():
    q = LinearForm([1., 2.])
    return ProperPartition(2, [Region([(q, 1)], 1), Region([(q, -1)], 2)])


def test_fields():
    q = QuadraticForm([[1., 2.], [2., -3.]])
    x = np.array([0.3, -1.2])
    assert np.allclose(q.gradient(x), gradh(q.value, x), atol=1e-6)
    l = LinearForm([1., -1.], offset=2.)
    assert l.value(x) == pytest.approx(3.5)
    c = Callback(2, lambda x: np.sin(x[0]) * x[1], lambda x: np.array([np.cos(x[0]) * x[1], np.sin(x[0])]))
    assert np.allclose(c.gradient(x), gradh(c.value, x), atol=1e-6)
    assert c.value(np.stack([x, x])).shape == (2,)
    with pytest.raises(NotSymmetric):
        QuadraticForm([[1., 2.], [0., 1.]])
    with pytest.raises(DimensionMismatch):
        q.value(np.zeros(3))


def test_active_indices():
    P = flower_partition()
    assert active_indices(P, np.array([1., 0.])).indices == (2,)
    active = active_indices(P, np.array([1., 1.]))
    assert active.indices == (1, 2) and active.on_boundary
    assert active_indices(P, np.array([1., 1. + 1e-12]), 1e-9).indices == (1, 2)
    assert not active_indices(P, np.array([0., 1.])).on_boundary


def test_no_region_contains():
    q = LinearForm([1., 0.])
    P = ProperPartition(2, [Region([(LinearForm([1., 0.], -1.), 1)], 1), Region([(q, -1)], 2)])
    with pytest.raises(NoRegionContains):
        active_indices(P, np.array([0.5, 0.]))


def test_interior_points_have_one_region():
    P = flower_partition()
    X = np.random.default_rng(0).uniform(-2, 2, (1000, 2))
    X = X[np.abs(X[:, 0] ** 2 - X[:, 1] ** 2) > 1e-6]
    assert all(len(active_indices(P, x, 0.).indices) == 1 for x in X)


def test_surface_sample_flower():
    P = flower_partition()
    points = surface_sample(P, 1, 2, 50, [-2., 2.], seed=3)
    assert len(points) == 50
    for x in points:
        assert abs(x @ np.diag([-1., 1.]) @ x) <= 1e-10
        assert len(active_indices(P, x, 1e-8).indices) >= 2
    again = surface_sample(P, 1, 2, 50, [-2., 2.], seed=3)
    assert all(np.array_equal(a, b) for a, b in zip(points, again))


def test_surface_sample_halfspace():
    points = surface_sample(halfspace_partition(), 2, 1, 20, [-1., 1.], seed=0)
    assert all(abs(x[0] + 2 * x[1]) <= 1e-10 for x in points)
    assert surface_sample(halfspace_partition(), 1, 2, 0, [-1., 1.]) == []


def test_surface_sample_no_crossing():
    q = LinearForm([1., 0.], -5.)
    P = ProperPartition(2, [Region([(q, 1)], 1), Region([(q, -1)], 2)])
    with pytest.raises(NoCrossingFound):
        surface_sample(P, 1, 2, 5, [-1., 1.])


def test_validate_partition():
    assert validate_partition(flower_partition(), 10000, [-3., 3.]).passed

    q = LinearForm([1., 0.])
    duplicated = ProperPartition(2, [Region([(q, 1)], 1), Region([(q, 1)], 2), Region([(q, -1)], 3)])
    report = validate_partition(duplicated, 1000, [-1., 1.])
    assert not report.passed and report.overlap_failures > 0 and report.covering_failures == 0

    gap = ProperPartition(2, [Region([(LinearForm([1., 0.], -1.), 1)], 1), Region([(q, -1)], 2)])
    report = validate_partition(gap, 1000, [-2., 2.])
    assert not report.passed and report.covering_failures > 0
    assert all(0 < w[0] < 1 for w in report.witnesses)


def test_partition_dict():
    P = flower_partition()
    Q = partition_from_dict(P.to_dict())
    assert Q.same_as(P) and Q.labels == (1, 2)
    with pytest.raises(ValueError):
        ProperPartition(2, [Region([], 1), Region([], 1)])
