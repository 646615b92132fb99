""" Proper partitions of the state space.

A region is a conjunction of sign constraints (field, sign) meaning sign·field(x) ≥ 0. Membership queries take a slack
tol so that boundary points activate every adjacent region.
"""

import logging
from collections import namedtuple
import numpy as np
import scipy.optimize

from .errors import NoRegionContains, NoCrossingFound, DimensionMismatch, NotSymmetric
from .kfun import BRENT_RTOL

logger = logging.getLogger(__name__)


class ScalarField:
    """ A C¹ function ℝⁿ → ℝ with analytic gradient. value and gradient accept one point (n,) or a batch (N, n). """
    form = None

    def __init__(self, dim):
        self.dim = int(dim)

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise DimensionMismatch("Field of dimension {} evaluated at a point of dimension {}.".format(
                self.dim, x.shape[-1]))
        return x

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError


class LinearForm(ScalarField):
    """ q(x) = v·x + offset. """
    form = 'linear'

    def __init__(self, v, offset=0.):
        self.v = np.asarray(v, dtype=np.float64).reshape(-1)
        self.offset = float(offset)
        super().__init__(len(self.v))

    def value(self, x):
        return self._check(x) @ self.v + self.offset

    def gradient(self, x):
        x = self._check(x)
        return np.broadcast_to(self.v, x.shape).copy()

    def to_dict(self):
        return dict(form=self.form, v=self.v.tolist(), offset=self.offset)


class QuadraticForm(ScalarField):
    """ q(x) = xᵀQx. """
    form = 'quadratic'

    def __init__(self, Q):
        Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        if Q.shape[0] != Q.shape[1]:
            raise DimensionMismatch("Quadratic form needs a square matrix, got shape {}.".format(Q.shape))
        if np.max(np.abs(Q - Q.T), initial=0.) > 1e-12:
            raise NotSymmetric("Quadratic form matrix is not symmetric.")
        self.Q = Q
        super().__init__(len(Q))

    def value(self, x):
        x = self._check(x)
        return np.einsum('...i,ij,...j->...', x, self.Q, x)

    def gradient(self, x):
        return 2 * self._check(x) @ self.Q

    def to_dict(self):
        return dict(form=self.form, Q=self.Q.tolist())


class Callback(ScalarField):
    """ User supplied field: fn(x) -> float and grad(x) -> (n,) on single points. """
    form = 'callback'

    def __init__(self, dim, fn, grad):
        super().__init__(dim)
        self.fn, self.grad = fn, grad

    def value(self, x):
        x = self._check(x)
        if x.ndim == 1:
            return float(self.fn(x))
        return np.array([self.fn(xi) for xi in x])

    def gradient(self, x):
        x = self._check(x)
        if x.ndim == 1:
            return np.asarray(self.grad(x), dtype=np.float64)
        return np.array([self.grad(xi) for xi in x])

    def to_dict(self):
        raise ValueError("Callback fields cannot be serialized.")


def field_from_dict(d):
    form = d.get('form')
    if form == 'linear':
        return LinearForm(d['v'], d.get('offset', 0.))
    if form == 'quadratic':
        return QuadraticForm(d['Q'])
    raise ValueError("Unknown scalar field form: {}.".format(form))


Constraint = namedtuple('Constraint', 'field sign')


class Region:
    """ {x : sign·field(x) ≥ 0 for every constraint}. No constraint means the whole space. """

    def __init__(self, constraints, label):
        self.constraints = [Constraint(field, int(sign)) for field, sign in constraints]
        for c in self.constraints:
            if c.sign not in (1, -1):
                raise ValueError("Constraint sign must be +1 or -1, got {}.".format(c.sign))
        self.label = label

    def values(self, x):
        """ Signed constraint values, shape x.shape[:-1] + (n_constraints,). """
        x = np.asarray(x, dtype=np.float64)
        if not self.constraints:
            return np.zeros(x.shape[:-1] + (0,))
        return np.stack([c.sign * c.field.value(x) for c in self.constraints], axis=-1)

    def contains(self, x, tol=0.):
        return np.all(self.values(x) >= -tol, axis=-1)

    def interior(self, x, tol=0.):
        return np.all(self.values(x) > tol, axis=-1)


class ProperPartition:
    """ Finitely many closed regions covering ℝⁿ, labelled 1..K unless labels are given. """

    def __init__(self, dim, regions, labels=None):
        self.dim = int(dim)
        if labels is None:
            labels = [r.label if isinstance(r, Region) and r.label is not None else k + 1
                      for k, r in enumerate(regions)]
        if len(set(labels)) != len(labels):
            raise ValueError("Duplicated region labels: {}.".format(labels))
        self.labels = tuple(labels)
        self.regions = [r if isinstance(r, Region) else Region(r, label) for r, label in zip(regions, labels)]
        for r, label in zip(self.regions, labels):
            r.label = label
            for c in r.constraints:
                if c.field.dim != self.dim:
                    raise DimensionMismatch("Region {} has a field of dimension {} in a partition of dimension {}."
                                            .format(label, c.field.dim, self.dim))

    def __len__(self):
        return len(self.regions)

    def region(self, label):
        return self.regions[self.labels.index(label)]

    @property
    def fields(self):
        """ Distinct constraint fields, in order of first appearance. """
        out = []
        for r in self.regions:
            for c in r.constraints:
                if not any(c.field is f for f in out):
                    out.append(c.field)
        return out

    def membership(self, X, tol=0.):
        """ Boolean matrix (N, K): region k contains X[n] within slack tol. """
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.stack([r.contains(X, tol) for r in self.regions], axis=-1)

    def to_dict(self):
        fields = self.fields
        names = ['q{}'.format(k + 1) for k in range(len(fields))]
        regions = []
        for r in self.regions:
            constraints = [[names[next(k for k, f in enumerate(fields) if f is c.field)], c.sign]
                           for c in r.constraints]
            regions.append(dict(label=r.label, constraints=constraints))
        return dict(dim=self.dim, fields={n: f.to_dict() for n, f in zip(names, fields)}, regions=regions)

    def same_as(self, other):
        if other is self:
            return True
        try:
            return self.to_dict() == other.to_dict()
        except ValueError:
            return False


def partition_from_dict(d):
    fields = {name: field_from_dict(f) for name, f in d['fields'].items()}
    regions, labels = [], []
    for r in d['regions']:
        regions.append(Region([(fields[name], sign) for name, sign in r['constraints']], r['label']))
        labels.append(r['label'])
    return ProperPartition(d['dim'], regions, labels)


ActiveSet = namedtuple('ActiveSet', 'indices on_boundary')


def active_indices(P, x, tol=1e-9):
    """ Labels of the regions containing x within slack tol. """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (P.dim,):
        raise DimensionMismatch("Point of shape {} in a partition of dimension {}.".format(x.shape, P.dim))
    indices, near = [], False
    for r in P.regions:
        values = r.values(x)
        if np.all(values >= -tol):
            indices.append(r.label)
            near = near or bool(np.any(np.abs(values) <= tol))
    if not indices:
        raise NoRegionContains("No region contains x={} (tol={}).".format(x.tolist(), tol))
    return ActiveSet(tuple(sorted(indices)), len(indices) >= 2 or near)


def box_bounds(box, dim):
    """ (lo, hi) arrays from either one [lo, hi] pair or one pair per dimension. """
    box = np.asarray(box, dtype=np.float64)
    if box.shape == (2,):
        box = np.tile(box, (dim, 1))
    if box.shape != (dim, 2) or np.any(box[:, 0] >= box[:, 1]):
        raise ValueError("Invalid box of shape {} for dimension {}.".format(box.shape, dim))
    return box[:, 0], box[:, 1]


def sample_box(rng, box, dim, n):
    lo, hi = box_bounds(box, dim)
    return lo + (hi - lo) * rng.random((n, dim))


def surface_sample(P, i, j, n, box, seed=0, batch=256, max_draws=None):
    """ Up to n points on the common boundary of regions i and j.

    Draws segments between strict interior points of i and j and solves for the sign change of the first
    constraint of i violated at the j end, to |value| ≤ 1e-10.
    """
    if i == j:
        raise ValueError("Surface sampling needs two distinct regions, got {} twice.".format(i))
    if n <= 0:
        return []
    rng = np.random.default_rng(seed)
    ri, rj = P.region(i), P.region(j)
    max_draws = 50 * n + 1000 if max_draws is None else max_draws

    pool_i, pool_j = np.empty((0, P.dim)), np.empty((0, P.dim))
    for _ in range(20):
        X = sample_box(rng, box, P.dim, batch)
        pool_i = np.concatenate([pool_i, X[ri.interior(X)]])
        pool_j = np.concatenate([pool_j, X[rj.interior(X)]])
        if len(pool_i) and len(pool_j):
            break
    else:
        raise NoCrossingFound("Regions {} and {} have no interior points in the box.".format(i, j))

    points, draws = [], 0
    while len(points) < n and draws < max_draws:
        draws += 1
        a = pool_i[rng.integers(len(pool_i))]
        b = pool_j[rng.integers(len(pool_j))]
        violated = [c for c in ri.constraints if c.sign * c.field.value(b) < 0]
        if not violated:
            continue
        c = violated[0]
        t = scipy.optimize.brentq(lambda t: c.sign * c.field.value(a + t * (b - a)), 0., 1.,
                                  xtol=1e-16, rtol=BRENT_RTOL)
        x = a + t * (b - a)
        if abs(c.field.value(x)) > 1e-10:
            continue
        if {i, j} <= set(active_indices(P, x, 1e-8).indices):
            points.append(x)

    if not points:
        raise NoCrossingFound("No common boundary point of regions {} and {} after {} draws.".format(i, j, draws))
    if len(points) < n:
        logger.warning("Surface sampling returned %d of %d points for regions (%s, %s).", len(points), n, i, j)
    return points


class PartitionReport(namedtuple('PartitionReport', 'passed n covering_failures overlap_failures witnesses')):
    def to_dict(self):
        return dict(passed=self.passed, n=self.n, covering_failures=self.covering_failures,
                    overlap_failures=self.overlap_failures, witnesses=[w.tolist() for w in self.witnesses])


def validate_partition(P, n, box, seed=0, tol=1e-9, max_witnesses=10):
    """ Samples n uniform points: reports points in no region and points interior to two regions. """
    if n < 1:
        raise ValueError("Partition validation needs n ≥ 1, got {}.".format(n))
    rng = np.random.default_rng(seed)
    X = sample_box(rng, box, P.dim, n)
    covered = P.membership(X, tol).any(axis=1)
    interior = np.stack([r.interior(X, tol) for r in P.regions], axis=-1).sum(axis=1)
    gaps, overlaps = ~covered, interior >= 2
    witnesses = list(X[gaps | overlaps][:max_witnesses])
    report = PartitionReport(bool(not gaps.any() and not overlaps.any()), n, int(gaps.sum()), int(overlaps.sum()),
                             witnesses)
    logger.info("Partition validation: %d covering failures, %d overlap failures out of %d.", report.covering_failures,
                report.overlap_failures, n)
    return report
