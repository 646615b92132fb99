""" Piecewise C¹ functions, their Clarke gradient hulls and the set-valued derivatives along a Filippov hull.

The Clarke derivative is the range of ⟨p, f⟩ over p ∈ ∂V(x), f ∈ F(x, u). The Lie derivative keeps the values a
for which one f ∈ F(x, u) gives ⟨p, f⟩ = a for every p ∈ ∂V(x); it may be empty.
"""

import itertools
import logging
from collections import namedtuple
import numpy as np
import cvxopt
import cvxopt.solvers

from .errors import DimensionMismatch
from .partition import QuadraticForm, active_indices

logger = logging.getLogger(__name__)


class PiecewiseC1Fn:
    """ V(x) = V_j(x) for x in region j of its own partition (which need not be the partition of the system). """

    def __init__(self, partition, pieces):
        self.partition = partition
        if not isinstance(pieces, dict):
            pieces = dict(zip(partition.labels, pieces))
        if set(pieces) != set(partition.labels):
            raise DimensionMismatch("Pieces {} do not match region labels {}.".format(sorted(pieces), partition.labels))
        for label, piece in pieces.items():
            if piece.dim != partition.dim:
                raise DimensionMismatch("Piece {} has dimension {}, partition has {}.".format(
                    label, piece.dim, partition.dim))
        self.pieces = pieces

    @property
    def dim(self):
        return self.partition.dim

    def piece(self, label):
        return self.pieces[label]

    def value(self, x, tol=1e-9):
        """ V at one point (n,) or a batch (N, n); the piece of the first region containing the point is used. """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            label = active_indices(self.partition, x, tol).indices[0]
            return float(self.pieces[label].value(x))
        member = self.partition.membership(x, tol)
        if not np.all(member.any(axis=1)):
            active_indices(self.partition, x[~member.any(axis=1)][0], tol)
        owner = member.argmax(axis=1)
        out = np.empty(len(x))
        for k, label in enumerate(self.partition.labels):
            mask = owner == k
            if mask.any():
                out[mask] = self.pieces[label].value(x[mask])
        return out

    def to_dict(self):
        return dict(partition=self.partition.to_dict(), pieces={str(k): p.to_dict() for k, p in self.pieces.items()})


class PiecewiseQuadratic(PiecewiseC1Fn):
    """ V_j(x) = xᵀP_j x. """

    def __init__(self, partition, P):
        if not isinstance(P, dict):
            P = dict(zip(partition.labels, P))
        self.P = {k: np.asarray(v, dtype=np.float64) for k, v in P.items()}
        super().__init__(partition, {k: QuadraticForm(v) for k, v in self.P.items()})


GradientHull = namedtuple('GradientHull', 'vertices indices x')


class DerivativeInterval(namedtuple('DerivativeInterval', 'lo hi empty')):
    """ Closed interval [lo, hi], or empty with lo = +∞ and hi = −∞ so that max ∅ = −∞. """

    @property
    def max(self):
        return self.hi

    @property
    def min(self):
        return self.lo

    def to_dict(self):
        if self.empty:
            return dict(kind='empty')
        return dict(kind='interval', lo=self.lo, hi=self.hi)


EMPTY = DerivativeInterval(np.inf, -np.inf, True)


def interval(lo, hi):
    return DerivativeInterval(float(lo), float(hi), False)


def gradient_hull(V, x, tol=1e-9):
    """ Gradients ∇V_j(x) of the pieces active at x; their convex hull is the Clarke gradient ∂V(x).
    Composite functions (see compose) supply their own hull.
    """
    if not isinstance(V, PiecewiseC1Fn):
        return V.gradient_hull(x, tol)
    x = np.asarray(x, dtype=np.float64)
    indices = active_indices(V.partition, x, tol).indices
    return GradientHull(np.array([V.pieces[j].gradient(x) for j in indices]), indices, x)


def _operands(V, hull, x, tol):
    x = np.asarray(x, dtype=np.float64)
    F = np.atleast_2d(hull.vertices)
    if x.shape != (V.dim,) or F.shape[1] != V.dim:
        raise DimensionMismatch("Function of dimension {} with x of shape {} and hull vertices of shape {}.".format(
            V.dim, x.shape, F.shape))
    if tol is None:
        tol = getattr(hull, 'tol', 1e-9)
    return gradient_hull(V, x, tol).vertices, F


def clarke_interval(V, hull, x, tol=None):
    """ Bilinear in (p, f), so the extremes sit at pairs of vertices. """
    G, F = _operands(V, hull, x, tol)
    values = G @ F.T
    return interval(values.min(), values.max())


def _feasibility_scale(G, F):
    return max(np.abs(G).max(initial=0.) * np.abs(F).max(initial=0.), 1e-300)


def _lie_enumerate(E, c, rtol):
    """ Vertices of {λ ≥ 0, Σλ = 1, Eλ = 0} are basic solutions with support no larger than the row count. """
    m = len(c)
    A = np.vstack([E, np.ones((1, m))])
    b = np.zeros(len(A))
    b[-1] = 1.
    values = []
    for size in range(1, min(len(A), m) + 1):
        for support in itertools.combinations(range(m), size):
            cols = list(support)
            lam_s, *_ = np.linalg.lstsq(A[:, cols], b, rcond=None)
            if np.max(np.abs(A[:, cols] @ lam_s - b)) > rtol or np.any(lam_s < -rtol):
                continue
            values.append(c[cols] @ np.maximum(lam_s, 0.) / np.maximum(lam_s, 0.).sum())
    if not values:
        return EMPTY
    return interval(min(values), max(values))


# Phase one counts a residual up to LP_FEASIBILITY_TOL as feasible.
LP_OPTIONS = dict(show_progress=False, abstol=1e-12, reltol=1e-12, feastol=1e-12, maxiters=200)
LP_FEASIBILITY_TOL = 1e-7


def _lp(objective, G, h, A, b):
    res = cvxopt.solvers.lp(*map(lambda v: cvxopt.matrix(np.asarray(v, dtype=np.float64)), (objective, G, h, A, b)),
                            options=LP_OPTIONS)
    return res['status'], np.array(res['x']).reshape(-1) if res['x'] is not None else None


def _lie_lp(E, c, rtol):
    """ Phase one minimises t with |Eλ| ≤ t over the simplex; phase two optimises c·λ on the feasible set.

    A residual below the solver accuracy counts as feasible; a failed solve returns the whole hull range.
    """
    r, m = E.shape
    # Variables (λ, t).
    G = np.vstack([np.hstack([E, -np.ones((r, 1))]), np.hstack([-E, -np.ones((r, 1))]),
                   np.hstack([-np.eye(m), np.zeros((m, 1))])])
    h = np.zeros(2 * r + m)
    A = np.hstack([np.ones((1, m)), np.zeros((1, 1))])
    objective = np.zeros(m + 1)
    objective[-1] = 1.
    _, z = _lp(objective, G, h, A, np.ones(1))
    if z is not None and z[-1] > max(rtol, LP_FEASIBILITY_TOL):
        return EMPTY
    if z is None:
        logger.warning("Phase one LP returned no point; falling back to the hull range.")
        return interval(c.min(), c.max())

    slack = max(rtol, 2 * max(z[-1], 0.))
    G2 = np.vstack([E, -E, -np.eye(m)])
    h2 = np.concatenate([np.full(2 * r, slack), np.zeros(m)])
    A2 = np.ones((1, m))
    _, lo = _lp(c, G2, h2, A2, np.ones(1))
    _, hi = _lp(-c, G2, h2, A2, np.ones(1))
    if lo is None or hi is None:
        logger.warning("Phase two LP returned no point; falling back to the hull range.")
        return interval(c.min(), c.max())
    return interval(c @ lo, c @ hi)


def lie_interval(V, hull, x, tol=None, method='auto', max_enumerate=6):
    """ Lie derivative of V along the Filippov hull at x.

    With f = Σλᵢfᵢ over the unit simplex and pivot j₀ the smallest active piece, the feasible set is
    {λ : ⟨∇V_j − ∇V_j₀, f(λ)⟩ = 0 for every active j}; the result is the range of ⟨∇V_j₀, f(λ)⟩ over it.

    :param method: 'enumerate' (basic solutions, exact), 'lp' (dense LP) or 'auto' (enumerate up to max_enumerate
        hull vertices)
    """
    G, F = _operands(V, hull, x, tol)
    if len(G) == 1:
        values = G[0] @ F.T
        return interval(values.min(), values.max())
    scale = _feasibility_scale(G, F)
    E = (G[1:] - G[0]) @ F.T / scale
    c = G[0] @ F.T
    if method == 'enumerate' or (method == 'auto' and len(F) <= max_enumerate):
        return _lie_enumerate(E, c, 1e-9)
    if method not in ('lp', 'auto'):
        raise ValueError("Unknown Lie interval method: {}.".format(method))
    return _lie_lp(E, c, 1e-9)


class ContinuityReport(namedtuple('ContinuityReport', 'passed worst witness pair n')):
    def to_dict(self):
        return dict(passed=self.passed, worst=self.worst, n=self.n,
                    witness=None if self.witness is None else self.witness.tolist(),
                    pair=None if self.pair is None else list(self.pair))


def continuity_check(V, samples_by_pair, tol=1e-8):
    """ max |V_i(x) − V_j(x)| over surface samples x of each adjacent pair (i, j).
    :param samples_by_pair: {(i, j): [x, ...]} as produced by partition.surface_sample
    """
    worst, witness, worst_pair, n = 0., None, None, 0
    for (i, j), points in samples_by_pair.items():
        for x in points:
            gap = abs(float(V.pieces[i].value(x)) - float(V.pieces[j].value(x)))
            n += 1
            if gap > worst or witness is None:
                worst, witness, worst_pair = gap, np.asarray(x, dtype=np.float64), (i, j)
    if n == 0:
        logger.warning("Continuity check has no surface samples; passing vacuously.")
        return ContinuityReport(True, 0., None, None, 0)
    return ContinuityReport(bool(worst <= tol), float(worst), witness, worst_pair, n)
