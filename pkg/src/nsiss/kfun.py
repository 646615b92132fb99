""" Comparison functions (class K, K∞, positive definite) and their algebra.

Every function is an immutable object evaluated lazily on float arrays. Leaves are parametric
(Linear, Power, Constant) or knot tables (PiecewiseLinear, MonotoneInterpolant); everything else
is a node of a composition tree (Chain, Extremum, Sum, Product, Scale, Integral, Inverse, Derivative).
"""

import logging
import numpy as np
import scipy.integrate
import scipy.interpolate
import scipy.optimize

from .errors import (NegativeArgument, OutOfRange, NotInvertible, TagMismatch, NonPositiveIntegrand, EmptyGrid,
                     SmallGainViolated, ConstructionFailed)

logger = logging.getLogger(__name__)

K = 'K'
KINF = 'Kinf'
PD = 'PD'
NONDEC = 'NonDecreasing'
POSITIVE = 'Positive'  # Internal: positive everywhere, no monotonicity (σ′ for instance).

K_CLASS = (K, KINF)
ZERO_AT_ZERO = (K, KINF, PD)
MONOTONE = (K, KINF, NONDEC)

SLOPE_FLOOR = 1e-9
# Smallest relative tolerance brentq accepts.
BRENT_RTOL = 4 * np.finfo(np.float64).eps


def _nonneg(s):
    s = np.asarray(s, dtype=np.float64)
    if np.any(s < 0):
        raise NegativeArgument("Comparison functions take nonnegative arguments, got {}.".format(np.min(s)))
    return s


def _output(s, v):
    return float(v) if np.ndim(s) == 0 else np.asarray(v, dtype=np.float64)


def log_grid(lo=1e-6, hi=1e3, n=1000):
    """ n log-spaced points in [lo, hi]. """
    return np.logspace(np.log10(lo), np.log10(hi), n)


class ComparisonFn:
    """ A scalar function on [0, ∞) carrying a class tag.
    Subclasses implement _value and _derivative on float arrays, and optionally _inverse on a float.
    """
    form = None
    tag = K

    def __call__(self, s):
        s = _nonneg(s)
        return _output(s, self._value(s))

    def derivative(self, s):
        s = _nonneg(s)
        return _output(s, self._derivative(s))

    def smooth_at(self, s):
        return True

    def _inverse(self, y):
        return None

    @property
    def sup(self):
        return np.inf

    @property
    def is_zero(self):
        return False

    @property
    def children(self):
        return ()

    def to_dict(self):
        raise NotImplementedError

    def __repr__(self):
        try:
            return '{}({})'.format(type(self).__name__, self.to_dict())
        except NotImplementedError:
            # Not serialisable, for instance a user subclass or a chain holding one.
            return '{}(tag={}, sup={})'.format(type(self).__name__, getattr(self, 'tag', None), self.sup)


class Linear(ComparisonFn):
    form = 'linear'

    def __init__(self, c):
        if c < 0:
            raise ValueError("Linear slope must be nonnegative, got {}.".format(c))
        self.c = float(c)
        self.tag = KINF if self.c > 0 else NONDEC

    def _value(self, s):
        return self.c * s

    def _derivative(self, s):
        return np.full_like(s, self.c)

    def _inverse(self, y):
        return y / self.c

    @property
    def sup(self):
        return np.inf if self.c > 0 else 0.

    @property
    def is_zero(self):
        return self.c == 0

    def to_dict(self):
        return dict(form=self.form, c=self.c)


def zero():
    """ The zero gain (χ ≡ 0, γ ≡ 0), tagged NonDecreasing. """
    return Linear(0.)


class Power(ComparisonFn):
    """ s ↦ c·s^p. """
    form = 'power'
    tag = KINF

    def __init__(self, c, p):
        if c <= 0 or p <= 0:
            raise ValueError("Power needs c > 0 and p > 0, got c={}, p={}.".format(c, p))
        self.c = float(c)
        self.p = float(p)

    def _value(self, s):
        return self.c * s ** self.p

    def _derivative(self, s):
        with np.errstate(divide='ignore'):
            if self.p == 1:
                return np.full_like(s, self.c)
            return np.where(s > 0, self.c * self.p * s ** (self.p - 1), 0. if self.p > 1 else np.inf)

    def _inverse(self, y):
        return (y / self.c) ** (1 / self.p)

    def to_dict(self):
        return dict(form=self.form, c=self.c, p=self.p)


class Constant(ComparisonFn):
    form = 'constant'
    tag = NONDEC

    def __init__(self, c):
        if c < 0:
            raise ValueError("Constant must be nonnegative, got {}.".format(c))
        self.c = float(c)

    def _value(self, s):
        return np.full_like(s, self.c)

    def _derivative(self, s):
        return np.zeros_like(s)

    @property
    def sup(self):
        return self.c

    def to_dict(self):
        return dict(form=self.form, c=self.c)


class PiecewiseLinear(ComparisonFn):
    """ Linear interpolation of (s, value) knots starting at s=0, extended beyond the last knot
    with the slope of the last segment. """
    form = 'piecewise_linear'

    def __init__(self, knots, tag=None):
        knots = np.asarray(knots, dtype=np.float64)
        if knots.ndim != 2 or knots.shape[1] != 2 or len(knots) < 2:
            raise ValueError("Knots must be a list of at least two (s, value) pairs, got shape {}.".format(knots.shape))
        self.s, self.v = knots[:, 0].copy(), knots[:, 1].copy()
        if self.s[0] != 0 or np.any(np.diff(self.s) <= 0):
            raise ValueError("Knot abscissae must start at 0 and be strictly increasing.")
        self.slopes = np.diff(self.v) / np.diff(self.s)

        increasing = np.all(self.slopes > 0)
        if tag is None:
            if increasing and self.v[0] == 0:
                tag = KINF
            elif np.all(self.slopes >= 0) and self.v[0] >= 0:
                tag = NONDEC
            else:
                raise ValueError("Knot values are not monotone.")
        if tag in K_CLASS and not (increasing and self.v[0] == 0):
            raise TagMismatch("Knots tagged {} must start at 0 and increase strictly.".format(tag))
        if tag == NONDEC and np.any(self.slopes < 0):
            raise TagMismatch("Knots tagged NonDecreasing must not decrease.")
        self.tag = tag

    @property
    def knots(self):
        return np.stack([self.s, self.v], axis=1)

    def _segment(self, s):
        return np.clip(np.searchsorted(self.s, s, side='right') - 1, 0, len(self.slopes) - 1)

    def _value(self, s):
        k = self._segment(s)
        return self.v[k] + self.slopes[k] * (s - self.s[k])

    def _derivative(self, s):
        """ Right derivative at knots. """
        return self.slopes[self._segment(s)]

    def smooth_at(self, s):
        interior = self.s[1:-1]
        hit = np.isin(s, interior)
        if not hit:
            return True
        k = np.searchsorted(self.s, s)
        return self.slopes[k - 1] == self.slopes[k]

    def _inverse(self, y):
        if self.tag not in K_CLASS:
            return None
        if y <= self.v[-1]:
            return float(np.interp(y, self.v, self.s))
        return self.s[-1] + (y - self.v[-1]) / self.slopes[-1]

    @property
    def sup(self):
        return np.inf if self.slopes[-1] > 0 else self.v[-1]

    def to_dict(self):
        return dict(form=self.form, knots=self.knots.tolist(), tag=self.tag)


class MonotoneInterpolant(ComparisonFn):
    """ C¹ monotone cubic Hermite interpolant of (s, value, derivative) knots, extended linearly beyond the
    last knot with its endpoint slope. """
    form = 'interpolant'
    tag = KINF

    def __init__(self, s, v, d):
        self.s = np.asarray(s, dtype=np.float64)
        self.v = np.asarray(v, dtype=np.float64)
        self.d = np.asarray(d, dtype=np.float64)
        if self.s[0] != 0 or self.v[0] != 0:
            raise ValueError("Interpolant must start at (0, 0).")
        if np.any(np.diff(self.s) <= 0) or np.any(np.diff(self.v) <= 0) or np.any(self.d <= 0):
            raise TagMismatch("Interpolant knots must increase strictly with positive slopes.")
        self.spline = scipy.interpolate.CubicHermiteSpline(self.s, self.v, self.d)
        self.dspline = self.spline.derivative()

    @classmethod
    def fit(cls, s, v, slope_floor=SLOPE_FLOOR):
        """ Monotone (PCHIP) slopes for strictly increasing data, floored at slope_floor. """
        d = scipy.interpolate.PchipInterpolator(s, v).derivative()(s)
        return cls(s, v, np.maximum(d, slope_floor))

    @property
    def knots(self):
        return np.stack([self.s, self.v, self.d], axis=1)

    def _value(self, s):
        inside = s <= self.s[-1]
        return np.where(inside, self.spline(np.minimum(s, self.s[-1])), self.v[-1] + self.d[-1] * (s - self.s[-1]))

    def _derivative(self, s):
        inside = s <= self.s[-1]
        return np.where(inside, self.dspline(np.minimum(s, self.s[-1])), self.d[-1])

    def _inverse(self, y):
        if y > self.v[-1]:
            return self.s[-1] + (y - self.v[-1]) / self.d[-1]
        k = min(max(int(np.searchsorted(self.v, y)), 1), len(self.s) - 1)
        lo, hi = self.s[k - 1], self.s[k]
        if self.v[k] == y:
            return hi
        return scipy.optimize.brentq(lambda t: float(self.spline(t)) - y, lo, hi, xtol=1e-300, rtol=BRENT_RTOL)

    def to_dict(self):
        return dict(form=self.form, knots=self.knots.tolist())


# Composition nodes.

def _chain_tag(outer, inner):
    if inner.tag in (PD, POSITIVE):
        raise TagMismatch("Cannot compose with a non monotone inner function tagged {}.".format(inner.tag))
    if inner.tag == NONDEC:
        if outer.tag not in MONOTONE:
            raise TagMismatch("Outer function tagged {} does not preserve monotonicity.".format(outer.tag))
        return NONDEC
    if outer.tag in K_CLASS:
        return KINF if outer.tag == KINF and inner.tag == KINF else K
    return outer.tag


class Chain(ComparisonFn):
    """ outer ∘ inner. """
    form = 'compose'

    def __init__(self, outer, inner):
        self.outer, self.inner = outer, inner
        self.tag = _chain_tag(outer, inner)

    def _value(self, s):
        return self.outer._value(self.inner._value(s))

    def _derivative(self, s):
        return self.outer._derivative(self.inner._value(s)) * self.inner._derivative(s)

    def smooth_at(self, s):
        return self.inner.smooth_at(s) and self.outer.smooth_at(float(self.inner(s)))

    def _inverse(self, y):
        if self.tag not in K_CLASS:
            return None
        return invert(self.inner, invert(self.outer, y))

    @property
    def sup(self):
        inner_sup = self.inner.sup
        return self.outer.sup if np.isinf(inner_sup) else float(self.outer(inner_sup))

    @property
    def children(self):
        return self.outer, self.inner

    def to_dict(self):
        return dict(form=self.form, outer=self.outer.to_dict(), inner=self.inner.to_dict())


def _extremum_tag(kind, f, g):
    if f.tag in K_CLASS and g.tag in K_CLASS:
        if kind == 'max':
            return KINF if KINF in (f.tag, g.tag) else K
        return KINF if f.tag == g.tag == KINF else K
    if f.tag in ZERO_AT_ZERO and g.tag in ZERO_AT_ZERO:
        return PD
    if f.tag == g.tag == NONDEC:
        return NONDEC
    raise TagMismatch("Pointwise {} needs two K-class or two PD functions, got {} and {}.".format(kind, f.tag, g.tag))


class Extremum(ComparisonFn):
    def __init__(self, kind, f, g):
        if kind not in ('max', 'min'):
            raise ValueError("Unknown extremum: {}.".format(kind))
        self.kind, self.f, self.g = kind, f, g
        self.form = kind
        self.tag = _extremum_tag(kind, f, g)
        self._pick = np.maximum if kind == 'max' else np.minimum

    def _value(self, s):
        return self._pick(self.f._value(s), self.g._value(s))

    def _derivative(self, s):
        fs, gs = self.f._value(s), self.g._value(s)
        first = fs >= gs if self.kind == 'max' else fs <= gs
        return np.where(first, self.f._derivative(s), self.g._derivative(s))

    def smooth_at(self, s):
        return self.f.smooth_at(s) and self.g.smooth_at(s) and float(self.f(s)) != float(self.g(s))

    @property
    def sup(self):
        return max(self.f.sup, self.g.sup) if self.kind == 'max' else min(self.f.sup, self.g.sup)

    @property
    def children(self):
        return self.f, self.g

    def to_dict(self):
        return dict(form=self.form, f=self.f.to_dict(), g=self.g.to_dict())


def _sum_tag(f, g):
    if f.tag in K_CLASS and g.tag in K_CLASS:
        return KINF if KINF in (f.tag, g.tag) else K
    if f.tag in ZERO_AT_ZERO and g.tag in ZERO_AT_ZERO:
        return PD
    if f.tag in MONOTONE and g.tag in MONOTONE:
        return NONDEC
    raise TagMismatch("Cannot add functions tagged {} and {}.".format(f.tag, g.tag))


class Sum(ComparisonFn):
    form = 'sum'

    def __init__(self, f, g):
        self.f, self.g = f, g
        self.tag = _sum_tag(f, g)

    def _value(self, s):
        return self.f._value(s) + self.g._value(s)

    def _derivative(self, s):
        return self.f._derivative(s) + self.g._derivative(s)

    def smooth_at(self, s):
        return self.f.smooth_at(s) and self.g.smooth_at(s)

    @property
    def sup(self):
        return self.f.sup + self.g.sup

    @property
    def children(self):
        return self.f, self.g

    def to_dict(self):
        return dict(form=self.form, f=self.f.to_dict(), g=self.g.to_dict())


def _product_tag(f, g):
    if f.tag in K_CLASS and g.tag in K_CLASS:
        return KINF if f.tag == g.tag == KINF else K
    for a, b in ((f, g), (g, f)):
        if a.tag in K_CLASS and b.tag == NONDEC:
            return a.tag if float(b(0.)) > 0 else NONDEC
        if a.tag in ZERO_AT_ZERO and b.tag == POSITIVE:
            return PD
    if f.tag == g.tag == NONDEC:
        return NONDEC
    raise TagMismatch("Cannot multiply functions tagged {} and {}.".format(f.tag, g.tag))


class Product(ComparisonFn):
    form = 'product'

    def __init__(self, f, g):
        self.f, self.g = f, g
        self.tag = _product_tag(f, g)

    def _value(self, s):
        return self.f._value(s) * self.g._value(s)

    def _derivative(self, s):
        return self.f._derivative(s) * self.g._value(s) + self.f._value(s) * self.g._derivative(s)

    def smooth_at(self, s):
        return self.f.smooth_at(s) and self.g.smooth_at(s)

    @property
    def sup(self):
        return self.f.sup * self.g.sup

    @property
    def children(self):
        return self.f, self.g

    def to_dict(self):
        return dict(form=self.form, f=self.f.to_dict(), g=self.g.to_dict())


class Scale(ComparisonFn):
    """ s ↦ c·f(s). """
    form = 'scale'

    def __init__(self, c, f):
        if c <= 0:
            raise ValueError("Scale factor must be positive, got {}.".format(c))
        self.c, self.f = float(c), f
        self.tag = f.tag

    def _value(self, s):
        return self.c * self.f._value(s)

    def _derivative(self, s):
        return self.c * self.f._derivative(s)

    def smooth_at(self, s):
        return self.f.smooth_at(s)

    def _inverse(self, y):
        return invert(self.f, y / self.c) if self.tag in K_CLASS else None

    @property
    def sup(self):
        return self.c * self.f.sup

    @property
    def children(self):
        return self.f,

    def to_dict(self):
        return dict(form=self.form, c=self.c, f=self.f.to_dict())


class Integral(ComparisonFn):
    """ ℓ(s) = ∫₀ˢ ν(r) dr by adaptive quadrature, with a cumulative table at the knots of ν. """
    form = 'integral'
    tag = KINF

    def __init__(self, nu, epsabs=1e-10):
        self.nu = nu
        self.epsabs = epsabs
        if isinstance(nu, PiecewiseLinear):
            self.table_s = nu.s
        else:
            self.table_s = np.concatenate([[0.], log_grid(1e-6, 1e3, 64)])
        pieces = [self._quad(a, b) for a, b in zip(self.table_s[:-1], self.table_s[1:])]
        self.table = np.concatenate([[0.], np.cumsum(pieces)])

    def _quad(self, a, b):
        return scipy.integrate.quad(lambda r: float(self.nu(r)), a, b, epsabs=self.epsabs, limit=200)[0]

    def _one(self, s):
        k = int(np.searchsorted(self.table_s, s, side='right') - 1)
        return self.table[k] + self._quad(self.table_s[k], s)

    def _value(self, s):
        return np.vectorize(self._one, otypes=[np.float64])(s)

    def _derivative(self, s):
        return self.nu._value(s)

    def _inverse(self, y):
        k = int(np.searchsorted(self.table, y))
        if k == 0:
            return 0.
        if k < len(self.table):
            lo, hi = self.table_s[k - 1], self.table_s[k]
        else:
            lo, hi = self.table_s[-1], 2 * self.table_s[-1]
            while self._one(hi) < y:
                lo, hi = hi, 2 * hi
        return scipy.optimize.brentq(lambda t: self._one(t) - y, lo, hi, xtol=1e-300, rtol=BRENT_RTOL)

    @property
    def children(self):
        return self.nu,

    def to_dict(self):
        return dict(form=self.form, nu=self.nu.to_dict())


class Inverse(ComparisonFn):
    """ f⁻¹ for a K-class f, evaluated through invert. """
    form = 'inverse'

    def __init__(self, f):
        if f.tag not in K_CLASS:
            raise NotInvertible("Only K-class functions are invertible, got {}.".format(f.tag))
        self.f = f
        self.tag = f.tag

    def _value(self, y):
        return np.vectorize(lambda t: invert(self.f, t), otypes=[np.float64])(y)

    def _derivative(self, y):
        return 1. / self.f._derivative(self._value(y))

    def _inverse(self, s):
        return float(self.f(s))

    @property
    def children(self):
        return self.f,

    def to_dict(self):
        return dict(form=self.form, f=self.f.to_dict())


class Derivative(ComparisonFn):
    """ s ↦ f′(s) for a C¹ increasing f; positive but not monotone in general. """
    form = 'derivative'
    tag = POSITIVE

    def __init__(self, f, h=1e-6):
        if f.tag not in K_CLASS:
            raise TagMismatch("Derivative node needs a K-class function, got {}.".format(f.tag))
        self.f, self.h = f, h

    def _value(self, s):
        return self.f._derivative(s)

    def _derivative(self, s):
        h = self.h * np.maximum(1., s)
        lo = np.maximum(s - h, 0.)
        return (self.f._derivative(s + h) - self.f._derivative(lo)) / (s + h - lo)

    @property
    def children(self):
        return self.f,

    def to_dict(self):
        return dict(form=self.form, f=self.f.to_dict())


# Operations.

def eval_and_derivative(f, s, return_flag=False):
    """ Value and derivative of f at s.
    :param return_flag: also return whether the derivative is one-sided (kink of a piecewise linear form).
    """
    value, derivative = f(s), f.derivative(s)
    if return_flag:
        return value, derivative, not f.smooth_at(s)
    return value, derivative


def invert(f, y, s_hint=1.):
    """ Returns s with f(s) = y up to 1e-10·max(1, y).
    Analytic for the parametric forms, bracketing root finding otherwise.
    """
    if f.tag not in K_CLASS:
        raise NotInvertible("Function tagged {} is not invertible.".format(f.tag))
    y = float(y)
    if y < 0:
        raise NegativeArgument("Cannot invert at negative value {}.".format(y))
    if y == 0:
        return 0.
    if y >= f.sup:
        raise OutOfRange("Value {} exceeds the supremum {} of the function.".format(y, f.sup))

    s = f._inverse(y)
    if s is not None:
        return float(s)

    lo, hi = 0., max(float(s_hint), 1e-12)
    for _ in range(2100):
        if float(f(hi)) >= y:
            break
        lo, hi = hi, 2 * hi
    else:
        raise OutOfRange("Could not bracket value {}.".format(y))
    return scipy.optimize.brentq(lambda t: float(f(t)) - y, lo, hi, xtol=1e-300, rtol=BRENT_RTOL, maxiter=500)


def compose_chain(outer, inner):
    """ outer ∘ inner, simplified when one side is linear or zero. """
    if inner.is_zero and outer.tag in ZERO_AT_ZERO:
        return zero()
    if outer.is_zero and inner.tag in MONOTONE + ZERO_AT_ZERO:
        return zero()
    if isinstance(outer, Linear) and isinstance(inner, Linear):
        return Linear(outer.c * inner.c)
    if isinstance(outer, Linear):
        return Scale(outer.c, inner)
    return Chain(outer, inner)


def pointwise_extremum(kind, f, g):
    if kind not in ('max', 'min'):
        raise ValueError("Unknown extremum: {}.".format(kind))
    if g.is_zero and f.tag in MONOTONE + ZERO_AT_ZERO:
        return f if kind == 'max' else zero()
    if f.is_zero and g.tag in MONOTONE + ZERO_AT_ZERO:
        return g if kind == 'max' else zero()
    return Extremum(kind, f, g)


def add(f, g):
    if f.is_zero:
        return g
    if g.is_zero:
        return f
    return Sum(f, g)


def multiply(f, g):
    if f.is_zero or g.is_zero:
        return zero()
    return Product(f, g)


def scale(c, f):
    if c == 0 or f.is_zero:
        return zero()
    if isinstance(f, Linear):
        return Linear(c * f.c)
    if isinstance(f, Power):
        return Power(c * f.c, f.p)
    return Scale(c, f)


def inverse(f):
    if isinstance(f, Linear) and f.c > 0:
        return Linear(1 / f.c)
    if isinstance(f, Power):
        return Power(f.c ** (-1 / f.p), 1 / f.p)
    return Inverse(f)


def integral_transform(nu, check_grid=None):
    """ ℓ(s) = ∫₀ˢ ν. ν must be nondecreasing and positive on (0, ∞). """
    if nu.tag not in MONOTONE:
        raise TagMismatch("Integrand must be nondecreasing, got tag {}.".format(nu.tag))
    grid = log_grid(1e-8, 1e3, 200) if check_grid is None else np.asarray(check_grid)
    if np.any(nu(grid) <= 0):
        raise NonPositiveIntegrand("Integrand vanishes at s={}.".format(grid[np.argmax(nu(grid) <= 0)]))
    if isinstance(nu, Constant):
        return Linear(nu.c)
    return Integral(nu)


def small_gain_holds(chi1, chi2, grid):
    """ Tests χ₁∘χ₂(r) < r on grid.
    :return: (pass, worst margin min_r r − χ₁(χ₂(r)))
    """
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    if grid.size == 0:
        raise EmptyGrid("Small gain test needs a nonempty grid.")
    if np.any(grid <= 0):
        raise ValueError("Small gain grid must be positive.")
    for chi in (chi1, chi2):
        if chi.tag not in K_CLASS and not chi.is_zero:
            raise TagMismatch("Gains must be class K, got {}.".format(chi.tag))
    if np.log10(grid.max() / grid.min()) < 4:
        logger.warning("Small gain grid covers less than 4 decades.")
    margins = grid - chi1(chi2(grid))
    return bool(np.all(margins > 0)), float(margins.min())


def _monotone_floor(c, r, floor):
    return np.maximum.accumulate(c - floor * r) + floor * r


def construct_sigma(chi1, chi2, domain_max=1e3, n_knots=200, n_check=1000, decades=8, max_refine=20):
    """ C¹ K∞ function σ with χ₂(r) < σ(r) and χ₁(σ(r)) < r on a validation grid.

    The candidate is the geometric mean of χ₂(r) and χ₁⁻¹(r) on a log grid (2χ₂(r) + 1e-6·r where χ₁⁻¹
    is infinite), made strictly increasing, interpolated by a monotone cubic Hermite spline and validated.
    On failure the candidate moves halfway toward the violated side, up to max_refine times.

    :param domain_max: upper end of the knot and validation grids; σ extends linearly beyond.
    :param n_check: number of log-spaced validation points over six decades below domain_max.
    """
    check = log_grid(domain_max * 1e-6, domain_max, n_check)
    holds, margin = small_gain_holds(chi1, chi2, check)
    if not holds:
        raise SmallGainViolated("χ₁∘χ₂(r) < r fails, worst margin {:.3e}.".format(margin))

    r = np.concatenate([[0.], log_grid(domain_max * 10. ** -decades, domain_max, n_knots)])
    lower = chi2(r)
    upper = np.full_like(r, np.inf)
    if not chi1.is_zero:
        for k, rk in enumerate(r):
            try:
                upper[k] = invert(chi1, rk)
            except OutOfRange:
                pass
    bounded = np.isfinite(upper)
    capped = np.where(bounded, upper, 2 * lower + 1e-6 * r)
    candidate = np.where(bounded, np.sqrt(lower * np.where(bounded, upper, 0.)), 2 * lower + 1e-6 * r)

    for attempt in range(max_refine + 1):
        values = _monotone_floor(candidate, r, SLOPE_FLOOR)
        values[0] = 0.
        sigma = MonotoneInterpolant.fit(r, values)
        s = sigma(check)
        low_ok = chi2(check) < s
        up_ok = chi1(s) < check
        if np.all(low_ok) and np.all(up_ok):
            if sigma.d[0] <= 2 * SLOPE_FLOOR:
                logger.warning("σ slope floor binds at 0 (σ′(0) = %.1e).", sigma.d[0])
            logger.debug("σ constructed after %d refinements.", attempt)
            return sigma
        if not np.all(up_ok):
            candidate = 0.5 * (values + lower)
        else:
            candidate = 0.5 * (values + capped)
    raise ConstructionFailed("σ validation still fails after {} refinements.".format(max_refine))


_LEAVES = {
    'linear': lambda d: Linear(d['c']),
    'power': lambda d: Power(d['c'], d['p']),
    'constant': lambda d: Constant(d['c']),
    'piecewise_linear': lambda d: PiecewiseLinear(d['knots'], d.get('tag')),
    'interpolant': lambda d: MonotoneInterpolant(*np.asarray(d['knots'], dtype=np.float64).T),
}


def from_dict(d):
    """ Rebuilds a comparison function from its tagged record, e.g. {"form": "linear", "c": 2.0}. """
    try:
        form = d['form']
    except (KeyError, TypeError):
        raise ValueError("Comparison function record needs a 'form': {}.".format(d))
    if form in _LEAVES:
        return _LEAVES[form](d)
    if form == 'compose':
        return Chain(from_dict(d['outer']), from_dict(d['inner']))
    if form in ('max', 'min'):
        return Extremum(form, from_dict(d['f']), from_dict(d['g']))
    if form == 'sum':
        return Sum(from_dict(d['f']), from_dict(d['g']))
    if form == 'product':
        return Product(from_dict(d['f']), from_dict(d['g']))
    if form == 'scale':
        return Scale(d['c'], from_dict(d['f']))
    if form == 'integral':
        return Integral(from_dict(d['nu']))
    if form == 'inverse':
        return Inverse(from_dict(d['f']))
    if form == 'derivative':
        return Derivative(from_dict(d['f']))
    raise ValueError("Unknown comparison function form: {}.".format(form))
