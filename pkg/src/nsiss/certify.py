""" Sampled verification of ISS-Lyapunov certificates.

A certificate states α̲(|x|) ≤ V(x) ≤ ᾱ(|x|) and V(x) > γ(|u|) ⇒ max V̄̇(x, u) ≤ −ρ(·), with max ∅ = −∞. Every check
draws seeded samples (a box of states, a ball of inputs, points on switching surfaces), evaluates them independently
and reduces worst margins by min, so reports do not depend on evaluation order.
"""

import logging
from concurrent.futures import ThreadPoolExecutor as Executor
import numpy as np
from tqdm import tqdm

from . import kfun
from .config import config
from .errors import PartitionMismatch, TagMismatch, NoCrossingFound
from .nonsmooth import PiecewiseC1Fn, clarke_interval, lie_interval, gradient_hull
from .partition import active_indices, sample_box, surface_sample
from .switched import hull_vertices

logger = logging.getLogger(__name__)

STATE, LEVEL = 'state', 'level'


class ISSCertificate:
    """
    :param V: a PiecewiseC1Fn, or a composite exposing value, gradient_hull and dim
    :param rho_argument: 'state' when the decrease rate is ρ(|x|), 'level' when it is ρ(V(x))
    """

    def __init__(self, V, alpha_lo, alpha_hi, rho, gamma, rho_argument=STATE):
        for name, f in (('alpha_lo', alpha_lo), ('alpha_hi', alpha_hi)):
            if f.tag not in kfun.K_CLASS:
                raise TagMismatch("Certificate {} must be class K, got {}.".format(name, f.tag))
        if rho.tag not in kfun.ZERO_AT_ZERO:
            raise TagMismatch("Certificate rho must be positive definite, got {}.".format(rho.tag))
        if gamma.tag not in kfun.K_CLASS and not gamma.is_zero:
            raise TagMismatch("Certificate gamma must be class K, got {}.".format(gamma.tag))
        if rho_argument not in (STATE, LEVEL):
            raise ValueError("Unknown rho argument: {}.".format(rho_argument))
        self.V, self.alpha_lo, self.alpha_hi, self.rho, self.gamma = V, alpha_lo, alpha_hi, rho, gamma
        self.rho_argument = rho_argument

    def rate(self, x, v):
        return float(self.rho(np.linalg.norm(x) if self.rho_argument == STATE else max(v, 0.)))

    def to_dict(self):
        return dict(V=self.V.to_dict(), alpha_lo=self.alpha_lo.to_dict(), alpha_hi=self.alpha_hi.to_dict(),
                    rho=self.rho.to_dict(), gamma=self.gamma.to_dict(), rho_argument=self.rho_argument)


class DissipationCertificate:
    """ max V̄̇(x, u) ≤ −ρ̂(|x|) + γ̂(|u|) (form 'state') or ≤ −ρ̃(V(x)) + γ̃(|u|) (form 'level'). """

    def __init__(self, V, alpha_lo, alpha_hi, rho_hat, gamma_hat, form=STATE):
        if form not in (STATE, LEVEL):
            raise ValueError("Unknown dissipation form: {}.".format(form))
        if rho_hat.tag != kfun.KINF:
            raise TagMismatch("Dissipation rate must be class Kinf, got {}.".format(rho_hat.tag))
        self.V, self.alpha_lo, self.alpha_hi = V, alpha_lo, alpha_hi
        self.rho_hat, self.gamma_hat, self.form = rho_hat, gamma_hat, form

    def to_implication(self):
        """ ρ := ½ρ̂ with γ := ᾱ∘ρ̂⁻¹∘2γ̂ (state form), or ρ := ½ρ̃ on V with γ := ρ̃⁻¹∘2γ̃ (level form). """
        threshold = kfun.compose_chain(kfun.inverse(self.rho_hat), kfun.scale(2., self.gamma_hat))
        if self.form == STATE:
            gamma = kfun.compose_chain(self.alpha_hi, threshold)
        else:
            gamma = threshold
        return ISSCertificate(self.V, self.alpha_lo, self.alpha_hi, kfun.scale(0.5, self.rho_hat), gamma,
                              rho_argument=self.form)


class SamplePlan:
    """
    :param state_box: [lo, hi] or one pair per dimension
    :param surface_pairs: pairs of system region labels whose common boundary is sampled
    :param origin_radius: state samples closer to 0 are redrawn
    :param include_y_boundary: also check smooth decrease on boundaries of the Lyapunov partition off the system's
    :param surface_points: extra surface points x, or pairs (x, u), for the surface condition
    :param active_tol: slack of every active-set query
    :param rtol: relative allowance folded into every margin
    """

    def __init__(self, state_box, n_state, input_radius=0., n_input=1, surface_pairs=(), n_surface=0, seed=0,
                 origin_radius=1e-6, include_y_boundary=False, surface_points=None, active_tol=1e-9, rtol=1e-12):
        if n_state < 1 or n_input < 1 or n_surface < 0:
            raise ValueError("Sample counts must be positive, got n_state={}, n_input={}, n_surface={}.".format(
                n_state, n_input, n_surface))
        if input_radius < 0:
            raise ValueError("Input ball radius must be nonnegative, got {}.".format(input_radius))
        self.state_box, self.n_state = state_box, int(n_state)
        self.input_radius, self.n_input = float(input_radius), int(n_input)
        self.surface_pairs, self.n_surface = [tuple(p) for p in surface_pairs], int(n_surface)
        self.seed, self.origin_radius = seed, origin_radius
        self.include_y_boundary = include_y_boundary
        self.surface_points = list(surface_points or [])
        self.active_tol, self.rtol = active_tol, rtol

    def to_dict(self):
        return dict(state_box=np.asarray(self.state_box).tolist(), n_state=self.n_state,
                    input_radius=self.input_radius, n_input=self.n_input,
                    surface_pairs=[list(p) for p in self.surface_pairs], n_surface=self.n_surface, seed=self.seed,
                    origin_radius=self.origin_radius, include_y_boundary=self.include_y_boundary,
                    active_tol=self.active_tol, rtol=self.rtol)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        return cls(**d)


class CheckReport:
    """ passed iff every family margin is ≥ 0; a family with no tested sample has margin +∞. """

    def __init__(self, margins, witnesses, counts, notes=()):
        self.margins = margins
        self.witnesses = witnesses
        self.counts = counts
        self.notes = list(notes)
        self.passed = all(m >= 0 for m in margins.values())

    def __bool__(self):
        return self.passed

    def to_dict(self):
        return dict(passed=self.passed, margins=self.margins, witnesses=self.witnesses, counts=self.counts,
                    notes=self.notes)


def _map(fn, items, desc):
    """ Evaluates fn on items in order, on config['threads'] workers. """
    items = list(items)
    if config['threads'] > 1:
        with Executor(max_workers=config['threads']) as executor:
            iterator = executor.map(fn, items)
            if config['progress']:
                iterator = tqdm(iterator, total=len(items), desc=desc)
            return list(iterator)
    iterator = tqdm(items, desc=desc) if config['progress'] else items
    return [fn(item) for item in iterator]


def _input_ball(rng, radius, m, n):
    if m == 0 or radius == 0:
        return np.zeros((n, m))
    d = rng.standard_normal((n, m))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * (radius * rng.random(n) ** (1. / m))[:, None]


def _state_samples(plan, dim, rng):
    X = sample_box(rng, plan.state_box, dim, plan.n_state)
    for _ in range(100):
        small = np.linalg.norm(X, axis=1) < plan.origin_radius
        if not small.any():
            break
        X[small] = sample_box(rng, plan.state_box, dim, int(small.sum()))
    return X


def _surface_samples(P, pairs, plan):
    points = []
    for k, (i, j) in enumerate(pairs):
        try:
            points.extend(surface_sample(P, i, j, plan.n_surface, plan.state_box, seed=plan.seed + 1 + k))
        except NoCrossingFound as e:
            logger.warning("No surface samples for regions (%s, %s): %s", i, j, e)
    return points


def _samples(S, plan, pairs=None):
    """ (state samples, surface samples) as lists of (x, u). """
    rng = np.random.default_rng(plan.seed)
    X = _state_samples(plan, S.dim, rng)
    U = _input_ball(rng, plan.input_radius, S.input_dim, plan.n_input)
    states = [(x, U[k % len(U)]) for k, x in enumerate(X)]

    surface = _surface_samples(S.partition, plan.surface_pairs if pairs is None else pairs, plan)
    U_s = _input_ball(rng, plan.input_radius, S.input_dim, max(len(surface), 1))
    surface = [(x, U_s[k]) for k, x in enumerate(surface)]
    for entry in plan.surface_points:
        if len(entry) == 2 and np.ndim(entry[0]) == 1:
            x, u = entry
        else:
            x, u = entry, np.zeros(S.input_dim)
        surface.append((np.asarray(x, dtype=np.float64), np.asarray(u, dtype=np.float64).reshape(S.input_dim)))
    return states, surface


def _slack(plan, *values):
    return plan.rtol * max([1.] + [abs(v) for v in values if np.isfinite(v)])


def _piece_values(V, x, tol):
    if isinstance(V, PiecewiseC1Fn):
        return [float(V.pieces[j].value(x)) for j in active_indices(V.partition, x, tol).indices]
    return [float(V.value(x))]


def _bounds(C, x, plan, pieces=False):
    r = float(np.linalg.norm(x))
    values = _piece_values(C.V, x, plan.active_tol) if pieces else [float(C.V.value(x))]
    lo, hi = float(C.alpha_lo(r)), float(C.alpha_hi(r))
    return min(min(v - lo, hi - v) + _slack(plan, v) for v in values)


def _witness(family, x, u, margin, lo=None, hi=None):
    return dict(family=family, x=np.asarray(x).tolist(), u=np.asarray(u).tolist(), margin=float(margin),
                lo=None if lo is None else float(lo), hi=None if hi is None else float(hi))


class _Reduction:
    """ Per-family worst margins and the first failing witnesses in sample order. """

    def __init__(self, families, max_witnesses=20):
        self.margins = {f: np.inf for f in families}
        self.counts = {f: 0 for f in families}
        self.witnesses, self.max_witnesses = [], max_witnesses

    def add(self, family, margin, witness):
        if margin is None:
            return
        self.counts[family] += 1
        self.margins[family] = min(self.margins[family], float(margin))
        if margin < 0 and len(self.witnesses) < self.max_witnesses:
            self.witnesses.append(witness)

    def report(self, notes=(), **extra_counts):
        counts = dict(self.counts)
        counts.update(extra_counts)
        return CheckReport({f: float(m) for f, m in self.margins.items()}, self.witnesses, counts, notes)


def _decrease(S, C, x, u, plan, derivative=lie_interval):
    """ Margin −rate − max V̄̇ when V(x) > γ(|u|), None otherwise. Also returns the interval. """
    v = float(C.V.value(x))
    if not v > float(C.gamma(np.linalg.norm(u))):
        return None, None
    hull = hull_vertices(S, x, u, plan.active_tol)
    I = derivative(C.V, hull, x, plan.active_tol)
    rate = C.rate(x, v)
    margin = np.inf if I.empty else -rate - I.max + _slack(plan, rate, I.max)
    return margin, I


def check_main_iss(S, C, plan):
    """ Bounds and decrease on state and surface samples (Lie derivative). """
    states, surface = _samples(S, plan)

    def evaluate(sample):
        x, u = sample
        margin, I = _decrease(S, C, x, u, plan)
        return _bounds(C, x, plan), margin, I

    results = _map(evaluate, states + surface, 'main ISS')
    red = _Reduction(('bounds', 'decrease'))
    n_empty = 0
    for (x, u), (bound, margin, I) in zip(states + surface, results):
        red.add('bounds', bound, _witness('bounds', x, u, bound))
        if I is not None:
            n_empty += I.empty
            red.add('decrease', margin, _witness('decrease', x, u, margin, I.lo, I.hi))
    report = red.report(samples=len(results), empty=n_empty)
    logger.info("Main ISS check: passed=%s, margins=%s.", report.passed, report.margins)
    return report


def _y_boundary_samples(S, V, plan):
    """ Points on boundaries of the Lyapunov partition that are interior to one system region. """
    P = V.partition
    pairs = [(a, b) for k, a in enumerate(P.labels) for b in P.labels[k + 1:]]
    points = []
    for k, (i, j) in enumerate(pairs):
        try:
            points.extend(surface_sample(P, i, j, plan.n_surface, plan.state_box, seed=plan.seed + 1000 + k))
        except NoCrossingFound:
            continue
    return [x for x in points if len(active_indices(S.partition, x, plan.active_tol).indices) == 1]


def check_switched_iss(S, C, plan, variant='aligned', threshold_slope=None):
    """ The three condition families of a switched certificate, checked separately.

    A: α̲(|x|) ≤ V_j(x) ≤ ᾱ(|x|) for every piece active at a sample.
    B: ⟨∇V_j(x), f_i(x, u)⟩ ≤ −ρ at samples interior to a system region i.
    C: max V̄̇ ≤ −ρ on system switching surfaces (Lie derivative), or the Clarke derivative for variant 'clarke'.

    :param variant: 'general' (any Lyapunov partition), 'aligned' (same partition as the system) or 'clarke'
    :param threshold_slope: when given, surface samples with |z| ≥ threshold_slope·|u| are counted and a non-empty
        Lie interval among them is logged
    """
    if variant not in ('general', 'aligned', 'clarke'):
        raise ValueError("Unknown variant: {}.".format(variant))
    V = C.V
    if variant == 'aligned' and not (isinstance(V, PiecewiseC1Fn) and V.partition.same_as(S.partition)):
        raise PartitionMismatch("Aligned variant needs the Lyapunov function on the system partition.")
    states, surface = _samples(S, plan)
    tol = plan.active_tol
    derivative = clarke_interval if variant == 'clarke' else lie_interval

    y_boundary = []
    if plan.include_y_boundary and isinstance(V, PiecewiseC1Fn) and not V.partition.same_as(S.partition):
        rng = np.random.default_rng(plan.seed + 2)
        points = _y_boundary_samples(S, V, plan)
        U = _input_ball(rng, plan.input_radius, S.input_dim, max(len(points), 1))
        y_boundary = [(x, U[k]) for k, x in enumerate(points)]

    def smooth_decrease(sample):
        x, u = sample
        X_active = active_indices(S.partition, x, tol).indices
        if len(X_active) != 1:
            return None
        G = gradient_hull(V, x, tol).vertices
        if len(G) > 1 and isinstance(V, PiecewiseC1Fn) and not plan.include_y_boundary:
            return None
        v = float(V.value(x))
        if not v > float(C.gamma(np.linalg.norm(u))):
            return None
        worst = float(np.max(G @ S.f(X_active[0], x, u)))
        rate = C.rate(x, v)
        return -rate - worst + _slack(plan, rate, worst)

    def evaluate_state(sample):
        return _bounds(C, sample[0], plan, pieces=True), smooth_decrease(sample)

    def evaluate_surface(sample):
        x, u = sample
        margin, I = _decrease(S, C, x, u, plan, derivative)
        return _bounds(C, x, plan, pieces=True), margin, I

    state_results = _map(evaluate_state, states + y_boundary, 'conditions A, B')
    surface_results = _map(evaluate_surface, surface, 'condition C')

    red = _Reduction(('A', 'B', 'C'))
    for (x, u), (bound, margin) in zip(states + y_boundary, state_results):
        red.add('A', bound, _witness('A', x, u, bound))
        red.add('B', margin, _witness('B', x, u, margin if margin is not None else 0.))
    n_empty, n_above, n_above_empty = 0, 0, 0
    for (x, u), (bound, margin, I) in zip(surface, surface_results):
        red.add('A', bound, _witness('A', x, u, bound))
        if I is None:
            continue
        red.add('C', margin, _witness('C', x, u, margin, I.lo, I.hi))
        n_empty += I.empty
        if threshold_slope is not None and np.linalg.norm(x) >= threshold_slope * np.linalg.norm(u):
            n_above += 1
            n_above_empty += I.empty
            if not I.empty and variant != 'clarke':
                logger.warning("Non-empty Lie interval [%.6g, %.6g] above the threshold at x=%s, u=%s.",
                               I.lo, I.hi, np.asarray(x).tolist(), np.asarray(u).tolist())

    notes = []
    if variant == 'clarke':
        notes.append("surface condition uses the Clarke derivative")
    extra = dict(surface=len(surface), y_boundary=len(y_boundary), surface_empty=n_empty)
    if threshold_slope is not None:
        extra.update(surface_above_threshold=n_above, surface_above_threshold_empty=n_above_empty)
    report = red.report(notes, **extra)
    logger.info("Switched ISS check (%s): passed=%s, margins=%s.", variant, report.passed, report.margins)
    return report


def check_dissipation(S, C, plan):
    """ Unconditional dissipation inequality at every state and surface sample. """
    states, surface = _samples(S, plan)

    def evaluate(sample):
        x, u = sample
        hull = hull_vertices(S, x, u, plan.active_tol)
        I = lie_interval(C.V, hull, x, plan.active_tol)
        v = float(C.V.value(x))
        arg = np.linalg.norm(x) if C.form == STATE else max(v, 0.)
        supply = -float(C.rho_hat(arg)) + float(C.gamma_hat(np.linalg.norm(u)))
        margin = np.inf if I.empty else supply - I.max + _slack(plan, supply, I.max)
        return _bounds(C, x, plan), margin, I

    results = _map(evaluate, states + surface, 'dissipation')
    red = _Reduction(('bounds', 'dissipation'))
    for (x, u), (bound, margin, I) in zip(states + surface, results):
        red.add('bounds', bound, _witness('bounds', x, u, bound))
        red.add('dissipation', margin, _witness('dissipation', x, u, margin, I.lo, I.hi))
    report = red.report(["{} form".format(C.form)])
    logger.info("Dissipation check (%s form): passed=%s, margins=%s.", C.form, report.passed, report.margins)
    return report


def trajectory_check(traj, u, C, margin_tol=1e-9):
    """ V must not increase between samples while V(x(t)) > γ(sup_[0,t] |u|).
    Reports the terminal residual V(x(T)) − γ(‖u‖∞) among the counts.
    """
    values = np.array([float(C.V.value(x)) for x in traj.states])
    # Running sup of |u| at sample times and step midpoints.
    norms = np.array([np.linalg.norm(u(t)) for t in traj.times])
    mids = np.array([np.linalg.norm(u(0.5 * (a + b))) for a, b in zip(traj.times[:-1], traj.times[1:])])
    sup = np.maximum.accumulate(np.maximum(norms, np.concatenate([[0.], mids])))

    red = _Reduction(('monotone',))
    for k in range(len(values) - 1):
        if values[k] > float(C.gamma(sup[k])):
            margin = margin_tol - (values[k + 1] - values[k])
            red.add('monotone', margin, _witness('monotone', traj.states[k], u(traj.times[k]), margin,
                                                 values[k], values[k + 1]))
    residual = float(values[-1] - C.gamma(u.sup_norm_to(traj.times[-1])))
    report = red.report(samples=len(values), terminal_residual=residual, terminal_value=float(values[-1]))
    logger.info("Trajectory check: passed=%s, terminal residual %.3e.", report.passed, residual)
    return report
