""" State-dependent switched systems ẋ = f_σ(x)(x, u), their Filippov hull and a sliding-mode aware simulator. """

import logging
from collections import namedtuple
import numpy as np
import cvxopt
import cvxopt.solvers
import scipy.optimize

from .errors import DimensionMismatch, DegenerateNormal, StepSizeUnderflow
from .partition import active_indices

logger = logging.getLogger(__name__)


class Mode:
    """ A C¹ vector field f(x, u). """
    form = 'callback'

    def __init__(self, fn, dim, input_dim):
        self.fn, self.dim, self.input_dim = fn, int(dim), int(input_dim)

    def __call__(self, x, u):
        return np.asarray(self.fn(x, u), dtype=np.float64)

    def to_dict(self):
        raise ValueError("Callback modes cannot be serialized.")


class Affine(Mode):
    """ f(x, u) = A x + b + B u. """
    form = 'affine'

    def __init__(self, A, b=None, B=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        n = len(self.A)
        if self.A.shape != (n, n):
            raise DimensionMismatch("Mode matrix must be square, got shape {}.".format(self.A.shape))
        self.b = np.zeros(n) if b is None else np.asarray(b, dtype=np.float64).reshape(n)
        self.B = np.zeros((n, 0)) if B is None else np.asarray(B, dtype=np.float64).reshape(n, -1)
        super().__init__(None, n, self.B.shape[1])

    def __call__(self, x, u):
        return self.A @ x + self.b + self.B @ u

    def to_dict(self):
        return dict(form=self.form, A=self.A.tolist(), b=self.b.tolist(), B=self.B.tolist())


class Linear(Affine):
    """ f(x, u) = A x + B u. """
    form = 'linear'

    def __init__(self, A, B=None):
        super().__init__(A, None, B)

    def to_dict(self):
        return dict(form=self.form, A=self.A.tolist(), B=self.B.tolist())


def mode_from_dict(d):
    if d.get('form') == 'linear':
        return Linear(d['A'], d.get('B'))
    if d.get('form') == 'affine':
        return Affine(d['A'], d.get('b'), d.get('B'))
    raise ValueError("Unknown mode form: {}.".format(d.get('form')))


class SwitchedSystem:
    """ One mode per region of a proper partition.
    :param check_origin: require f_i(0, 0) = 0 for every region containing the origin
    """

    def __init__(self, partition, modes, input_dim, check_origin=True):
        self.partition = partition
        self.input_dim = int(input_dim)
        self.check_origin = check_origin
        if not isinstance(modes, dict):
            modes = dict(zip(partition.labels, modes))
        if set(modes) != set(partition.labels):
            raise DimensionMismatch("Modes {} do not match region labels {}.".format(sorted(modes), partition.labels))
        self.modes = modes
        for label, mode in modes.items():
            if isinstance(mode, Mode) and (mode.dim != partition.dim or mode.input_dim != self.input_dim):
                raise DimensionMismatch("Mode {} has dimensions ({}, {}), expected ({}, {}).".format(
                    label, mode.dim, mode.input_dim, partition.dim, self.input_dim))

        origin = np.zeros(partition.dim)
        for label in (active_indices(partition, origin, 0.).indices if check_origin else ()):
            f0 = self.f(label, origin, np.zeros(self.input_dim))
            if np.max(np.abs(f0), initial=0.) > 1e-12:
                raise ValueError("Mode {} does not vanish at the origin: f(0, 0) = {}.".format(label, f0.tolist()))

    @property
    def dim(self):
        return self.partition.dim

    def f(self, label, x, u):
        return self.modes[label](x, u)

    def to_dict(self):
        return dict(partition=self.partition.to_dict(), input_dim=self.input_dim, check_origin=self.check_origin,
                    modes={str(k): m.to_dict() for k, m in self.modes.items()})


FilippovHull = namedtuple('FilippovHull', 'vertices indices x u tol')


def hull_vertices(S, x, u, tol=1e-9):
    """ Vertices f_i(x, u), i active at x; their convex hull is the regularized right-hand side. """
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if x.shape != (S.dim,) or u.shape != (S.input_dim,):
        raise DimensionMismatch("Expected x in R^{} and u in R^{}, got shapes {} and {}.".format(
            S.dim, S.input_dim, x.shape, u.shape))
    indices = active_indices(S.partition, x, tol).indices
    return FilippovHull(np.array([S.f(i, x, u) for i in indices]), indices, x, u, tol)


Combination = namedtuple('Combination', 'lam kind')


def sliding_combination(hull, normal):
    """ λ with ⟨normal, λ f₁ + (1-λ) f₂⟩ = 0 when the two vertices push toward the surface from opposite sides.
    kind is 'sliding', 'crossing' (same side, lam None) or 'tangent' (both tangent, lam None).
    """
    vertices = hull.vertices if isinstance(hull, FilippovHull) else np.asarray(hull, dtype=np.float64)
    if len(vertices) != 2:
        raise ValueError("Sliding combination needs exactly 2 vertices, got {}.".format(len(vertices)))
    normal = np.asarray(normal, dtype=np.float64)
    scale = np.linalg.norm(normal)
    if scale == 0 or not np.isfinite(scale):
        raise DegenerateNormal("Surface normal {} is degenerate.".format(normal.tolist()))
    a1, a2 = vertices @ normal
    eps = 1e-14 * scale * max(np.linalg.norm(vertices[0]), np.linalg.norm(vertices[1]))
    if abs(a1) <= eps and abs(a2) <= eps:
        return Combination(None, 'tangent')
    if a1 * a2 <= 0:
        return Combination(float(a2 / (a2 - a1)), 'sliding')
    return Combination(None, 'crossing')


QP_OPTIONS = dict(show_progress=False, abstol=1e-12, reltol=1e-12, feastol=1e-12, maxiters=200)


def _polish(V, x, tol=1e-10):
    """ Projection of 0 onto the affine hull of the vertices nearest the supporting hyperplane at x.

    Rows of V have norm at most 1. The projection y is kept only if it lies in the hull and ⟨v, y⟩ ≥ |y|² holds
    for every vertex v, which characterises the minimiser.
    """
    values = V @ x
    for cut in (1e-10, 1e-8, 1e-6, 1e-4):
        S = V[values <= values.min() + cut]
        D = (S[1:] - S[0]).T
        y = S[0] - D @ np.linalg.lstsq(D, S[0], rcond=None)[0] if len(S) > 1 else S[0]
        if np.any(V @ y < y @ y - tol):
            continue
        _, residual = scipy.optimize.nnls(np.vstack([S.T, np.ones(len(S))]), np.append(y, 1.))
        if residual <= 1e-8:
            return y
    return None


def min_norm_element(vertices):
    """ Minimum norm point of the convex hull of the rows of vertices. """
    V = np.asarray(vertices, dtype=np.float64)
    k = len(V)
    if k == 1:
        return V[0]
    scale = np.sqrt(np.max(np.sum(V * V, axis=1)))
    if scale == 0:
        return np.zeros(V.shape[1])
    V = V / scale
    P, q = V @ V.T, np.zeros(k)
    G, h = -np.eye(k), np.zeros(k)
    A, b = np.ones((1, k)), np.ones(1)
    res = cvxopt.solvers.qp(*map(lambda c: cvxopt.matrix(c.astype(np.float64)), (P, q, G, h, A, b)),
                            options=QP_OPTIONS)
    lam = np.maximum(np.array(res['x']).reshape(-1), 0.)
    x = (lam / lam.sum()) @ V
    polished = _polish(V, x)
    if polished is None:
        logger.debug("Min norm polish rejected for %d vertices; keeping the QP point.", k)
        return x * scale
    return polished * scale


# Input signals.

class InputSignal:
    form = None
    breakpoints = ()

    def __init__(self, dim):
        self.dim = int(dim)

    def __call__(self, t):
        raise NotImplementedError

    def _dense_sup(self, t, dt):
        ts = np.linspace(0., t, max(2, int(np.ceil(t / dt)) + 1))
        return max(float(np.linalg.norm(self(tk))) for tk in ts)

    def sup_norm_to(self, t):
        raise NotImplementedError

    def to_dict(self):
        raise ValueError("Callback inputs cannot be serialized.")


class Zero(InputSignal):
    form = 'zero'

    def __call__(self, t):
        return np.zeros(self.dim)

    def sup_norm_to(self, t):
        return 0.

    def to_dict(self):
        return dict(form=self.form, dim=self.dim)


class Constant(InputSignal):
    form = 'constant'

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64).reshape(-1)
        super().__init__(len(self.value))

    def __call__(self, t):
        return self.value.copy()

    def sup_norm_to(self, t):
        return float(np.linalg.norm(self.value))

    def to_dict(self):
        return dict(form=self.form, value=self.value.tolist())


class Sinusoid(InputSignal):
    """ u_k(t) = amplitude_k · sin(frequency_k · t + phase_k), frequencies in rad/s. """
    form = 'sinusoid'

    def __init__(self, amplitude, frequency, phase=None):
        self.amplitude = np.asarray(amplitude, dtype=np.float64).reshape(-1)
        self.frequency = np.broadcast_to(np.asarray(frequency, dtype=np.float64), self.amplitude.shape).copy()
        self.phase = np.zeros_like(self.amplitude) if phase is None else \
            np.broadcast_to(np.asarray(phase, dtype=np.float64), self.amplitude.shape).copy()
        super().__init__(len(self.amplitude))

    def __call__(self, t):
        return self.amplitude * np.sin(self.frequency * t + self.phase)

    def sup_norm_to(self, t):
        w = np.max(np.abs(self.frequency), initial=0.)
        if w == 0:
            return float(np.linalg.norm(self(0.)))
        return min(self._dense_sup(t, 2 * np.pi / w / 256), float(np.linalg.norm(self.amplitude)))

    def to_dict(self):
        return dict(form=self.form, amplitude=self.amplitude.tolist(), frequency=self.frequency.tolist(),
                    phase=self.phase.tolist())


class PiecewiseConstant(InputSignal):
    """ values[k] on [times[k], times[k+1]), values[0] before times[0]. """
    form = 'piecewise_constant'

    def __init__(self, times, values):
        self.times = np.asarray(times, dtype=np.float64).reshape(-1)
        self.values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        if len(self.times) != len(self.values) or np.any(np.diff(self.times) <= 0):
            raise ValueError("Piecewise constant input needs increasing times, one value per time.")
        super().__init__(self.values.shape[1])
        self.breakpoints = tuple(self.times[1:])

    def _index(self, t):
        return max(int(np.searchsorted(self.times, t, side='right')) - 1, 0)

    def __call__(self, t):
        return self.values[self._index(t)].copy()

    def sup_norm_to(self, t):
        return float(np.max(np.linalg.norm(self.values[:self._index(t) + 1], axis=1)))

    def to_dict(self):
        return dict(form=self.form, times=self.times.tolist(), values=self.values.tolist())


class CallbackInput(InputSignal):
    form = 'callback'

    def __init__(self, fn, dim, resolution=1e-3):
        super().__init__(dim)
        self.fn, self.resolution = fn, resolution

    def __call__(self, t):
        return np.asarray(self.fn(t), dtype=np.float64).reshape(self.dim)

    def sup_norm_to(self, t):
        return self._dense_sup(t, self.resolution)


def input_from_dict(d):
    form = d.get('form')
    if form == 'zero':
        return Zero(d['dim'])
    if form == 'constant':
        return Constant(d['value'])
    if form == 'sinusoid':
        return Sinusoid(d['amplitude'], d['frequency'], d.get('phase'))
    if form == 'piecewise_constant':
        return PiecewiseConstant(d['times'], d['values'])
    raise ValueError("Unknown input form: {}.".format(form))


# Simulation.

Event = namedtuple('Event', 'time kind')


class Trajectory:
    """ Accepted steps of a simulation. active[k] holds the labels whose fields drove the step ending at times[k]. """

    def __init__(self, times, states, active, events, complete, row_events=None, max_sliding_residual=0.):
        self.times = np.asarray(times, dtype=np.float64)
        self.states = np.asarray(states, dtype=np.float64)
        self.active = list(active)
        self.events = list(events)
        self.complete = complete
        self.row_events = list(row_events) if row_events is not None else [''] * len(self.times)
        self.max_sliding_residual = max_sliding_residual

    def __len__(self):
        return len(self.times)

    def event_counts(self):
        counts = dict()
        for e in self.events:
            counts[e.kind] = counts.get(e.kind, 0) + 1
        return counts

    def summary(self):
        return dict(n_steps=len(self), t_final=float(self.times[-1]), x_final=self.states[-1].tolist(),
                    complete=self.complete, events=self.event_counts(),
                    max_sliding_residual=float(self.max_sliding_residual))

    def save_csv(self, path):
        """ Header t,x1..xn,active,event; active labels joined by '|'. """
        n = self.states.shape[1]
        rows = [['%.12e' % t] + ['%.12e' % v for v in x] + ['|'.join(map(str, a)), e]
                for t, x, a, e in zip(self.times, self.states, self.active, self.row_events)]
        header = ','.join(['t'] + ['x{}'.format(k + 1) for k in range(n)] + ['active', 'event'])
        np.savetxt(path, np.array(rows, dtype=object).reshape(len(rows), n + 3), fmt='%s', delimiter=',',
                   header=header, comments='')


class _Simulator:
    """ Fixed step RK4 with event localisation, codimension one sliding and minimum norm corner steps. """

    def __init__(self, S, u, dt_max, event_tol, state_bound, corner_selection, seed, max_chatter=200):
        self.S, self.P, self.u = S, S.partition, u
        self.dt_max, self.event_tol, self.state_bound = dt_max, event_tol, state_bound
        self.corner_selection = corner_selection
        self.rng = np.random.default_rng(seed)
        self.max_chatter = max_chatter
        self.warned_corner = False

    # Fields.

    def _u_stage(self, t, last=False):
        return self.u(np.nextafter(t, -np.inf) if last else t)

    def _slide_lambda(self, x, u, mode):
        _, a, b, c = mode
        n = c.sign * c.field.gradient(x)
        sa, sb = n @ self.S.f(a, x, u), n @ self.S.f(b, x, u)
        return 0.5 if sb == sa else sb / (sb - sa)

    def _field(self, mode, x, u):
        if mode[0] == 'region':
            return self.S.f(mode[1], x, u)
        if mode[0] == 'slide':
            lam = np.clip(self._slide_lambda(x, u, mode), 0., 1.)
            return lam * self.S.f(mode[1], x, u) + (1 - lam) * self.S.f(mode[2], x, u)
        vertices = np.array([self.S.f(k, x, u) for k in mode[1]])
        if self.corner_selection == 'random':
            return mode[2] @ vertices
        return min_norm_element(vertices)

    def _rk4(self, mode, t, x, h):
        k1 = self._field(mode, x, self._u_stage(t))
        k2 = self._field(mode, x + h / 2 * k1, self._u_stage(t + h / 2))
        k3 = self._field(mode, x + h / 2 * k2, self._u_stage(t + h / 2))
        k4 = self._field(mode, x + h * k3, self._u_stage(t + h, last=True))
        return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    # Surfaces.

    def _surface_tol(self, x, u):
        grads = max(np.linalg.norm(f.gradient(x)) for f in self.P.fields) if self.P.fields else 0.
        speeds = max(np.linalg.norm(self.S.f(k, x, u)) for k in self.P.labels)
        return 10 * self.event_tol * max(grads * speeds, 1e-300)

    def _inward(self, label, x, u, tol):
        f = self.S.f(label, x, u)
        for c in self.P.region(label).constraints:
            if abs(c.field.value(x)) <= tol:
                g = c.field.gradient(x)
                if c.sign * (g @ f) <= 1e-12 * np.linalg.norm(g) * np.linalg.norm(f):
                    return False
        return True

    def _shared_constraint(self, a, b, x, tol):
        """ The near-zero constraint of region a separating it from region b. """
        near = [c for c in self.P.region(a).constraints if abs(c.field.value(x)) <= tol]
        for c in near:
            for d in self.P.region(b).constraints:
                if d.field is c.field and d.sign == -c.sign:
                    return c
        return near[0] if near else None

    def _project(self, x, c):
        for _ in range(8):
            q = c.field.value(x)
            if abs(q) <= self.event_tol * 1e-3:
                break
            g = c.field.gradient(x)
            x = x - q * g / (g @ g)
        return x

    def _resolve(self, t, x, came_from):
        """ New mode at a point reached on a switching surface. """
        u = self.u(t)
        tol = self._surface_tol(x, u)
        A = active_indices(self.P, x, tol).indices
        if len(A) == 1:
            return ('region', A[0]), 'crossing'
        inward = [a for a in A if self._inward(a, x, u, tol)]
        fresh = [a for a in inward if a != came_from]
        if fresh:
            return ('region', fresh[0]), 'crossing'
        if len(A) == 2:
            a, b = A
            c = self._shared_constraint(a, b, x, tol)
            if c is not None:
                hull = FilippovHull(np.array([self.S.f(a, x, u), self.S.f(b, x, u)]), A, x, u, tol)
                comb = sliding_combination(hull, c.sign * c.field.gradient(x))
                if comb.kind == 'sliding':
                    return ('slide', a, b, c), 'slide_start'
            others = [k for k in A if k != came_from]
            return ('region', others[0] if others else A[0]), 'crossing'
        if not self.warned_corner:
            logger.warning("Trajectory reached %d regions at t=%.6g; using a %s hull selection.", len(A), t,
                           self.corner_selection.replace('_', ' '))
            self.warned_corner = True
        weights = self.rng.dirichlet(np.ones(len(A))) if self.corner_selection == 'random' else None
        return ('corner', A, weights), 'corner'

    def _exit_value(self, mode, x, u):
        """ Negative once x has left the set where the mode applies. """
        if mode[0] == 'region':
            values = self.P.region(mode[1]).values(x)
            return float(values.min()) if values.size else np.inf
        if mode[0] == 'corner':
            # Corner steps are re-resolved after every step.
            return np.inf
        _, a, b, c = mode
        values = [v for r in (a, b) for d, v in zip(self.P.region(r).constraints, self.P.region(r).values(x))
                  if d.field is not c.field]
        lam = self._slide_lambda(x, u, mode)
        return min([lam, 1 - lam] + values)

    def _locate(self, mode, t, x, h, threshold):
        """ Smallest step (within event_tol) after which the exit value drops below threshold. """
        lo, hi = 0., h
        while hi - lo > self.event_tol:
            mid = 0.5 * (lo + hi)
            xm = self._step(mode, t, x, mid)
            if self._exit_value(mode, xm, self.u(t + mid)) >= threshold:
                lo = mid
            else:
                hi = mid
        return hi

    def _step(self, mode, t, x, h):
        x = self._rk4(mode, t, x, h)
        if mode[0] == 'slide':
            x = self._project(x, mode[3])
        return x

    def run(self, x0, T):
        t, x = 0., np.asarray(x0, dtype=np.float64).copy()
        times, states, active, row_events, events = [t], [x.copy()], [], [''], []
        u0 = self.u(t)
        A0 = active_indices(self.P, x, self._surface_tol(x, u0)).indices
        mode, kind = (('region', A0[0]), None) if len(A0) == 1 else self._resolve(t, x, None)
        if mode[0] == 'slide':
            x = self._project(x, mode[3])
            events.append(Event(t, kind))
        active.append(self._labels(mode))
        breakpoints = sorted(b for b in self.u.breakpoints if 0 < b < T)
        complete, max_residual, chatter, last_event = True, 0., 0, -np.inf

        while t < T * (1 - 1e-14):
            h = min(self.dt_max, T - t)
            upcoming = [b for b in breakpoints if b > t + 1e-15]
            if upcoming:
                h = min(h, upcoming[0] - t)

            threshold = min(0., self._exit_value(mode, x, self.u(t)))
            x_new = self._step(mode, t, x, h)
            event = ''
            if self._exit_value(mode, x_new, self.u(t + h)) < threshold:
                h = self._locate(mode, t, x, h, threshold)
                x_new = self._step(mode, t, x, h)
                came_from = mode[1] if mode[0] == 'region' else None
                if mode[0] == 'slide':
                    events.append(Event(t + h, 'slide_end'))
                new_mode, event = self._resolve(t + h, x_new, came_from)
                if new_mode[0] == 'slide':
                    x_new = self._project(x_new, new_mode[3])
                events.append(Event(t + h, event))
                chatter = chatter + 1 if t + h - last_event < 10 * self.event_tol else 0
                last_event = t + h
                if chatter > self.max_chatter:
                    raise StepSizeUnderflow("Chattering at t={:.6g}: {} events within event_tol.".format(
                        t + h, chatter))
            else:
                new_mode = mode
                if mode[0] == 'corner':
                    new_mode, event = self._resolve(t + h, x_new, None)
                    if new_mode[0] == 'slide':
                        x_new = self._project(x_new, new_mode[3])
            driving = self._labels(mode)
            t, x, mode = t + h, x_new, new_mode
            if mode[0] == 'slide':
                max_residual = max(max_residual, abs(mode[3].field.value(x)))

            times.append(t)
            states.append(x.copy())
            active.append(driving)
            row_events.append(event)
            if not np.all(np.isfinite(x)) or np.linalg.norm(x) > self.state_bound:
                logger.info("State bound exceeded at t=%.6g, stopping.", t)
                complete = False
                break

        active[0] = active[1] if len(active) > 1 else active[0]
        return Trajectory(times, states, active[:len(times)], events, complete, row_events, max_residual)

    @staticmethod
    def _labels(mode):
        if mode[0] == 'region':
            return (mode[1],)
        if mode[0] == 'slide':
            return tuple(sorted(mode[1:3]))
        return tuple(mode[1])


def simulate(S, x0, u, T, dt_max=1e-2, event_tol=1e-9, state_bound=1e6, corner_selection='min_norm', seed=0):
    """ Numerical Filippov solution of the switched system from x0 on [0, T].

    :param u: an InputSignal of dimension S.input_dim
    :param dt_max: RK4 step away from events
    :param event_tol: time resolution of crossing localisation; sliding constraints are held below it
    :param state_bound: integration stops (complete=False) once |x| exceeds it
    :param corner_selection: hull element used where ≥3 regions meet: 'min_norm' or 'random' (seeded)
    """
    if T <= 0 or dt_max <= 0 or event_tol <= 0 or state_bound <= 0:
        raise ValueError("Horizon and simulator tolerances must be positive.")
    if corner_selection not in ('min_norm', 'random'):
        raise ValueError("Unknown corner selection: {}.".format(corner_selection))
    if u.dim != S.input_dim or np.shape(x0) != (S.dim,):
        raise DimensionMismatch("Input or initial state dimension does not match the system.")
    return _Simulator(S, u, dt_max, event_tol, state_bound, corner_selection, seed).run(x0, T)
