""" Two-mode switched linear plants: symmetric eigenvalue margins, LMI verification of a state feedback with a
switched observer, closed-loop gains, the flower example and the closed-loop switched system on (x, e). """

import json
import logging
import os
from collections import namedtuple
import numpy as np

from . import kfun
from .certify import CheckReport, ISSCertificate
from .errors import NotSymmetric, DimensionMismatch, UnverifiedDesign, ParameterOrder, UnsupportedForm
from .nonsmooth import PiecewiseQuadratic
from .partition import QuadraticForm, LinearForm, ProperPartition, Region
from .switched import SwitchedSystem, Linear as LinearMode

logger = logging.getLogger(__name__)

DATA_DIR = os.path.join(os.path.dirname(__file__), 'data')


def check_symmetric(M, tol=1e-12):
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    if M.shape[0] != M.shape[1]:
        raise DimensionMismatch("Expected a square matrix, got shape {}.".format(M.shape))
    if np.max(np.abs(M - M.T), initial=0.) > tol * max(1., np.max(np.abs(M), initial=0.)):
        raise NotSymmetric("Matrix is not symmetric (residual {:.3e}).".format(np.max(np.abs(M - M.T))))
    return 0.5 * (M + M.T)


def jacobi_eigenvalues(M, tol=1e-15, max_sweeps=60):
    """ Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending. """
    A = check_symmetric(M).copy()
    n = len(A)
    scale = max(np.linalg.norm(A), 1e-300)
    for sweep in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(A, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if A[p, q] == 0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2 * A[p, q])
                t = (1. if theta >= 0 else -1.) / (abs(theta) + np.sqrt(theta * theta + 1))
                c = 1 / np.sqrt(t * t + 1)
                s = t * c
                Ap, Aq = A[:, p].copy(), A[:, q].copy()
                A[:, p], A[:, q] = c * Ap - s * Aq, s * Ap + c * Aq
                Rp, Rq = A[p, :].copy(), A[q, :].copy()
                A[p, :], A[q, :] = c * Rp - s * Rq, s * Rp + c * Rq
                A[p, q] = A[q, p] = 0.
    else:
        logger.warning("Jacobi iteration stopped after %d sweeps.", max_sweeps)
    return np.sort(np.diag(A))


def lmi_residual(M):
    """ λ_max(M); a negative value certifies M ≺ 0 with that margin. """
    return float(jacobi_eigenvalues(M)[-1])


def norm2(M, tol=1e-10, max_iter=10000, seed=0):
    """ Spectral norm by power iteration on MᵀM, with a Jacobi fallback when it stalls. """
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    G = M.T @ M
    if not np.any(G):
        return 0.
    v = np.random.default_rng(seed).standard_normal(len(G))
    v /= np.linalg.norm(v)
    value = 0.
    for _ in range(max_iter):
        w = G @ v
        new = float(np.linalg.norm(w))
        if new == 0:
            break
        v = w / new
        if abs(new - value) <= tol * new:
            return float(np.sqrt(new))
        value = new
    return float(np.sqrt(max(jacobi_eigenvalues(G)[-1], 0.)))


class LinearSwitchedPlant:
    """ ẋ = A_i x + B u, y = C x, with mode 1 where q(x) ≥ 0 and mode 2 where q(x) ≤ 0. """

    def __init__(self, A1, A2, B, C, q):
        self.A1, self.A2 = (np.atleast_2d(np.asarray(A, dtype=np.float64)) for A in (A1, A2))
        n = len(self.A1)
        self.B = np.asarray(B, dtype=np.float64).reshape(n, -1)
        self.C = np.atleast_2d(np.asarray(C, dtype=np.float64))
        if self.A1.shape != (n, n) or self.A2.shape != (n, n) or self.C.shape[1] != n:
            raise DimensionMismatch("Inconsistent plant dimensions: A1 {}, A2 {}, B {}, C {}.".format(
                self.A1.shape, self.A2.shape, self.B.shape, self.C.shape))
        if not isinstance(q, (QuadraticForm, LinearForm)):
            q = QuadraticForm(q)
        if q.dim != n:
            raise DimensionMismatch("Switching form of dimension {} for a plant of dimension {}.".format(q.dim, n))
        if isinstance(q, QuadraticForm):
            eig = jacobi_eigenvalues(q.Q)
            if not (eig[0] < 0 < eig[-1]):
                raise ValueError("Switching matrix must be indefinite, eigenvalues {}.".format(eig.tolist()))
        self.q = q

    @property
    def n(self):
        return len(self.A1)

    @property
    def m(self):
        return self.B.shape[1]

    def partition(self):
        return ProperPartition(self.n, [Region([(self.q, 1)], 1), Region([(self.q, -1)], 2)])

    def system(self):
        return SwitchedSystem(self.partition(), {1: LinearMode(self.A1, self.B), 2: LinearMode(self.A2, self.B)},
                              self.m)

    def to_dict(self):
        return dict(A1=self.A1.tolist(), A2=self.A2.tolist(), B=self.B.tolist(), C=self.C.tolist(),
                    q=self.q.to_dict())


class ControllerDesign:
    """ State feedback u = K z on the observer state z, observer gains L_i, and the Lyapunov data of both loops. """

    FIELDS = ('K', 'L1', 'L2', 'P1', 'P2', 'Pe', 'mu1', 'mu2', 'mu12', 'mu21', 'muQ', 'a_x', 'a_e', 'eps_share')

    def __init__(self, K, L1, L2, P1, P2, Pe, mu1=0., mu2=0., mu12=0., mu21=0., muQ=0., a_x=1., a_e=1.,
                 eps_share=0.5):
        self.K, self.L1, self.L2 = (np.atleast_2d(np.asarray(M, dtype=np.float64)) for M in (K, L1, L2))
        self.P1, self.P2, self.Pe = (check_symmetric(P) for P in (P1, P2, Pe))
        for name, P in (('P1', self.P1), ('P2', self.P2), ('Pe', self.Pe)):
            low = jacobi_eigenvalues(P)[0]
            if low <= 0:
                raise ValueError("{} must be positive definite, smallest eigenvalue {}.".format(name, low))
        if mu1 < 0 or mu2 < 0:
            raise ValueError("S-procedure multipliers must be nonnegative, got {} and {}.".format(mu1, mu2))
        if a_x <= 0 or a_e <= 0 or not 0 < eps_share < 1:
            raise ValueError("Need a_x, a_e > 0 and 0 < eps_share < 1.")
        self.mu1, self.mu2, self.mu12, self.mu21, self.muQ = map(float, (mu1, mu2, mu12, mu21, muQ))
        self.a_x, self.a_e, self.eps_share = float(a_x), float(a_e), float(eps_share)

    def to_dict(self):
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in
                ((k, getattr(self, k)) for k in self.FIELDS)}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.FIELDS if k in d})


def _lmi_report(named, tol):
    margins = {name: -lmi_residual(M) - tol for name, M in named}
    return margins


def _quadratic(plant):
    if isinstance(plant.q, LinearForm):
        raise UnsupportedForm("LMI conditions for halfspace switching are not implemented.")
    return plant.q.Q


def plant_lmi_matrices(plant, design):
    """ Matrices that must be negative definite for the state feedback loop, by name. """
    Q = _quadratic(plant)
    n = plant.n
    if design.K.shape != (plant.m, n) or design.P1.shape != (n, n):
        raise DimensionMismatch("Design of shape K {}, P1 {} for a plant with n={}, m={}.".format(
            design.K.shape, design.P1.shape, n, plant.m))
    I = np.eye(n)
    BK = plant.B @ design.K

    def lyap(P, A):
        return P @ (A + BK) + (A + BK).T @ P + design.a_x * I

    return [('mode1', design.mu1 * Q + lyap(design.P1, plant.A1)),
            ('mode2', -design.mu2 * Q + lyap(design.P2, plant.A2)),
            ('cross12', design.mu12 * Q + lyap(design.P1, plant.A2)),
            ('cross21', design.mu21 * Q + lyap(design.P2, plant.A1))]


def verify_plant_lmis(plant, design, tol=1e-8):
    """ P₁ − P₂ = μ_Q Q (to tol) and the four feedback LMIs with λ_max ≤ −tol; margins are −λ_max − tol. """
    Q = _quadratic(plant)
    margins = {'switch_equality': tol - float(np.max(np.abs(design.P1 - design.P2 - design.muQ * Q)))}
    margins.update(_lmi_report(plant_lmi_matrices(plant, design), tol))
    report = CheckReport(margins, [], dict(lmis=len(margins)))
    logger.info("Plant LMIs: passed=%s, margins=%s.", report.passed, margins)
    return report


def verify_observer_lmis(plant, design, tol=1e-8):
    """ P_e(A_i − L_i C) + (A_i − L_i C)ᵀP_e + a_e I ≺ 0 for both modes. """
    n = plant.n
    if design.Pe.shape != (n, n) or design.L1.shape != (n, plant.C.shape[0]) or design.L2.shape != design.L1.shape:
        raise DimensionMismatch("Observer design does not match the plant dimensions.")
    named = []
    for k, (A, L) in enumerate(((plant.A1, design.L1), (plant.A2, design.L2))):
        M = A - L @ plant.C
        named.append(('observer{}'.format(k + 1), design.Pe @ M + M.T @ design.Pe + design.a_e * np.eye(n)))
    margins = _lmi_report(named, tol)
    report = CheckReport(margins, [], dict(lmis=len(margins)))
    logger.info("Observer LMIs: passed=%s, margins=%s.", report.passed, margins)
    return report


class ClosedLoopGains(namedtuple('ClosedLoopGains', 'gamma_x_slope gamma_e_slope eta1_slope eta2_slope '
                                                    'small_gain_value passed eta1 eta2 eta_small_gain')):
    def to_dict(self):
        return dict(gamma_x_slope=self.gamma_x_slope, gamma_e_slope=self.gamma_e_slope,
                    eta1_slope=self.eta1_slope, eta2_slope=self.eta2_slope,
                    small_gain_value=self.small_gain_value, passed=self.passed, eta_small_gain=self.eta_small_gain)


def _verified(plant, design, tol):
    for name, report in (('plant', verify_plant_lmis(plant, design, tol)),
                         ('observer', verify_observer_lmis(plant, design, tol))):
        if not report.passed:
            raise UnverifiedDesign("The {} LMIs fail: {}.".format(name, report.margins))


def closed_loop_gains(plant, design, tol=1e-8):
    """ Gains of the state and error loops and the scalar small gain test

        16‖B‖²‖K‖²‖A₁−A₂‖² λ̄ₓ³λ̄ₑ³ / (λ̲ₓλ̲ₑaₓ²aₑ²) < 1.

    η₁ = ᾱₓ∘γ̂ₑ∘α̲ₑ⁻¹ and η₂ = ᾱₑ∘γ̂ₓ∘α̲ₓ⁻¹ are also built as comparison functions and tested by small_gain_holds.
    """
    _verified(plant, design, tol)
    eig_x = np.concatenate([jacobi_eigenvalues(design.P1), jacobi_eigenvalues(design.P2)])
    lx_lo, lx_hi = eig_x.min(), eig_x.max()
    eig_e = jacobi_eigenvalues(design.Pe)
    le_lo, le_hi = eig_e[0], eig_e[-1]
    nB, nK, nD = norm2(plant.B), norm2(design.K), norm2(plant.A1 - plant.A2)
    eps = design.eps_share

    gx = 2 * nB * nK * lx_hi / (eps * design.a_x)
    ge = 2 * nD * le_hi / (eps * design.a_e)
    value = 16 * nB ** 2 * nK ** 2 * nD ** 2 * lx_hi ** 3 * le_hi ** 3 / (lx_lo * le_lo * design.a_x ** 2 *
                                                                      design.a_e ** 2)

    def eta(alpha_hi, slope, alpha_lo):
        if slope == 0:
            return kfun.zero()
        inner = kfun.compose_chain(kfun.Linear(slope), kfun.inverse(kfun.Power(alpha_lo, 2)))
        return kfun.compose_chain(kfun.Power(alpha_hi, 2), inner)

    eta1, eta2 = eta(lx_hi, ge, le_lo), eta(le_hi, gx, lx_lo)
    eta_holds, _ = kfun.small_gain_holds(eta1, eta2, kfun.log_grid(1e-6, 1e3, 200))
    gains = ClosedLoopGains(float(gx), float(ge), float(lx_hi * ge ** 2 / le_lo), float(le_hi * gx ** 2 / lx_lo),
                            float(value), bool(value < 1), eta1, eta2, eta_holds)
    logger.info("Closed-loop small gain value %.6e (passed=%s).", value, gains.passed)
    return gains


def eq17_slope(A_list, P_list, B, eps_prime, n_dirs=3600, seed=0, safety=1.001):
    """ Smallest b (on sampled unit directions) with |x| ≥ b|u| ⇒ ⟨∇(xᵀP_i x), A_i x + B u⟩ ≤ −ε′|x|² for each mode.
    Per direction the bound is 2|BᵀP_i x̂| / x̂ᵀN_i x̂ with N_i = −(A_iᵀP_i + P_iA_i) − ε′I, which must be positive
    definite.
    """
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    n = B.shape[0]
    if n == 2:
        angles = np.linspace(0, np.pi, n_dirs, endpoint=False)
        D = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    else:
        D = np.random.default_rng(seed).standard_normal((n_dirs, n))
        D /= np.linalg.norm(D, axis=1, keepdims=True)
    b = 0.
    for A, P in zip(A_list, P_list):
        A, P = np.asarray(A, dtype=np.float64), np.asarray(P, dtype=np.float64)
        N = -(A.T @ P + P @ A) - eps_prime * np.eye(n)
        if jacobi_eigenvalues(N)[0] <= 0:
            raise ValueError("AᵀP + PA + ε′I is not negative definite for some mode.")
        ratios = 2 * np.linalg.norm(D @ P @ B, axis=1) / np.einsum('ki,ij,kj->k', D, N, D)
        b = max(b, float(ratios.max()))
    return safety * b


Flower = namedtuple('Flower', 'plant certificate expected system')


def flower_instance(a1=1., a2=5., eps=0.1, B=None):
    """ Two rotating modes A₁ = [[−ε, a₁], [−a₂, −ε]], A₂ = RᵀA₁R, switched on xᵀdiag(−1, 1)x, with the piecewise
    quadratic V given by P₁ = diag(a₂, a₁), P₂ = diag(a₁, a₂).

    :return: Flower(plant, certificate, expected, system); expected holds the slope 2‖B‖/(a₁+a₂) beyond which
        surface Lie derivatives are empty, and the slope b of the smooth decrease.
    """
    if not 0 < eps < a1 <= a2:
        raise ParameterOrder("Need 0 < eps < a1 <= a2, got eps={}, a1={}, a2={}.".format(eps, a1, a2))
    B = np.eye(2) if B is None else np.asarray(B, dtype=np.float64).reshape(2, -1)
    A1 = np.array([[-eps, a1], [-a2, -eps]])
    A2 = np.array([[-eps, a2], [-a1, -eps]])
    R = np.array([[0., 1.], [-1., 0.]])
    if not (np.allclose(R.T @ A1 @ R, A2) and np.allclose(R.T @ A2 @ R, A1)):
        raise ValueError("Flower modes are not rotations of each other.")
    P1, P2 = np.diag([a2, a1]), np.diag([a1, a2])
    eps_prime = eps / 2
    residual = max(lmi_residual(A.T @ P + P @ A + eps_prime * np.eye(2)) for A, P in ((A1, P1), (A2, P2)))
    if residual > 0:
        raise ParameterOrder("Mode decrease fails (λ_max = {:.3e}); a1 is too small for eps={}.".format(
            residual, eps))

    plant = LinearSwitchedPlant(A1, A2, B, np.eye(2), np.diag([-1., 1.]))
    system = plant.system()
    V = PiecewiseQuadratic(system.partition, {1: P1, 2: P2})
    threshold = 2 * norm2(B) / (a1 + a2)
    b = eq17_slope((A1, A2), (P1, P2), B, eps_prime)
    c = max(b, threshold)
    certificate = ISSCertificate(V, kfun.Power(a1, 2), kfun.Power(a2, 2), kfun.Power(eps_prime, 2),
                                 kfun.Power(a2 * c ** 2, 2))
    expected = dict(threshold_slope=threshold, decrease_slope=b, decrease_residual=residual)
    return Flower(plant, certificate, expected, system)


def closed_loop_partition(plant):
    """ Regions 11, 12, 21, 22 on (x, e): the first digit is the mode of x, the second the mode of z = x − e. """
    Q = _quadratic(plant)
    n = plant.n
    Z = np.zeros((n, n))
    qx = QuadraticForm(np.block([[Q, Z], [Z, Z]]))
    qz = QuadraticForm(np.block([[Q, -Q], [-Q, Q]]))
    signs = {1: 1, 2: -1}
    labels = [11, 21, 12, 22]
    regions = [Region([(qx, signs[k // 10]), (qz, signs[k % 10])], k) for k in labels]
    return ProperPartition(2 * n, regions, labels)


def build_closed_loop(plant, design, tol=1e-8):
    """ ẋ = A_i x + BK(x − e), ė = (A_i − A_j)x + (A_j − L_jC)e with i the mode of x and j the mode of z = x − e. """
    _verified(plant, design, tol)
    BK = plant.B @ design.K
    A = {1: plant.A1, 2: plant.A2}
    L = {1: design.L1, 2: design.L2}
    modes = {}
    for i in (1, 2):
        for j in (1, 2):
            M = np.block([[A[i] + BK, -BK], [A[i] - A[j], A[j] - L[j] @ plant.C]])
            modes[10 * i + j] = LinearMode(M)
    return SwitchedSystem(closed_loop_partition(plant), modes, 0)


def search_design(plant, K, L1, L2, a_x=1., a_e=1., iters=10000, seed=0, step=0.1, eps_share=0.5):
    """ Seeded coordinate descent on P₁, μ's and P_e minimising the largest LMI residual (P₂ = P₁ − μ_Q Q).

    :return: (design, objective); objective < 0 means every LMI holds strictly
    """
    Q = _quadratic(plant)
    n = plant.n
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n)
    m = len(iu[0])
    # x = [P1 upper, Pe upper, mu1, mu2, mu12, mu21, muQ]
    x = np.concatenate([np.eye(n)[iu], np.eye(n)[iu], np.zeros(5)])

    def unpack(x):
        P1 = np.zeros((n, n))
        P1[iu] = x[:m]
        P1 = P1 + np.triu(P1, 1).T
        Pe = np.zeros((n, n))
        Pe[iu] = x[m:2 * m]
        Pe = Pe + np.triu(Pe, 1).T
        mu1, mu2, mu12, mu21, muQ = x[2 * m:]
        return P1, P1 - muQ * Q, Pe, max(mu1, 0.), max(mu2, 0.), mu12, mu21, muQ

    def objective(x):
        P1, P2, Pe, mu1, mu2, mu12, mu21, muQ = unpack(x)
        lows = [jacobi_eigenvalues(P)[0] for P in (P1, P2, Pe)]
        if min(lows) <= 1e-6:
            return 1e6 - min(lows)
        design = ControllerDesign(K, L1, L2, P1, P2, Pe, mu1, mu2, mu12, mu21, muQ, a_x, a_e, eps_share)
        worst = max(lmi_residual(M) for _, M in plant_lmi_matrices(plant, design))
        for A, L in ((plant.A1, L1), (plant.A2, L2)):
            M = A - np.asarray(L) @ plant.C
            worst = max(worst, lmi_residual(Pe @ M + M.T @ Pe + a_e * np.eye(n)))
        return worst

    best = objective(x)
    for it in range(iters):
        k = rng.integers(len(x))
        trial = x.copy()
        trial[k] += step * rng.standard_normal()
        value = objective(trial)
        if value < best:
            x, best = trial, value
    P1, P2, Pe, mu1, mu2, mu12, mu21, muQ = unpack(x)
    logger.info("Design search finished with largest residual %.6e.", best)
    if best >= 1e6:
        return None, best
    return ControllerDesign(K, L1, L2, P1, P2, Pe, mu1, mu2, mu12, mu21, muQ, a_x, a_e, eps_share), best


def load_fixture(path=None):
    """ (plant, design) from the committed closed-loop fixture, or from a file with the same layout. """
    path = os.path.join(DATA_DIR, 'closed_loop_fixture.json') if path is None else path
    with open(path) as f:
        d = json.load(f)
    return plant_from_dict(d['plant']), ControllerDesign.from_dict(d['design'])


def plant_from_dict(d):
    q = d['q']
    if isinstance(q, dict):
        q = LinearForm(q['v'], q.get('offset', 0.)) if q.get('form') == 'linear' else QuadraticForm(q['Q'])
    return LinearSwitchedPlant(d['A1'], d['A2'], d['B'], d['C'], q)
