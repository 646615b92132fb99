""" Composite Lyapunov functions for two interconnected subsystems.

Feedback loops satisfying a small gain condition get W = max{σ(V₁(x₁)), V₂(x₂)}; cascades where x₂ drives x₁ get
W = ℓ(V₂(x₂)) + V₁(x₁) with ℓ = ∫ν. Derived decrease rates act on W (level units).
"""

import logging
import numpy as np

from . import kfun
from .certify import ISSCertificate, DissipationCertificate, LEVEL
from .errors import DimensionMismatch, SmallGainViolated, RatioUnbounded, TagMismatch
from .nonsmooth import GradientHull, gradient_hull

logger = logging.getLogger(__name__)


class SubsystemCertificate:
    """ Level-form data of one subsystem.

    In a feedback loop: V_i ≥ max{χ_i(V_j), γ_i(|u|)} ⇒ max V̄̇_i ≤ −ρ_i(V_i).
    In a cascade: max V̄̇₁ ≤ −ρ₁(V₁) + γ₁(V₂) and max V̄̇₂ ≤ −ρ₂(V₂) + γ₂(|u|); chi is unused.
    """

    def __init__(self, V, alpha_lo, alpha_hi, rho, chi=None, gamma=None):
        self.V, self.alpha_lo, self.alpha_hi, self.rho = V, alpha_lo, alpha_hi, rho
        self.chi = kfun.zero() if chi is None else chi
        self.gamma = kfun.zero() if gamma is None else gamma
        for name, f in (('chi', self.chi), ('gamma', self.gamma)):
            if f.tag not in kfun.K_CLASS and not f.is_zero:
                raise TagMismatch("Subsystem {} must be class K, got {}.".format(name, f.tag))

    @property
    def dim(self):
        return self.V.dim


class CompositeLyapunov:
    """ W on the product space; x = (x₁, x₂). """
    kind = None

    def __init__(self, c1, c2, rho, gamma, alpha_lo, alpha_hi):
        self.c1, self.c2 = c1, c2
        self.rho, self.gamma = rho, gamma
        self.alpha_lo, self.alpha_hi = alpha_lo, alpha_hi

    @property
    def dims(self):
        return self.c1.dim, self.c2.dim

    @property
    def dim(self):
        return self.c1.dim + self.c2.dim

    def split(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise DimensionMismatch("Composite of dimension {} evaluated at shape {}.".format(self.dim, x.shape))
        return x[..., :self.c1.dim], x[..., self.c1.dim:]

    def levels(self, x):
        x1, x2 = self.split(x)
        return self.c1.V.value(x1), self.c2.V.value(x2)

    def value(self, x):
        raise NotImplementedError

    def gradient_hull(self, x, tol=1e-9):
        x1, x2 = self.split(x)
        return composite_gradient_hull(self, x1, x2, tol)

    def certificate(self):
        raise NotImplementedError

    def to_dict(self):
        return dict(kind=self.kind, rho=self.rho.to_dict(), gamma=self.gamma.to_dict(),
                    alpha_lo=self.alpha_lo.to_dict(), alpha_hi=self.alpha_hi.to_dict())


def _lift(vertices, scale, n_other, first):
    pad = np.zeros((len(vertices), n_other))
    vertices = scale * np.asarray(vertices)
    return np.hstack([vertices, pad]) if first else np.hstack([pad, vertices])


class MaxSmallGain(CompositeLyapunov):
    kind = 'max_small_gain'

    def __init__(self, sigma, c1, c2, rho, gamma, alpha_lo, alpha_hi):
        super().__init__(c1, c2, rho, gamma, alpha_lo, alpha_hi)
        self.sigma = sigma

    def value(self, x):
        v1, v2 = self.levels(x)
        return np.maximum(self.sigma(v1), v2)

    def certificate(self):
        """ W > γ(|u|) ⇒ max Ẇ ≤ −ρ(W). """
        return ISSCertificate(self, self.alpha_lo, self.alpha_hi, self.rho, self.gamma, rho_argument=LEVEL)

    def to_dict(self):
        d = super().to_dict()
        d['sigma'] = self.sigma.to_dict()
        return d


class SumCascade(CompositeLyapunov):
    kind = 'sum_cascade'

    def __init__(self, nu, ell, theta, c1, c2, rho, gamma, alpha_lo, alpha_hi):
        super().__init__(c1, c2, rho, gamma, alpha_lo, alpha_hi)
        self.nu, self.ell, self.theta = nu, ell, theta

    def value(self, x):
        v1, v2 = self.levels(x)
        return self.ell(v2) + v1

    def dissipation_certificate(self):
        """ max Ẇ ≤ −ρ(W) + γ(|u|). """
        return DissipationCertificate(self, self.alpha_lo, self.alpha_hi, self.rho, self.gamma, form=LEVEL)

    def certificate(self):
        return self.dissipation_certificate().to_implication()

    def to_dict(self):
        d = super().to_dict()
        d.update(nu=self.nu.to_dict(), ell=self.ell.to_dict(), theta=self.theta.to_dict())
        return d


def composite_gradient_hull(W, x1, x2, tol=1e-9):
    """ Max form: the lifted hull of the larger branch, both branches within tol·(1 + |W|) of a tie.
    Sum form: all pairs (g, ℓ′(V₂)h) of component gradient vertices.
    """
    x1, x2 = np.asarray(x1, dtype=np.float64), np.asarray(x2, dtype=np.float64)
    n1, n2 = W.dims
    if x1.shape != (n1,) or x2.shape != (n2,):
        raise DimensionMismatch("Composite on R^{} x R^{} evaluated at shapes {} and {}.".format(
            n1, n2, x1.shape, x2.shape))
    x = np.concatenate([x1, x2])
    H1, H2 = gradient_hull(W.c1.V, x1, tol), gradient_hull(W.c2.V, x2, tol)
    v1, v2 = float(W.c1.V.value(x1)), float(W.c2.V.value(x2))

    if isinstance(W, MaxSmallGain):
        u1 = float(W.sigma(v1))
        gap, band = u1 - v2, tol * (1 + max(abs(u1), abs(v2)))
        blocks, indices = [], []
        if gap >= -band:
            blocks.append(_lift(H1.vertices, float(W.sigma.derivative(v1)), n2, True))
            indices += [(1, j) for j in H1.indices]
        if gap <= band:
            blocks.append(_lift(H2.vertices, 1., n1, False))
            indices += [(2, j) for j in H2.indices]
        return GradientHull(np.vstack(blocks), tuple(indices), x)

    slope = float(W.ell.derivative(v2))
    vertices = [np.concatenate([g, slope * h]) for g in H1.vertices for h in H2.vertices]
    indices = [(i, j) for i in H1.indices for j in H2.indices]
    return GradientHull(np.array(vertices), tuple(indices), x)


def _full_state_lower(a1, a2):
    """ s ↦ min{a1, a2}(s/√2): one block carries at least half of |x|². """
    return kfun.compose_chain(kfun.pointwise_extremum('min', a1, a2), kfun.Linear(1 / np.sqrt(2)))


def small_gain_compose(c1, c2, domain_max=1e3, sigma=None):
    """ Max-form composite of a feedback loop with χ₁∘χ₂ < id.

    σ comes from construct_sigma unless given; then γ = max{σ∘γ₁, γ₂} and ρ = min{ρ̂₁, ρ₂} with
    ρ̂₁(s) = σ′(σ⁻¹(s))·ρ₁(σ⁻¹(s)).
    """
    if sigma is None:
        sigma = kfun.construct_sigma(c1.chi, c2.chi, domain_max=domain_max)
    else:
        check = kfun.log_grid(domain_max * 1e-6, domain_max, 1000)
        s = sigma(check)
        if not (np.all(c2.chi(check) < s) and np.all(c1.chi(s) < check)):
            raise SmallGainViolated("Given σ does not separate χ₂ from χ₁⁻¹ on the validation grid.")

    if isinstance(sigma, kfun.Linear):
        rho1_hat = kfun.scale(sigma.c, kfun.compose_chain(c1.rho, kfun.Linear(1 / sigma.c)))
    else:
        sigma_inv = kfun.inverse(sigma)
        rho1_hat = kfun.multiply(kfun.compose_chain(kfun.Derivative(sigma), sigma_inv),
                                 kfun.compose_chain(c1.rho, sigma_inv))
        slope0 = float(sigma.derivative(0.))
        if slope0 <= 2 * kfun.SLOPE_FLOOR:
            logger.warning("σ′(0) = %.1e; the derived decrease rate is floored near 0.", slope0)

    gamma = kfun.pointwise_extremum('max', kfun.compose_chain(sigma, c1.gamma), c2.gamma)
    rho = kfun.pointwise_extremum('min', rho1_hat, c2.rho)
    alpha_lo = _full_state_lower(kfun.compose_chain(sigma, c1.alpha_lo), c2.alpha_lo)
    alpha_hi = kfun.pointwise_extremum('max', kfun.compose_chain(sigma, c1.alpha_hi), c2.alpha_hi)
    logger.info("Small gain composite built with σ of form %s.", sigma.form)
    return MaxSmallGain(sigma, c1, c2, rho, gamma, alpha_lo, alpha_hi)


def _nu_envelope(gamma1, rho2, M_cap, domain_max, n_grid, floor):
    r = kfun.log_grid(1e-8, domain_max, n_grid)
    ratio = gamma1(r) / rho2(r)
    small = r <= min(1., domain_max)
    if np.any(ratio[small] > M_cap):
        k = int(np.argmax(ratio * small))
        raise RatioUnbounded("γ₁/ρ₂ reaches {:.3e} at s={:.3e}, above the cap {}.".format(ratio[k], r[k], M_cap))
    values = np.maximum(4 * ratio, floor)
    # Look one knot ahead, then make nondecreasing.
    values = np.maximum.accumulate(np.maximum(values, np.append(values[1:], values[-1])))
    if values[0] == values[-1]:
        return kfun.Constant(values[0])
    return kfun.PiecewiseLinear(np.stack([np.append(0., r), np.append(values[0], values)], axis=1))


def cascade_compose(c1, c2, M_cap=1e3, domain_max=1e3, n_grid=400, floor=1e-9):
    """ Sum-form composite of a cascade in which V₂ drives subsystem 1 through γ₁ = c1.gamma.

    ν is a nondecreasing envelope of max{4γ₁/ρ₂, floor}; ℓ = ∫ν; θ = ρ₂⁻¹∘2γ₂;
    γ(s) = (ν(θ(s)) + 1)·γ₂(s) and ρ(s) = min{ρ₁(s/2), γ₁(½ℓ⁻¹(s))}.

    :param M_cap: bound on γ₁/ρ₂ for s ≤ 1; exceeding it raises RatioUnbounded
    """
    for name, c in (('first', c1), ('second', c2)):
        if c.rho.tag != kfun.KINF:
            raise TagMismatch("Cascade needs a Kinf rate in the {} subsystem, got {}.".format(name, c.rho.tag))
    gamma1, gamma2 = c1.gamma, c2.gamma

    nu = _nu_envelope(gamma1, c2.rho, M_cap, domain_max, n_grid, floor)
    check = kfun.log_grid(1e-8, domain_max, 2 * n_grid)
    if np.any(nu(check) < 4 * gamma1(check) / c2.rho(check) * (1 - 1e-12)):
        logger.warning("ν falls below 4γ₁/ρ₂ between envelope knots.")
    ell = kfun.integral_transform(nu)
    theta = kfun.compose_chain(kfun.inverse(c2.rho), kfun.scale(2., gamma2))

    if isinstance(nu, kfun.Constant):
        gamma = kfun.scale(nu.c + 1, gamma2)
    else:
        gamma = kfun.multiply(kfun.add(kfun.compose_chain(nu, theta), kfun.Constant(1.)), gamma2)

    half_level = kfun.compose_chain(kfun.Linear(0.5), kfun.inverse(ell))
    if gamma1.is_zero:
        coupling = kfun.scale(0.25 * floor, kfun.compose_chain(c2.rho, half_level))
    else:
        coupling = kfun.compose_chain(gamma1, half_level)
    rho = kfun.pointwise_extremum('min', kfun.compose_chain(c1.rho, kfun.Linear(0.5)), coupling)

    alpha_lo = _full_state_lower(kfun.compose_chain(ell, c2.alpha_lo), c1.alpha_lo)
    alpha_hi = kfun.add(kfun.compose_chain(ell, c2.alpha_hi), c1.alpha_hi)
    logger.info("Cascade composite built, ν(0) = %.6g.", float(nu(0.)))
    return SumCascade(nu, ell, theta, c1, c2, rho, gamma, alpha_lo, alpha_hi)
