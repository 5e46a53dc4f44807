"""Gaussian calculus in the log-magnitude spectral domain.

All tracked quantities are scalar Gaussians over log-magnitudes (nats).
This module provides the sigma-point machinery used to propagate those
Gaussians through the non-linear "phasor sum" relation

    |C| = |A + B|,  c = 0.5*log(e^{2a} + e^{2b} + 2*cos(phi)*e^{a+b})

with a uniformly distributed phase difference phi, plus the linear
operations (independent addition, straight-line constrained updates and
Gaussian-Gaussian fusion) that the filter cascade needs.

Every operation exists in two forms: an array form working on numpy
arrays of means/variances (used by the frame loop, vectorised across
frequency bins), and a scalar form working on LogGaussian objects.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr, roots_hermitenorm, spence

_LOG_TINY = np.log(1e-300)
_VAR_FLOOR = 1e-12


class InconsistentConstraintError(ValueError):
    """Raised when a zero-variance constraint cannot be satisfied."""


@dataclass
class LogGaussian:
    """Scalar Gaussian over a log-magnitude value (mean nats, variance nats^2)."""

    mean: float
    variance: float

    def __post_init__(self):
        if not (np.isfinite(self.mean) and np.isfinite(self.variance)):
            raise ValueError("LogGaussian requires finite mean and variance")
        if self.variance < 0:
            raise ValueError("LogGaussian variance must be >= 0")


@dataclass
class SigmaPointSet:
    points: np.ndarray
    weights: np.ndarray


@dataclass
class Diagnostics:
    """Counters for numerical events; exposed instead of silently masked."""

    variance_clamps: int = 0
    fallbacks: int = 0

    def add(self, other):
        self.variance_clamps += other.variance_clamps
        self.fallbacks += other.fallbacks


# cached Gauss-Hermite (probabilists') nodes/weights, weights sum to 1
_GH_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gh_nodes(count):
    if count not in _GH_CACHE:
        x, w = roots_hermitenorm(count)
        _GH_CACHE[count] = (x, w / w.sum())
    return _GH_CACHE[count]


def gaussian_sigma_points(g: LogGaussian, count: int) -> SigmaPointSet:
    """Gauss-Hermite abscissae/weights scaled to the given Gaussian.

    Exactly integrates polynomials up to degree 2*count-1 against g.
    """
    if count < 1:
        raise ValueError(f"sigma-point count must be >= 1, got {count}")
    x, w = _gh_nodes(count)
    return SigmaPointSet(g.mean + np.sqrt(g.variance) * x, w.copy())


def phase_sigma_points(count: int) -> SigmaPointSet:
    """Equal-weight points ((i-0.5)*pi/count, i=1..count) on (0, pi).

    Integrates sums of cos(n*phi) terms exactly for every n that is not
    a positive multiple of 2*count -- in particular all n <= 2*count-1
    and n = 2*count+1.
    """
    if count < 1:
        raise ValueError("phase sigma-point count must be >= 1")
    i = np.arange(1, count + 1)
    return SigmaPointSet((i - 0.5) * np.pi / count, np.full(count, 1.0 / count))


def log_phasor_sum(la, lb, cos_phi):
    """log|A + B| from la=log|A|, lb=log|B| and the cosine of the phase gap.

    Uses 0.5*(la+lb) + 0.5*log(2*cosh(la-lb) + 2*cos_phi), with an
    asymptotic branch for large |la-lb| to avoid cosh overflow.
    """
    d = np.asarray(la, dtype=float) - lb
    ad = np.abs(d)
    small = ad < 25.0
    inner = np.where(
        small,
        np.log(np.maximum(2.0 * np.cosh(np.where(small, d, 0.0)) + 2.0 * cos_phi, 1e-300)),
        ad + np.log1p(np.exp(-2.0 * np.minimum(ad, 700.0)) + 2.0 * cos_phi * np.exp(-np.minimum(ad, 700.0))),
    )
    return 0.5 * (np.asarray(la, dtype=float) + lb) + 0.5 * inner


def _log_normal_pdf(x, mean, var):
    v = np.maximum(var, _VAR_FLOOR)
    return -0.5 * ((x - mean) ** 2 / v) - 0.5 * np.log(2.0 * np.pi * v)


def _clamp_var(e2, e1, diag=None):
    v = e2 - e1 * e1
    neg = v < 0
    if diag is not None and np.any(neg):
        diag.variance_clamps += int(np.count_nonzero(neg))
    return np.where(neg, 0.0, v)


# ---------------------------------------------------------------------------
# array-level operations (vectorised over any leading shape)
# ---------------------------------------------------------------------------

def _dilog(x):
    """Dilogarithm Li2(x) for x in [0, 1]."""
    return spence(1.0 - np.asarray(x, dtype=float))


_DILOG_SERIES_TERMS = 120


def _mean_dilog_exp(md, vd):
    """E{Li2(e^{-2|d|})} for d ~ N(md, vd), elementwise over arrays.

    Expands the dilogarithm as sum_k x^k / k^2 and uses the folded-normal
    moment generating function E{e^{-2k|d|}} term by term; each term is
    assembled in the log domain so the Gaussian tail factors never
    overflow. The tail of the series decays like k^-3.
    """
    md = np.abs(np.asarray(md, dtype=float))
    vd = np.asarray(vd, dtype=float)
    s = np.sqrt(np.maximum(vd, _VAR_FLOOR))
    k = np.arange(1, _DILOG_SERIES_TERMS + 1).reshape((-1,) + (1,) * md.ndim)
    t = 2.0 * k
    upper = np.exp(t * md + t * t * vd / 2.0 + log_ndtr(-md / s - t * s))
    lower = np.exp(-t * md + t * t * vd / 2.0 + log_ndtr(md / s - t * s))
    return np.sum((upper + lower) / (k * k), axis=0)


def logsum_moments(ma, va, mb, vb, k_gauss=3, k_phase=6, diag=None):
    """Moments of r = log|A+B| for independent log-Gaussians a, b, uniform phase.

    Evaluated in closed form rather than by nested sigma-point sums:
    conditional on (a, b), the phase average of log|A+B| is exactly
    max(a, b) and the conditional variance is 0.5*Li2(e^{-2|a-b|})
    (Fourier expansion of log|1 + q e^{j phi}|), so the outer Gaussian
    expectation reduces to the classical moments of max(a, b) plus a
    dilogarithm series.  The sigma-count arguments are accepted for
    interface compatibility and ignored; the closed form is the
    converged limit of the sigma-point evaluation.
    """
    del k_gauss, k_phase
    ma, va, mb, vb = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (ma, va, mb, vb)))
    theta2 = np.maximum(va, 0.0) + np.maximum(vb, 0.0)
    degenerate = theta2 <= 0.0
    theta = np.sqrt(np.where(degenerate, 1.0, theta2))
    alpha = (ma - mb) / theta
    cdf = ndtr(alpha)
    pdf = np.exp(-0.5 * alpha * alpha) / np.sqrt(2.0 * np.pi)
    e1 = ma * cdf + mb * (1.0 - cdf) + theta * pdf
    e2 = (ma * ma + va) * cdf + (mb * mb + vb) * (1.0 - cdf) + (ma + mb) * theta * pdf
    e1 = np.where(degenerate, np.maximum(ma, mb), e1)
    e2 = np.where(degenerate, np.maximum(ma, mb) ** 2, e2)
    phase_var = np.where(
        degenerate,
        _dilog(np.exp(-2.0 * np.abs(ma - mb))),
        _mean_dilog_exp(ma - mb, theta2),
    )
    return e1, _clamp_var(e2 + 0.5 * phase_var, e1, diag)


def _split_core(ma, va, mb, vb, y, k_u, k_phase):
    """Conditional moments of (a, b) given log|A+B| = y.

    Change of variables (a, b, phi) -> (u, y, phi) with u = b - a; the
    u-integral is Gaussian quadrature along the prior of u, solving the
    constraint for a at each (u, phi); the Jacobian is unity.

    y may carry extra trailing quadrature axes relative to the priors.
    Returns (e_a, e_a2, e_b, e_b2, fallback) with y's shape.
    """
    ma, va, mb, vb = (np.asarray(v, dtype=float) for v in (ma, va, mb, vb))
    y = np.asarray(y, dtype=float)
    extra = y.ndim - ma.ndim
    sl = (...,) + (None,) * extra
    ma_e, va_e, mb_e, vb_e = ma[sl], va[sl], mb[sl], vb[sl]

    mu_u = mb_e - ma_e
    vu = np.maximum(va_e + vb_e, _VAR_FLOOR)
    x, wu = _gh_nodes(k_u)
    phase = phase_sigma_points(k_phase)
    cos_phi = np.cos(phase.points)

    # point axes: (..., ku, kphi)
    u = mu_u[..., None, None] + np.sqrt(vu)[..., None, None] * x[:, None]
    # y = a + 0.5*u + 0.5*log(2*cosh(u) + 2*cos(phi))  (= a + log|1 + e^{u+j phi}|)
    a_pt = y[..., None, None] - log_phasor_sum(np.zeros_like(u), u, cos_phi)
    b_pt = a_pt + u

    logw = (
        np.log(wu)[:, None]
        + np.log(phase.weights)[None, :]
        + _log_normal_pdf(a_pt, ma_e[..., None, None], va_e[..., None, None])
        + _log_normal_pdf(b_pt, mb_e[..., None, None], vb_e[..., None, None])
        - _log_normal_pdf(u, mu_u[..., None, None], vu[..., None, None])
    )
    mx = np.max(logw, axis=(-2, -1), keepdims=True)
    fallback = ~np.isfinite(mx[..., 0, 0]) | (mx[..., 0, 0] < _LOG_TINY)
    wts = np.exp(logw - np.where(np.isfinite(mx), mx, 0.0))
    z = np.sum(wts, axis=(-2, -1))
    z_safe = np.where(z > 0, z, 1.0)
    fallback |= z <= 0

    def _m(f):
        return np.sum(f * wts, axis=(-2, -1)) / z_safe

    return _m(a_pt), _m(a_pt * a_pt), _m(b_pt), _m(b_pt * b_pt), fallback


def split_scalar_obs(ma, va, mb, vb, y, k_u=15, k_phase=6, diag=None):
    """Posterior moments of (a, b) given the scalar observation log|A+B| = y.

    Where the observation is numerically inconsistent with the priors the
    priors are returned unchanged and the fallback flag is set.
    """
    ma, va, mb, vb, y = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (ma, va, mb, vb, y))
    )
    e_a, e_a2, e_b, e_b2, fb = _split_core(ma, va, mb, vb, y, k_u, k_phase)
    if diag is not None and np.any(fb):
        diag.fallbacks += int(np.count_nonzero(fb))
    ma_out = np.where(fb, ma, e_a)
    va_out = np.where(fb, va, _clamp_var(e_a2, e_a, diag))
    mb_out = np.where(fb, mb, e_b)
    vb_out = np.where(fb, vb, _clamp_var(e_b2, e_b, diag))
    return ma_out, va_out, mb_out, vb_out, fb


def split_distributed_obs(ma, va, mb, vb, mo, vo, k_u=15, k_phase=6, k_obs=3, diag=None):
    """Posterior moments of (a, b) when the observation is itself Gaussian.

    Outer sigma-point sum over the observation distribution of the
    scalar-observation split; conditional moments are combined across
    observation points before conversion to variance.
    """
    ma, va, mb, vb, mo, vo = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (ma, va, mb, vb, mo, vo))
    )
    x, w = _gh_nodes(k_obs)
    y = mo[..., None] + np.sqrt(np.maximum(vo, 0.0))[..., None] * x
    e_a, e_a2, e_b, e_b2, fb = _split_core(ma, va, mb, vb, y, k_u, k_phase)

    wts = np.broadcast_to(w, fb.shape) * (~fb)
    z = np.sum(wts, axis=-1)
    all_fb = z <= 0
    z_safe = np.where(all_fb, 1.0, z)
    if diag is not None and np.any(all_fb):
        diag.fallbacks += int(np.count_nonzero(all_fb))

    def _m(f):
        return np.sum(np.where(fb, 0.0, f) * wts, axis=-1) / z_safe

    ea1, ea2 = _m(e_a), _m(e_a2)
    eb1, eb2 = _m(e_b), _m(e_b2)
    ma_out = np.where(all_fb, ma, ea1)
    va_out = np.where(all_fb, va, _clamp_var(ea2, ea1, diag))
    mb_out = np.where(all_fb, mb, eb1)
    vb_out = np.where(all_fb, vb, _clamp_var(eb2, eb1, diag))
    return ma_out, va_out, mb_out, vb_out, all_fb


def line_constrained_update(mx, vx, my, vy, mt, vt):
    """Condition the diagonal Gaussian (x, y, w) on x + y - w = mt.

    w is a zero-mean slack with variance vt. Returns the posterior
    marginals (mx', vx', my', vy'). Array form; degenerate bins (all
    three variances zero) keep their priors.
    """
    mx, vx, my, vy, mt, vt = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (mx, vx, my, vy, mt, vt))
    )
    denom = vx + vy + vt
    ok = denom > 0
    d_safe = np.where(ok, denom, 1.0)
    innov = mt - (mx + my)
    mx_out = np.where(ok, mx + vx / d_safe * innov, mx)
    my_out = np.where(ok, my + vy / d_safe * innov, my)
    vx_out = np.where(ok, vx * (1.0 - vx / d_safe), vx)
    vy_out = np.where(ok, vy * (1.0 - vy / d_safe), vy)
    return mx_out, np.maximum(vx_out, 0.0), my_out, np.maximum(vy_out, 0.0)


def fuse_moments(m1, v1, m2, v2):
    """Gaussian-Gaussian multiplication (precision-weighted fusion), array form."""
    m1, v1, m2, v2 = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (m1, v1, m2, v2))
    )
    tot = v1 + v2
    tot_safe = np.where(tot > 0, tot, 1.0)
    mean = np.where(tot > 0, (m1 * v2 + m2 * v1) / tot_safe, m1)
    var = np.where(tot > 0, v1 * v2 / tot_safe, 0.0)
    # infinite-variance inputs: the other factor wins
    mean = np.where(np.isinf(v1), m2, np.where(np.isinf(v2), m1, mean))
    var = np.where(np.isinf(v1), v2, np.where(np.isinf(v2), v1, var))
    return mean, var


# ---------------------------------------------------------------------------
# scalar wrappers
# ---------------------------------------------------------------------------

def add_independent(g1: LogGaussian, g2: LogGaussian) -> LogGaussian:
    """Sum of independent Gaussians: means add, variances add."""
    return LogGaussian(g1.mean + g2.mean, g1.variance + g2.variance)


def logsum_prior(a: LogGaussian, b: LogGaussian, k_gauss=3, k_phase=6) -> LogGaussian:
    m, v = logsum_moments(a.mean, a.variance, b.mean, b.variance, k_gauss, k_phase)
    return LogGaussian(float(m), float(v))


def logsum_posterior_scalar(prior_a: LogGaussian, prior_b: LogGaussian, y: float,
                            k_phase=6, k_u=15, diag=None):
    ma, va, mb, vb, _ = split_scalar_obs(
        prior_a.mean, prior_a.variance, prior_b.mean, prior_b.variance, y,
        k_u=k_u, k_phase=k_phase, diag=diag,
    )
    return LogGaussian(float(ma), float(va)), LogGaussian(float(mb), float(vb))


def logsum_posterior_distributed(prior_a: LogGaussian, prior_b: LogGaussian,
                                 obs: LogGaussian, k_phase=6, k_u=15, k_obs=3,
                                 diag=None):
    ma, va, mb, vb, _ = split_distributed_obs(
        prior_a.mean, prior_a.variance, prior_b.mean, prior_b.variance,
        obs.mean, obs.variance, k_u=k_u, k_phase=k_phase, k_obs=k_obs, diag=diag,
    )
    return LogGaussian(float(ma), float(va)), LogGaussian(float(mb), float(vb))


def constrained_linear_update(prior_x: LogGaussian, prior_y: LogGaussian,
                              total: LogGaussian):
    """Condition (x, y, w) with diagonal covariance on x + y - w = total.mean."""
    denom = prior_x.variance + prior_y.variance + total.variance
    if denom == 0.0:
        if abs(prior_x.mean + prior_y.mean - total.mean) > 1e-12:
            raise InconsistentConstraintError(
                "zero-variance constraint inconsistent with prior means"
            )
        return (LogGaussian(prior_x.mean, 0.0), LogGaussian(prior_y.mean, 0.0))
    mx, vx, my, vy = line_constrained_update(
        prior_x.mean, prior_x.variance, prior_y.mean, prior_y.variance,
        total.mean, total.variance,
    )
    return LogGaussian(float(mx), float(vx)), LogGaussian(float(my), float(vy))


def fuse(g1: LogGaussian, g2: LogGaussian) -> LogGaussian:
    if g1.variance + g2.variance == 0.0:
        if g1.mean != g2.mean:
            raise InconsistentConstraintError(
                "cannot fuse two zero-variance Gaussians with unequal means"
            )
        return LogGaussian(g1.mean, 0.0)
    m, v = fuse_moments(g1.mean, g1.variance, g2.mean, g2.variance)
    return LogGaussian(float(m), float(v))
