"""Bivariate single-parameter copula families parametrized by Kendall's tau.

Four base families are supported: gaussian, t4 (Student t with 4 degrees of
freedom), clayton and gumbel.  The asymmetric families (clayton, gumbel) only
model positive dependence natively; negative dependence is expressed through
90/270 degree rotations, selected automatically by the sign of tau when a
spec is built with :func:`spec_for`.  The elliptical families carry rotation
0 always.

Everything is parametrized by Kendall's tau.  The family-specific natural
parameter is obtained through :func:`tau_to_theta`:

    gaussian/t4:  rho   = sin(pi * tau / 2)
    clayton:      theta = 2 tau / (1 - tau)      (tau = theta / (theta + 2))
    gumbel:       theta = 1 / (1 - tau)          (tau = 1 - 1 / theta)

All evaluations clamp copula arguments into [EPS_U, 1 - EPS_U] and require
|tau| <= 1 - EPS_TAU.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import special

from .errors import DomainError, NumericError
from .tdist import t_cdf, t_pdf, t_ppf

EPS_U = 1e-10
EPS_TAU = 1e-6

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_NU = 4.0  # Student t degrees of freedom, fixed

_ROTATIONS = (0, 90, 180, 270)


class Kind(str, Enum):
    GAUSSIAN = "gaussian"
    T4 = "t4"
    CLAYTON = "clayton"
    GUMBEL = "gumbel"

    @property
    def is_elliptical(self) -> bool:
        return self in (Kind.GAUSSIAN, Kind.T4)


@dataclass(frozen=True)
class Family:
    """A copula family: base kind plus rotation in degrees."""

    kind: Kind
    rotation: int = 0

    def __post_init__(self):
        if self.rotation not in _ROTATIONS:
            raise DomainError(f"rotation must be one of {_ROTATIONS}, got {self.rotation}")
        if self.kind.is_elliptical and self.rotation != 0:
            raise DomainError(f"{self.kind.value} supports negative tau natively; rotation must be 0")

    @property
    def label(self) -> str:
        if self.rotation == 0:
            return self.kind.value
        return f"{self.kind.value}@{self.rotation}"

    @classmethod
    def parse(cls, label: str) -> "Family":
        label = label.strip().lower()
        if "@" in label:
            name, _, rot = label.partition("@")
            return cls(Kind(name), int(rot))
        return cls(Kind(label))


@dataclass(frozen=True)
class CopulaSpec:
    """A fully specified bivariate copula: family plus Kendall's tau."""

    family: Family
    tau: float

    def __post_init__(self):
        t = self.tau
        if not np.isfinite(t) or abs(t) > 1.0 - EPS_TAU:
            raise DomainError(
                f"{self.family.label}: tau must satisfy |tau| <= {1.0 - EPS_TAU}, got {t}"
            )
        if not self.family.kind.is_elliptical:
            if self.family.rotation in (0, 180) and t < 0.0:
                raise DomainError(
                    f"{self.family.label}: tau < 0 requires a 90 or 270 degree rotation"
                )
            if self.family.rotation in (90, 270) and t > 0.0:
                raise DomainError(
                    f"{self.family.label}: tau > 0 requires rotation 0 or 180"
                )


def spec_for(kind: Kind | str, tau: float) -> CopulaSpec:
    """Build a spec with the rotation implied by the sign of tau (90 for negative)."""
    kind = Kind(kind)
    if kind.is_elliptical or tau >= 0.0:
        return CopulaSpec(Family(kind), tau)
    return CopulaSpec(Family(kind, 90), tau)


# ---------------------------------------------------------------------------
# tau <-> theta maps
# ---------------------------------------------------------------------------

def _base_tau(spec: CopulaSpec) -> float:
    """Tau of the unrotated building block (|tau| for 90/270 rotations)."""
    if spec.family.rotation in (90, 270):
        return -spec.tau
    return spec.tau


def tau_to_theta(spec: CopulaSpec) -> float:
    """Natural copula parameter for the given spec."""
    t = _base_tau(spec)
    kind = spec.family.kind
    if kind.is_elliptical:
        return math.sin(math.pi * spec.tau / 2.0)
    if t < 0.0:
        raise DomainError(f"{spec.family.label}: base tau must be nonnegative, got {t}")
    if kind is Kind.CLAYTON:
        return 2.0 * t / (1.0 - t)
    return 1.0 / (1.0 - t)  # gumbel


def theta_to_tau(family: Family, theta: float) -> float:
    """Inverse of :func:`tau_to_theta` (returns the signed tau of the spec)."""
    kind = family.kind
    if kind.is_elliptical:
        return 2.0 / math.pi * math.asin(theta)
    if kind is Kind.CLAYTON:
        t = theta / (theta + 2.0)
    else:
        t = 1.0 - 1.0 / theta
    return -t if family.rotation in (90, 270) else t


def _dtheta_dtau(spec: CopulaSpec) -> float:
    """d theta / d tau, including the sign flip of rotated negative-tau specs."""
    kind = spec.family.kind
    if kind.is_elliptical:
        return math.pi / 2.0 * math.cos(math.pi * spec.tau / 2.0)
    t = _base_tau(spec)
    d = 2.0 / (1.0 - t) ** 2 if kind is Kind.CLAYTON else 1.0 / (1.0 - t) ** 2
    return -d if spec.family.rotation in (90, 270) else d


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

def _clip01(x, name: str):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{name} must be finite and inside (0,1)")
    return np.clip(x, EPS_U, 1.0 - EPS_U)


def _rotate_args(rotation: int, u, v):
    """Arguments of the base copula plus the sign of du, dv under the chain rule."""
    if rotation == 0:
        return u, v, 1.0, 1.0
    if rotation == 90:
        return 1.0 - u, v, -1.0, 1.0
    if rotation == 180:
        return 1.0 - u, 1.0 - v, -1.0, -1.0
    return u, 1.0 - v, 1.0, -1.0  # 270


# ---------------------------------------------------------------------------
# base-family kernels
#
# Elliptical kernels work on the score scale (normal / t4 quantiles of the
# arguments); Archimedean kernels work on log u, log v (and log(-log u) for
# gumbel).  Each returns the log density and its partials with respect to the
# kernel coordinates and theta, so callers (including the batched model
# evaluator) apply the chain rule themselves.
# ---------------------------------------------------------------------------

def _s2(rho):
    return (1.0 - rho) * (1.0 + rho)


def _gauss_kernel(x, y, rho, need_grad=True):
    s2 = _s2(rho)
    logc = -0.5 * np.log(s2) - (rho * rho * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * s2)
    if not need_grad:
        return logc, None, None, None
    dx = rho * (y - rho * x) / s2
    dy = rho * (x - rho * y) / s2
    drho = rho / s2 + (x * y * (1.0 + rho * rho) - rho * (x * x + y * y)) / (s2 * s2)
    return logc, dx, dy, drho


_T4_LOGC_CONST = (special.gammaln((_NU + 2.0) / 2.0) + special.gammaln(_NU / 2.0)
                  - 2.0 * special.gammaln((_NU + 1.0) / 2.0))


def _t4_kernel(x, y, rho, need_grad=True):
    nu = _NU
    s2 = _s2(rho)
    q = (x * x - 2.0 * rho * x * y + y * y) / s2
    logc = (_T4_LOGC_CONST - 0.5 * np.log(s2) - (nu + 2.0) / 2.0 * np.log1p(q / nu)
            + (nu + 1.0) / 2.0 * (np.log1p(x * x / nu) + np.log1p(y * y / nu)))
    if not need_grad:
        return logc, None, None, None
    nq = nu + q
    dx = -(nu + 2.0) * (x - rho * y) / (s2 * nq) + (nu + 1.0) * x / (nu + x * x)
    dy = -(nu + 2.0) * (y - rho * x) / (s2 * nq) + (nu + 1.0) * y / (nu + y * y)
    drho = rho / s2 - (nu + 2.0) * (rho * (x * x + y * y) - x * y * (1.0 + rho * rho)) / (s2 * s2 * nq)
    return logc, dx, dy, drho


_THETA_FLOOR = 1e-12


def _clayton_log_s(lu, lv, theta):
    # log(u^-th + v^-th - 1), stable for both tiny and huge theta.
    a = -theta * lu
    b = -theta * lv
    m = np.logaddexp(a, b)
    with np.errstate(over="ignore"):
        sm1 = np.expm1(np.minimum(a, 60.0)) + np.expm1(np.minimum(b, 60.0))
    small = np.log1p(sm1)
    big = m + np.log1p(-np.exp(-m))
    return np.where(np.maximum(a, b) > 30.0, big, small)


def _clayton_kernel(lu, lv, theta, need_grad=True):
    theta = np.maximum(theta, _THETA_FLOOR)
    ls = _clayton_log_s(lu, lv, theta)
    logc = np.log1p(theta) - (theta + 1.0) * (lu + lv) - (2.0 + 1.0 / theta) * ls
    if not need_grad:
        return logc, None, None, None
    pu = np.exp(-theta * lu - ls)
    pv = np.exp(-theta * lv - ls)
    dlu = -(theta + 1.0) + (2.0 * theta + 1.0) * pu
    dlv = -(theta + 1.0) + (2.0 * theta + 1.0) * pv
    dth = (1.0 / (1.0 + theta) - (lu + lv) + ls / (theta * theta)
           + (2.0 + 1.0 / theta) * (lu * pu + lv * pv))
    return logc, dlu, dlv, dth


def _gumbel_kernel(lu, lv, llu, llv, theta, need_grad=True):
    # llu = log(-log u).  Everything assembled in log space so theta up to
    # ~1e6 (tau near 1) stays finite.
    ls = np.logaddexp(theta * llu, theta * llv)
    a = np.exp(ls / theta)
    d = 1.0 + (theta - 1.0) / a
    logc = -a + (theta - 1.0) * (llu + llv) - lu - lv + (2.0 / theta - 2.0) * ls + np.log(d)
    if not need_grad:
        return logc, None, None, None
    qu = np.exp(theta * llu - ls)
    qv = np.exp(theta * llv - ls)
    xt = -lu
    yt = -lv
    dxt = 1.0 + (-a * qu + (theta - 1.0) + (2.0 - 2.0 * theta) * qu
                 - (theta - 1.0) * qu / (a * d)) / xt
    dyt = 1.0 + (-a * qv + (theta - 1.0) + (2.0 - 2.0 * theta) * qv
                 - (theta - 1.0) * qv / (a * d)) / yt
    e = qu * llu + qv * llv
    da = (a / theta) * (e - ls / theta)
    dth = (-da + (llu + llv) - 2.0 * ls / (theta * theta) + (2.0 / theta - 2.0) * e
           + (1.0 / a - (theta - 1.0) * da / (a * a)) / d)
    return logc, -dxt, -dyt, dth


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def log_density(spec: CopulaSpec, u, v):
    """Log copula density log c(u, v)."""
    u = _clip01(u, "u")
    v = _clip01(v, "v")
    ub, vb, _, _ = _rotate_args(spec.family.rotation, u, v)
    theta = tau_to_theta(spec)
    kind = spec.family.kind
    if kind is Kind.GAUSSIAN:
        return _gauss_kernel(special.ndtri(ub), special.ndtri(vb), theta, need_grad=False)[0]
    if kind is Kind.T4:
        return _t4_kernel(t_ppf(ub, 4), t_ppf(vb, 4), theta, need_grad=False)[0]
    lu, lv = np.log(ub), np.log(vb)
    if kind is Kind.CLAYTON:
        return _clayton_kernel(lu, lv, theta, need_grad=False)[0]
    return _gumbel_kernel(lu, lv, np.log(-lu), np.log(-lv), theta, need_grad=False)[0]


def density(spec: CopulaSpec, u, v):
    """Copula density c(u, v) >= 0."""
    return np.exp(log_density(spec, u, v))


def log_density_grad(spec: CopulaSpec, u, v):
    """Partials (d/dtau, d/du, d/dv) of log c(u, v).

    The tau derivative is taken through the family's tau -> theta map and,
    for rotated specs, through the sign flip of the base tau.
    """
    u = _clip01(u, "u")
    v = _clip01(v, "v")
    ub, vb, su, sv = _rotate_args(spec.family.rotation, u, v)
    theta = tau_to_theta(spec)
    kind = spec.family.kind
    if kind is Kind.GAUSSIAN:
        x, y = special.ndtri(ub), special.ndtri(vb)
        _, dx, dy, dth = _gauss_kernel(x, y, theta)
        du = dx / _norm_pdf(x)
        dv = dy / _norm_pdf(y)
    elif kind is Kind.T4:
        x, y = t_ppf(ub, 4), t_ppf(vb, 4)
        _, dx, dy, dth = _t4_kernel(x, y, theta)
        du = dx / t_pdf(x, 4)
        dv = dy / t_pdf(y, 4)
    else:
        lu, lv = np.log(ub), np.log(vb)
        if kind is Kind.CLAYTON:
            _, dlu, dlv, dth = _clayton_kernel(lu, lv, theta)
        else:
            _, dlu, dlv, dth = _gumbel_kernel(lu, lv, np.log(-lu), np.log(-lv), theta)
        du = dlu / ub
        dv = dlv / vb
    return dth * _dtheta_dtau(spec), su * du, sv * dv


def cdf(spec: CopulaSpec, u, v):
    """Copula distribution function C(u, v) = P(U <= u, V <= v)."""
    u = _clip01(u, "u")
    v = _clip01(v, "v")
    rot = spec.family.rotation
    ub, vb, _, _ = _rotate_args(rot, u, v)
    c = _base_cdf(spec, ub, vb)
    if rot == 0:
        return c
    if rot == 90:
        return v - c
    if rot == 180:
        return u + v - 1.0 + c
    return u - c  # 270


def _base_cdf(spec: CopulaSpec, u, v):
    theta = tau_to_theta(spec)
    kind = spec.family.kind
    if kind is Kind.CLAYTON:
        theta = max(theta, _THETA_FLOOR)
        return np.exp(-_clayton_log_s(np.log(u), np.log(v), theta) / theta)
    if kind is Kind.GUMBEL:
        lu, lv = np.log(u), np.log(v)
        ls = np.logaddexp(theta * np.log(-lu), theta * np.log(-lv))
        return np.exp(-np.exp(ls / theta))
    if kind is Kind.GAUSSIAN:
        return _gauss_cdf(u, v, theta)
    return _t4_cdf(u, v, theta)


_PLACKETT_NODES = np.polynomial.legendre.leggauss(64)


def _gauss_cdf(u, v, rho):
    # Plackett's identity: dC/drho is the bivariate normal density, so
    # C(u,v;rho) = u*v + int_0^rho phi2(x, y; r) dr, integrated by
    # Gauss-Legendre.
    x, y = special.ndtri(u), special.ndtri(v)
    nodes, weights = _PLACKETT_NODES
    r = 0.5 * (nodes + 1.0) * rho
    w = 0.5 * weights * rho
    xx = np.asarray(x)[..., None]
    yy = np.asarray(y)[..., None]
    s2 = _s2(r)
    pdf = np.exp(-(xx * xx - 2.0 * r * xx * yy + yy * yy) / (2.0 * s2)) / (2.0 * np.pi * np.sqrt(s2))
    out = np.asarray(u) * np.asarray(v) + np.sum(w * pdf, axis=-1)
    return out if out.ndim else float(out)


_T4_CDF_NODES = np.polynomial.legendre.leggauss(256)


def _t4_cdf(u, v, rho):
    # C(u, v) = int_0^v h(u | w) dw with the exact conditional; deterministic
    # Gauss-Legendre in w.
    nodes, weights = _T4_CDF_NODES
    vv = np.asarray(v)[..., None]
    w = 0.5 * (nodes + 1.0) * vv
    wts = 0.5 * weights * vv
    uu = np.asarray(u)[..., None]
    h = _t4_hfunc_base(np.broadcast_to(uu, w.shape), np.clip(w, EPS_U, 1 - EPS_U), rho)
    out = np.sum(wts * h, axis=-1)
    return out if out.ndim else float(out)


def _norm_pdf(x):
    return np.exp(-0.5 * x * x) / _SQRT_2PI


# -- h-functions -------------------------------------------------------------

def _gauss_hfunc_base(u, v, rho):
    x, y = special.ndtri(u), special.ndtri(v)
    return special.ndtr((x - rho * y) / math.sqrt(_s2(rho)))


def _gauss_hinv_base(p, v, rho):
    y = special.ndtri(v)
    x = special.ndtri(p) * math.sqrt(_s2(rho)) + rho * y
    return special.ndtr(x)


def _t4_hfunc_base(u, v, rho):
    nu = _NU
    x, y = t_ppf(u, 4), t_ppf(v, 4)
    s = np.sqrt((nu + y * y) * _s2(rho) / (nu + 1.0))
    return t_cdf((x - rho * y) / s, nu + 1)


def _t4_hinv_base(p, v, rho):
    nu = _NU
    y = t_ppf(v, 4)
    s = np.sqrt((nu + y * y) * _s2(rho) / (nu + 1.0))
    return t_cdf(t_ppf(p, nu + 1) * s + rho * y, nu)


def _clayton_hfunc_base(u, v, theta):
    theta = max(theta, _THETA_FLOOR)
    lu, lv = np.log(u), np.log(v)
    ls = _clayton_log_s(lu, lv, theta)
    return np.exp(-(theta + 1.0) * lv - (1.0 + 1.0 / theta) * ls)


def _clayton_hinv_base(p, v, theta):
    theta = max(theta, _THETA_FLOOR)
    lp, lv = np.log(p), np.log(v)
    a = -theta / (theta + 1.0) * lp - theta * lv
    um1 = np.expm1(np.minimum(a, 500.0)) - np.expm1(-theta * lv)
    return np.exp(-np.log1p(um1) / theta)


def _gumbel_loghfunc_base(u, v, theta):
    lu, lv = np.log(u), np.log(v)
    llu, llv = np.log(-lu), np.log(-lv)
    ls = np.logaddexp(theta * llu, theta * llv)
    return -np.exp(ls / theta) + (theta - 1.0) * llv + (1.0 / theta - 1.0) * ls - lv


def _gumbel_hinv_base(p, v, theta, max_iter=200, tol=1e-9):
    # h(. | v) is strictly increasing with no closed inverse; bisect on u.
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    shape = np.broadcast_shapes(p.shape, v.shape)
    lp = np.broadcast_to(np.log(p), shape).copy()
    vv = np.broadcast_to(v, shape)
    lo = np.full(shape, EPS_U)
    hi = np.full(shape, 1.0 - EPS_U)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        below = _gumbel_loghfunc_base(mid, vv, theta) < lp
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.max(hi - lo) < 1e-16:
            break
    mid = 0.5 * (lo + hi)
    resid = np.max(np.abs(np.exp(_gumbel_loghfunc_base(mid, vv, theta)) - p))
    if resid > tol:
        raise NumericError(f"gumbel h-inverse did not converge: residual {resid:.3e}")
    return mid if mid.shape else float(mid)


def hfunc(spec: CopulaSpec, u, v):
    """Conditional distribution h(u | v) = d C(u, v) / d v."""
    u = _clip01(u, "u")
    v = _clip01(v, "v")
    rot = spec.family.rotation
    ub, vb, _, _ = _rotate_args(rot, u, v)
    h = _base_hfunc(spec, ub, vb)
    if rot in (90, 180):
        h = 1.0 - h
    return h


def _base_hfunc(spec: CopulaSpec, u, v):
    theta = tau_to_theta(spec)
    kind = spec.family.kind
    if kind is Kind.GAUSSIAN:
        return _gauss_hfunc_base(u, v, theta)
    if kind is Kind.T4:
        return _t4_hfunc_base(u, v, theta)
    if kind is Kind.CLAYTON:
        return _clayton_hfunc_base(u, v, theta)
    return np.exp(_gumbel_loghfunc_base(u, v, theta))


def hinv(spec: CopulaSpec, p, v):
    """Inverse of :func:`hfunc` in its first argument: hfunc(hinv(p, v), v) = p."""
    p = _clip01(p, "p")
    v = _clip01(v, "v")
    rot = spec.family.rotation
    if rot in (90, 180):
        p = 1.0 - p
    vb = 1.0 - v if rot in (180, 270) else v
    theta = tau_to_theta(spec)
    kind = spec.family.kind
    if kind is Kind.GAUSSIAN:
        ub = _gauss_hinv_base(p, vb, theta)
    elif kind is Kind.T4:
        ub = _t4_hinv_base(p, vb, theta)
    elif kind is Kind.CLAYTON:
        ub = _clayton_hinv_base(p, vb, theta)
    else:
        ub = _gumbel_hinv_base(p, vb, theta)
    ub = np.clip(ub, EPS_U, 1.0 - EPS_U)
    if rot in (90, 180):
        ub = 1.0 - ub
    return ub


def sample_pair(spec: CopulaSpec, rng: np.random.Generator, size=None):
    """Draw (u, v) from the copula: v ~ U(0,1), u = hinv(w, v) with w ~ U(0,1)."""
    v = rng.uniform(size=size)
    w = rng.uniform(size=size)
    u = hinv(spec, w, v)
    return u, v
