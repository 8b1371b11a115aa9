"""The copula state space joint model.

Observed-data likelihood with missingness, the truncated-D-vine latent
prior, the continuous-parameter posterior with the discrete family
indicators summed out (evaluated with exact gradients for HMC), exact Gibbs
conditionals for the indicators, scenario simulation, and the bivariate
margin densities used for contour output.

Parameter layout on the unconstrained scale is a single real vector

    x = (x_v[0..T-1], x_tau_obs[0..d-1], x_tau_lat)

where v_t and tau_obs_1 map through the logistic function to (0,1) and the
remaining taus map through tanh(x/2) to (-1,1); the first observation tau is
restricted positive for identifiability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import DomainError
from .families import (
    EPS_TAU,
    EPS_U,
    CopulaSpec,
    Family,
    Kind,
    _clayton_kernel,
    _gauss_kernel,
    _gumbel_kernel,
    _norm_pdf,
    _t4_kernel,
    density,
    hinv,
    log_density,
    spec_for,
)
from .tdist import t_pdf, t_ppf

DEFAULT_FAMILIES: tuple[Kind, ...] = (Kind.GAUSSIAN, Kind.T4, Kind.CLAYTON, Kind.GUMBEL)

_TAU_MAX = 1.0 - EPS_TAU
_TAU1_A, _TAU1_B = 10.0, 1.5
_TAU1_BETALN = float(special.betaln(_TAU1_A, _TAU1_B))
_NU = 4.0
# t4 copula log-density constant, with log(nu+q) decomposed out of log1p(q/nu)
_T4_SUM_CONST = float(special.gammaln((_NU + 2.0) / 2.0) + special.gammaln(_NU / 2.0)
                      - 2.0 * special.gammaln((_NU + 1.0) / 2.0) + 0.5 * (_NU + 2.0) * math.log(_NU))


# ---------------------------------------------------------------------------
# data and parameter containers
# ---------------------------------------------------------------------------

@dataclass
class CopulaScaleData:
    """T x d copula-scale observations with a per-cell missingness mask."""

    u: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.observed = np.asarray(self.observed, dtype=bool)
        if self.u.ndim != 2 or self.observed.shape != self.u.shape:
            raise DomainError("u must be T x d with a mask of the same shape")
        seen = self.u[self.observed]
        if seen.size and (not np.all(np.isfinite(seen)) or np.any(seen <= 0.0) or np.any(seen >= 1.0)):
            raise DomainError("observed cells must lie strictly inside (0, 1)")

    @classmethod
    def from_array(cls, u: np.ndarray) -> "CopulaScaleData":
        """NaN cells become missing."""
        u = np.asarray(u, dtype=float)
        return cls(np.where(np.isnan(u), 0.5, u), ~np.isnan(u))

    @property
    def T(self) -> int:
        return self.u.shape[0]

    @property
    def d(self) -> int:
        return self.u.shape[1]

    def n_observed(self) -> np.ndarray:
        return self.observed.sum(axis=0)


@dataclass
class ModelParams:
    """One point in the posterior's parameter space."""

    v: np.ndarray
    tau_obs: np.ndarray
    tau_lat: float
    m_obs: tuple[Family, ...]
    m_lat: Family

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=float)
        self.tau_obs = np.asarray(self.tau_obs, dtype=float)
        if np.any(self.v <= 0.0) or np.any(self.v >= 1.0):
            raise DomainError("latent path must lie strictly inside (0, 1)")
        if self.tau_obs[0] <= 0.0:
            raise DomainError("tau_obs[0] must be positive (identifiability restriction)")
        if np.any(np.abs(self.tau_obs) >= 1.0) or abs(self.tau_lat) >= 1.0:
            raise DomainError("all taus must lie strictly inside (-1, 1)")
        if len(self.m_obs) != self.tau_obs.shape[0]:
            raise DomainError("one observation family per margin required")

    def obs_spec(self, j: int) -> CopulaSpec:
        return CopulaSpec(self.m_obs[j], float(self.tau_obs[j]))

    def lat_spec(self) -> CopulaSpec:
        return CopulaSpec(self.m_lat, float(self.tau_lat))


# ---------------------------------------------------------------------------
# unconstrained reparametrization
# ---------------------------------------------------------------------------

def constrain(x: np.ndarray, d: int):
    """Map an unconstrained vector to (v, tau_obs, tau_lat)."""
    x = np.asarray(x, dtype=float)
    T = x.shape[0] - d - 1
    if T < 1:
        raise DomainError("unconstrained vector too short for the given d")
    v = np.clip(special.expit(x[:T]), EPS_U, 1.0 - EPS_U)
    tau_obs = np.empty(d)
    tau_obs[0] = np.clip(special.expit(x[T]), EPS_TAU, _TAU_MAX)
    if d > 1:
        tau_obs[1:] = np.clip(np.tanh(0.5 * x[T + 1:T + d]), -_TAU_MAX, _TAU_MAX)
    tau_lat = float(np.clip(np.tanh(0.5 * x[-1]), -_TAU_MAX, _TAU_MAX))
    return v, tau_obs, tau_lat


def unconstrain(v: np.ndarray, tau_obs: np.ndarray, tau_lat: float) -> np.ndarray:
    """Inverse of :func:`constrain`."""
    v = np.asarray(v, dtype=float)
    tau_obs = np.asarray(tau_obs, dtype=float)
    parts = [special.logit(v), np.atleast_1d(special.logit(tau_obs[0]))]
    if tau_obs.shape[0] > 1:
        parts.append(2.0 * np.arctanh(tau_obs[1:]))
    parts.append(np.atleast_1d(2.0 * math.atanh(tau_lat)))
    return np.concatenate(parts)


def log_jacobian(x: np.ndarray, d: int) -> float:
    """Log |d constrained / d unconstrained| of the transform at x."""
    x = np.asarray(x, dtype=float)
    T = x.shape[0] - d - 1
    # logistic coords: log sigma'(x) = log sigma(x) + log sigma(-x)
    lo = x[:T + 1]
    logistic = -np.logaddexp(0.0, -lo) - np.logaddexp(0.0, lo)
    # tanh(x/2) coords: log dtau/dx = log((1 - tau^2)/2) = log(2 sigma(x) sigma(-x))
    hi = x[T + 1:]
    tanh_terms = math.log(2.0) - np.logaddexp(0.0, -hi) - np.logaddexp(0.0, hi)
    return float(np.sum(logistic) + np.sum(tanh_terms))


# ---------------------------------------------------------------------------
# likelihood, prior, posterior at a fixed family assignment
# ---------------------------------------------------------------------------

def loglik_obs(data: CopulaScaleData, params: ModelParams) -> float:
    """Observed-data log likelihood; missing cells contribute exactly zero."""
    v = params.v
    total = 0.0
    for j in range(data.d):
        obs = data.observed[:, j]
        if not np.any(obs):
            continue
        total += float(np.sum(log_density(params.obs_spec(j), data.u[obs, j], v[obs])))
    return total


def latent_prior_logdensity(v: np.ndarray, tau_lat: float, m_lat: Family) -> float:
    """Log density of the first-tree D-vine prior over the latent path."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] < 2:
        return 0.0
    spec = CopulaSpec(m_lat, tau_lat)
    return float(np.sum(log_density(spec, v[1:], v[:-1])))


def _log_beta_tau1(tau1: float) -> float:
    return ((_TAU1_A - 1.0) * math.log(tau1)
            + (_TAU1_B - 1.0) * math.log1p(-tau1) - _TAU1_BETALN)


def log_posterior(data: CopulaScaleData, params: ModelParams) -> float:
    """Unnormalized log posterior at a full parameter point.

    Flat priors on the remaining taus and the discrete-uniform family priors
    are constants and omitted.
    """
    if params.tau_obs[0] <= 0.0:
        raise DomainError("tau_obs[0] must be positive")
    return (loglik_obs(data, params)
            + latent_prior_logdensity(params.v, params.tau_lat, params.m_lat)
            + _log_beta_tau1(float(params.tau_obs[0])))


# ---------------------------------------------------------------------------
# family-marginalized posterior with gradient (the HMC target)
# ---------------------------------------------------------------------------

def _check_families(families) -> tuple[Kind, ...]:
    kinds = tuple(Kind(k) for k in families)
    if not kinds:
        raise DomainError("the family set must be nonempty")
    if len(set(kinds)) != len(kinds):
        raise DomainError("the family set must not contain duplicates")
    return kinds


class MarginalizedPosterior:
    """Log posterior with family indicators summed out, plus exact gradient.

    Precomputes every data-dependent transform once, so repeated evaluation
    (one call per leapfrog step) costs a handful of vectorized kernel
    evaluations.  Data-only additive terms of each log density are folded
    into per-margin constants, and the Gaussian family reduces entirely to
    masked inner products with the latent scores.  Instances are immutable
    after construction and safe to share across threads.
    """

    def __init__(self, data: CopulaScaleData, families=DEFAULT_FAMILIES):
        self.data = data
        self.kinds = _check_families(families)
        self.T, self.d = data.T, data.d
        self.dim = self.T + self.d + 1
        mask = data.observed.astype(float)
        self._mask = mask
        self._nobs = mask.sum(axis=0)
        u = np.where(data.observed, data.u, 0.5)
        if Kind.GAUSSIAN in self.kinds:
            xg = special.ndtri(u)
            self._mxg = mask * xg                              # masked scores
            self._sxg2 = np.einsum("tj,tj->j", self._mxg, xg)  # sum mask x^2
        if Kind.T4 in self.kinds:
            nu = 4.0
            xt = t_ppf(u, 4)
            self._xt = xt
            self._xt2 = xt * xt
            self._t4_const = 0.5 * (nu + 1.0) * np.einsum(
                "tj,tj->j", mask, np.log1p(self._xt2 / nu))
        if Kind.CLAYTON in self.kinds or Kind.GUMBEL in self.kinds:
            self._lu = {True: np.log(u), False: np.log1p(-u)}
            self._slu = {s: np.einsum("tj,tj->j", mask, self._lu[s]) for s in (True, False)}
        if Kind.GUMBEL in self.kinds:
            self._llu = {s: np.log(-self._lu[s]) for s in (True, False)}
            self._sllu = {s: np.einsum("tj,tj->j", mask, self._llu[s]) for s in (True, False)}

    # -- optimized per-family margin blocks ----------------------------------
    #
    # Each block fills S[:, k] (masked log-density sums per margin) plus, when
    # gradients are requested, Gtau[:, k] and a v-gradient contribution: either
    # a dense (T, d) masked array or, for the Gaussian family, factored masked
    # inner products applied after the mixture weights are known.  The dense
    # formulas mirror the reference kernels in `families`, minus terms that
    # depend on the data alone (restored via the precomputed constants).

    def _gauss_block(self, v, tau, need_grad):
        rho = np.sin(0.5 * np.pi * tau)
        s2 = (1.0 - rho) * (1.0 + rho)
        y = special.ndtri(v)
        y2 = y * y
        my2 = y2 @ self._mask        # (d,) sum_t mask * y^2
        mxy = y @ self._mxg          # (d,) sum_t mask * x * y
        sq = self._sxg2 + my2
        S = -0.5 * np.log(s2) * self._nobs - 0.5 * rho * rho / s2 * sq + rho / s2 * mxy
        if not need_grad:
            return S, None, None
        chain = 0.5 * np.pi * np.cos(0.5 * np.pi * tau)
        Gtau = (self._nobs * rho / s2 + ((1.0 + rho * rho) * mxy - rho * sq) / (s2 * s2)) * chain
        # factored v-gradient: sum_j w_j mask (rho x - rho^2 y) / (s2 phi(y))
        part = ("gauss", y, _norm_pdf(y), rho, s2)
        return S, Gtau, part

    def _t4_block(self, v, tau, need_grad):
        nu = 4.0
        mask = self._mask
        rho = np.sin(0.5 * np.pi * tau)
        s2 = (1.0 - rho) * (1.0 + rho)
        y = t_ppf(v, 4)[:, None]
        y2 = y * y
        x, x2 = self._xt, self._xt2
        q = (x2 - (2.0 * rho) * x * y + y2) / s2
        nq = nu + q
        core = np.log(nq) * mask  # log1p(q/nu) = log(nu+q) - log(nu)
        S = (_T4_SUM_CONST - 0.5 * np.log(s2)) * self._nobs \
            + self._t4_const - 0.5 * (nu + 2.0) * np.einsum("tj->j", core) \
            + 0.5 * (nu + 1.0) * (np.log1p(y2[:, 0] / nu) @ mask)
        if not need_grad:
            return S, None, None
        f_y = t_pdf(y, 4)
        dy = (-(nu + 2.0) * (y - rho * x) / (s2 * nq)
              + ((nu + 1.0) / (nu + y2)) * y)
        dv = dy / f_y * mask
        drho = rho / s2 - (nu + 2.0) * (rho * (x2 + y2) - x * y * (1.0 + rho * rho)) / (s2 * s2 * nq)
        chain = 0.5 * np.pi * np.cos(0.5 * np.pi * tau)
        Gtau = np.einsum("tj,tj->j", drho, mask) * chain
        return S, Gtau, ("dense", dv)

    def _clayton_block(self, v, tau, need_grad):
        mask = self._mask
        pos = tau >= 0.0
        tb = np.abs(tau)
        theta = np.maximum(2.0 * tb / (1.0 - tb), 1e-12)
        lu = np.where(pos, self._lu[True], self._lu[False])
        slu = np.where(pos, self._slu[True], self._slu[False])
        lv = np.log(v)[:, None]
        a = -theta * lu
        b = -theta * lv
        with np.errstate(over="ignore"):
            sm1 = np.expm1(np.minimum(a, 60.0)) + np.expm1(np.minimum(b, 60.0))
        ls = np.where(np.maximum(a, b) > 30.0, np.logaddexp(a, b), np.log1p(sm1))
        mls = ls * mask
        sls = np.einsum("tj->j", mls)
        nlv = (lv[:, 0] @ mask)
        S = np.log1p(theta) * self._nobs - (theta + 1.0) * (slu + nlv) - (2.0 + 1.0 / theta) * sls
        if not need_grad:
            return S, None, None
        es = np.exp(-ls)
        pu = np.exp(a - ls)
        pv = 1.0 + es - pu
        dv = ((-(theta + 1.0) + (2.0 * theta + 1.0) * pv) / v[:, None]) * mask
        dth_sum = (self._nobs / (1.0 + theta) - (slu + nlv) + sls / (theta * theta)
                   + (2.0 + 1.0 / theta) * (np.einsum("tj,tj->j", lu * pu + lv * pv, mask)))
        dchain = 2.0 / (1.0 - tb) ** 2
        Gtau = dth_sum * np.where(pos, dchain, -dchain)
        return S, Gtau, ("dense", dv)

    def _gumbel_block(self, v, tau, need_grad):
        mask = self._mask
        pos = tau >= 0.0
        tb = np.abs(tau)
        theta = 1.0 / (1.0 - tb)
        lu = np.where(pos, self._lu[True], self._lu[False])
        llu = np.where(pos, self._llu[True], self._llu[False])
        slu = np.where(pos, self._slu[True], self._slu[False])
        sllu = np.where(pos, self._sllu[True], self._sllu[False])
        lv = np.log(v)[:, None]
        llv = np.log(-lv)
        ls = np.logaddexp(theta * llu, theta * llv)
        A = np.exp(ls / theta)
        D = 1.0 + (theta - 1.0) / A
        logd = np.log(D)
        # log c minus its data-only terms, summed under the mask
        core = (-A + (2.0 / theta - 2.0) * ls + logd) * mask
        score = np.einsum("tj->j", core)
        nlv = lv[:, 0] @ mask
        nllv = llv[:, 0] @ mask
        S = score + (theta - 1.0) * (sllu + nllv) - slu - nlv
        if not need_grad:
            return S, None, None
        qu = np.exp(theta * llu - ls)
        qv = 1.0 - qu
        yt = -lv
        dyt = 1.0 + (-A * qv + (theta - 1.0) + (2.0 - 2.0 * theta) * qv
                     - (theta - 1.0) * qv / (A * D)) / yt
        dv = (-dyt / v[:, None]) * mask  # d/dv = dyt * d(yt)/dv = -dyt / v
        e = qu * llu + qv * llv
        da = (A / theta) * (e - ls / theta)
        dth = (-da - 2.0 * ls / (theta * theta) + (2.0 / theta - 2.0) * e
               + (1.0 / A - (theta - 1.0) * da / (A * A)) / D)
        dth_sum = np.einsum("tj,tj->j", dth, mask) + sllu + nllv
        dchain = 1.0 / (1.0 - tb) ** 2
        Gtau = dth_sum * np.where(pos, dchain, -dchain)
        return S, Gtau, ("dense", dv)

    def _margin_terms(self, v, tau_obs, need_grad=True):
        """Per-family masked sums S[j,k], tau-gradients and v-gradient parts."""
        d, K = self.d, len(self.kinds)
        S = np.empty((d, K))
        Gtau = np.empty((d, K)) if need_grad else None
        parts = [None] * K
        blocks = {Kind.GAUSSIAN: self._gauss_block, Kind.T4: self._t4_block,
                  Kind.CLAYTON: self._clayton_block, Kind.GUMBEL: self._gumbel_block}
        for k, kind in enumerate(self.kinds):
            s, g, part = blocks[kind](v, tau_obs, need_grad)
            S[:, k] = s
            if need_grad:
                Gtau[:, k] = g
                parts[k] = part
        return S, Gtau, parts

    def _combine_gv(self, parts, W, v):
        """g_v[t] = sum_{j,k} W[j,k] * dv_k[t,j] with the Gaussian part factored."""
        g_v = np.zeros(self.T)
        for k, part in enumerate(parts):
            w = W[:, k]
            if part[0] == "dense":
                g_v += part[1] @ w
            else:
                _, y, pdf_y, rho, s2 = part
                aa = w * rho / s2
                bb = w * rho * rho / s2
                g_v += (self._mxg @ aa - y * (self._mask @ bb)) / pdf_y
        return g_v

    def _latent_terms(self, v, tau_lat, need_grad=True):
        """Per-family sums over consecutive latent pairs (v_t, v_{t-1})."""
        K = len(self.kinds)
        S = np.empty(K)
        Gtau = np.empty(K) if need_grad else None
        Dfirst = [None] * K
        Dsecond = [None] * K
        if self.T < 2:
            S[:] = 0.0
            if need_grad:
                Gtau[:] = 0.0
                z = np.zeros(0)
                Dfirst = [z] * K
                Dsecond = [z] * K
            return S, Gtau, Dfirst, Dsecond

        v1, v0 = v[1:], v[:-1]
        for k, kind in enumerate(self.kinds):
            if kind.is_elliptical:
                rho = math.sin(0.5 * math.pi * tau_lat)
                if kind is Kind.GAUSSIAN:
                    x, y = special.ndtri(v1), special.ndtri(v0)
                    px, py = _norm_pdf(x), _norm_pdf(y)
                    logc, dx, dy, dth = _gauss_kernel(x, y, rho, need_grad)
                else:
                    x, y = t_ppf(v1, 4), t_ppf(v0, 4)
                    px, py = t_pdf(x, 4), t_pdf(y, 4)
                    logc, dx, dy, dth = _t4_kernel(x, y, rho, need_grad)
                if need_grad:
                    Dfirst[k] = dx / px
                    Dsecond[k] = dy / py
                    chain = 0.5 * math.pi * math.cos(0.5 * math.pi * tau_lat)
            else:
                pos = tau_lat >= 0.0
                tb = abs(tau_lat)
                if kind is Kind.CLAYTON:
                    theta = 2.0 * tb / (1.0 - tb)
                    dchain = 2.0 / (1.0 - tb) ** 2
                else:
                    theta = 1.0 / (1.0 - tb)
                    dchain = 1.0 / (1.0 - tb) ** 2
                lu = np.log(v1) if pos else np.log1p(-v1)
                lv = np.log(v0)
                if kind is Kind.CLAYTON:
                    logc, dlu, dlv, dth = _clayton_kernel(lu, lv, theta, need_grad)
                else:
                    logc, dlu, dlv, dth = _gumbel_kernel(lu, lv, np.log(-lu), np.log(-lv),
                                                         theta, need_grad)
                if need_grad:
                    Dfirst[k] = dlu / v1 if pos else -dlu / (1.0 - v1)
                    Dsecond[k] = dlv / v0
                    chain = dchain if pos else -dchain
            S[k] = float(np.sum(logc))
            if need_grad:
                Gtau[k] = float(np.sum(dth)) * chain
        return S, Gtau, Dfirst, Dsecond

    # -- public evaluations ---------------------------------------------------

    def value_and_grad(self, x: np.ndarray):
        """Marginalized log posterior (including the transform's log-Jacobian)
        and its gradient with respect to the unconstrained vector."""
        x = np.asarray(x, dtype=float)
        T, d = self.T, self.d
        v, tau_obs, tau_lat = constrain(x, d)

        S, Gtau, parts = self._margin_terms(v, tau_obs)
        mx = S.max(axis=1)
        W = np.exp(S - mx[:, None])
        sw = W.sum(axis=1)
        W /= sw[:, None]
        value = float(np.sum(mx + np.log(sw)))
        g_tau_obs = np.sum(W * Gtau, axis=1)
        g_v = self._combine_gv(parts, W, v)

        Sl, Gl, Dfirst, Dsecond = self._latent_terms(v, tau_lat)
        ml = Sl.max()
        wl = np.exp(Sl - ml)
        sl = wl.sum()
        wl /= sl
        value += float(ml + math.log(sl))
        g_tau_lat = float(np.sum(wl * Gl))
        if T >= 2:
            first = np.zeros(T - 1)
            second = np.zeros(T - 1)
            for k in range(len(self.kinds)):
                first += wl[k] * Dfirst[k]
                second += wl[k] * Dsecond[k]
            g_v[1:] += first
            g_v[:-1] += second

        tau1 = float(tau_obs[0])
        value += _log_beta_tau1(tau1)
        g_tau_obs[0] += (_TAU1_A - 1.0) / tau1 - (_TAU1_B - 1.0) / (1.0 - tau1)

        # chain to the unconstrained scale and add the log-Jacobian
        grad = np.empty(self.dim)
        sig_v = v * (1.0 - v)
        grad[:T] = g_v * sig_v + (1.0 - 2.0 * v)
        value += float(np.sum(np.log(sig_v)))
        s1 = tau1 * (1.0 - tau1)
        grad[T] = g_tau_obs[0] * s1 + (1.0 - 2.0 * tau1)
        value += math.log(s1)
        if d > 1:
            tj = tau_obs[1:]
            grad[T + 1:T + d] = g_tau_obs[1:] * 0.5 * (1.0 - tj * tj) - tj
            value += float(np.sum(np.log(0.5 * (1.0 - tj * tj))))
        grad[-1] = g_tau_lat * 0.5 * (1.0 - tau_lat * tau_lat) - tau_lat
        value += math.log(0.5 * (1.0 - tau_lat * tau_lat))

        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            return -np.inf, np.zeros(self.dim)
        return value, grad

    def family_log_scores(self, v, tau_obs, tau_lat):
        """Masked per-margin and latent log-density sums per family, the
        sufficient statistics of the Gibbs conditionals."""
        S, _, _ = self._margin_terms(v, tau_obs, need_grad=False)
        Sl, _, _, _ = self._latent_terms(v, tau_lat, need_grad=False)
        return S, Sl


def log_posterior_marginalized(data: CopulaScaleData, x: np.ndarray, families=DEFAULT_FAMILIES):
    """One-shot evaluation of the marginalized posterior; see
    :class:`MarginalizedPosterior` for the reusable form."""
    return MarginalizedPosterior(data, families).value_and_grad(x)


def _softmax_rows(S):
    m = S.max(axis=-1, keepdims=True)
    w = np.exp(S - m)
    return w / w.sum(axis=-1, keepdims=True)


def gibbs_family_probs(data: CopulaScaleData, v, tau_obs, tau_lat, families=DEFAULT_FAMILIES):
    """Exact conditional probabilities of the family indicators.

    Returns (p_obs, p_lat): a (d, K) matrix of per-margin probabilities over
    the family set and the length-K latent vector, each row summing to one.
    """
    kinds = _check_families(families)
    post = MarginalizedPosterior(data, kinds)
    S, Sl = post.family_log_scores(np.asarray(v, dtype=float),
                                   np.asarray(tau_obs, dtype=float), float(tau_lat))
    return _softmax_rows(S), _softmax_rows(Sl)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

def simulate(tau_obs, m_obs, tau_lat, m_lat, T: int, rng: np.random.Generator):
    """Simulate a fully observed copula-scale data set plus its latent path.

    v_1 ~ U(0,1); v_t = hinv_lat(w_t | v_{t-1}); u_tj = hinv_j(e_tj | v_t),
    with all w, e independent U(0,1).  Families may be given as Kind values
    or labels; rotations are picked by the sign of the tau.
    """
    tau_obs = np.asarray(tau_obs, dtype=float)
    d = tau_obs.shape[0]
    obs_specs = [spec_for(Kind(m), float(t)) for m, t in zip(m_obs, tau_obs, strict=True)]
    lat_spec = spec_for(Kind(m_lat), float(tau_lat))

    w = rng.uniform(size=T)
    e = rng.uniform(size=(T, d))
    v = np.empty(T)
    v[0] = w[0]
    for t in range(1, T):
        v[t] = hinv(lat_spec, w[t], v[t - 1])
    u = np.empty((T, d))
    for j in range(d):
        u[:, j] = hinv(obs_specs[j], e[:, j], v)
    data = CopulaScaleData(u, np.ones((T, d), dtype=bool))
    return data, v


# ---------------------------------------------------------------------------
# bivariate margins of the model (contour output, simulation cross-checks)
# ---------------------------------------------------------------------------

def _gl_nodes(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def pair_density_crosssection(spec_j: CopulaSpec, spec_jp: CopulaSpec, u, up, nodes: int = 64):
    """Density of (U_tj, U_tj'): integral over the shared latent value."""
    vn, wn = _gl_nodes(nodes)
    a = density(spec_j, np.asarray(u, dtype=float)[..., None], vn)
    b = density(spec_jp, np.asarray(up, dtype=float)[..., None], vn)
    out = np.sum(wn * a * b, axis=-1)
    return out if out.ndim else float(out)


def pair_density_temporal(spec_j: CopulaSpec, spec_lat: CopulaSpec, u, uprev, nodes: int = 64):
    """Density of (U_tj, U_{t-1,j}): double integral over (v_t, v_{t-1})."""
    vn, wn = _gl_nodes(nodes)
    a = density(spec_j, np.asarray(u, dtype=float)[..., None], vn) * wn
    b = density(spec_j, np.asarray(uprev, dtype=float)[..., None], vn) * wn
    mid = density(spec_lat, vn[:, None], vn[None, :])
    out = np.einsum("...i,ij,...j->...", a, mid, b)
    return out if out.ndim else float(out)


def bivariate_margin_density_crosssection(params: ModelParams, j: int, jp: int, u, up, nodes: int = 64):
    if not (0 <= j < len(params.m_obs)) or not (0 <= jp < len(params.m_obs)):
        raise DomainError("margin index out of range")
    return pair_density_crosssection(params.obs_spec(j), params.obs_spec(jp), u, up, nodes)


def bivariate_margin_density_temporal(params: ModelParams, j: int, u, uprev, nodes: int = 64):
    if not 0 <= j < len(params.m_obs):
        raise DomainError("margin index out of range")
    return pair_density_temporal(params.obs_spec(j), params.lat_spec(), u, uprev, nodes)
