"""Analytic linear Gaussian state space machinery, used as a correctness oracle.

The model couples d standardized observation series to one latent AR(1)
state, all margins N(0,1):

    Z_tj | W_t = w   ~  N(rho_obs_j * w, 1 - rho_obs_j^2)
    W_t | W_{t-1} = w ~  N(rho_lat * w,  1 - rho_lat^2),     W_0 ~ N(0, 1)

The stacked vector (Z_t1..Z_td, W_t)_{t=1..T} is jointly Gaussian with unit
diagonal; :func:`build_sigma` assembles the covariance in closed form and
:func:`kalman_loglik` evaluates the marginal likelihood of the observations
with missing cells skipped in the update step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussSSMParams:
    rho_obs: np.ndarray
    rho_lat: float

    def __post_init__(self):
        r = np.asarray(self.rho_obs, dtype=float)
        object.__setattr__(self, "rho_obs", r)
        if np.any(np.abs(r) >= 1.0) or abs(self.rho_lat) >= 1.0:
            raise DomainError("all correlations must lie strictly inside (-1, 1)")

    @property
    def d(self) -> int:
        return self.rho_obs.shape[0]


@dataclass(frozen=True)
class JointCovariance:
    """(d+1)T x (d+1)T covariance of the stacked (Z_t, W_t) vector."""

    sigma: np.ndarray

    def __post_init__(self):
        s = self.sigma
        if not np.allclose(s, s.T, atol=1e-12):
            raise DomainError("joint covariance must be symmetric")
        if not np.allclose(np.diag(s), 1.0, atol=1e-12):
            raise DomainError("joint covariance must have unit diagonal")
        # positive semidefiniteness, checked by a (jittered) factorization
        try:
            np.linalg.cholesky(s + 1e-10 * np.eye(s.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise DomainError("joint covariance is not positive semidefinite") from exc


def build_sigma(params: GaussSSMParams, T: int) -> JointCovariance:
    """Joint covariance of (Z_11..Z_1d, W_1; ...; Z_T1..Z_Td, W_T).

    Block (s, t) equals A on the diagonal and rho_lat^{|s-t|} (A + B) off it,
    where A is the within-time covariance (cross terms rho_j rho_k, last
    row/column rho_j) and B = diag(rho_j^2 - 1, ..., 0) removes the
    observation noise shared only at equal times.
    """
    if T < 1 or params.d < 1:
        raise DomainError("T and d must both be >= 1")
    d = params.d
    r = np.append(params.rho_obs, 1.0)
    a = np.outer(r, r)
    np.fill_diagonal(a, 1.0)
    ab = np.outer(r, r)  # A + B
    np.fill_diagonal(ab, np.append(params.rho_obs**2, 1.0))
    n = (d + 1) * T
    sigma = np.empty((n, n))
    for s in range(T):
        for t in range(T):
            blk = a if s == t else params.rho_lat ** abs(s - t) * ab
            sigma[s * (d + 1):(s + 1) * (d + 1), t * (d + 1):(t + 1) * (d + 1)] = blk
    return JointCovariance(sigma)


def kalman_loglik(params: GaussSSMParams, z: np.ndarray, observed: np.ndarray | None = None) -> float:
    """Marginal log likelihood of the observed cells of z under the model.

    z is T x d; missing entries are skipped (pass an explicit boolean mask or
    mark them NaN).  Scalar-state Kalman recursion with sequential univariate
    updates; observations at one time point are conditionally independent
    given the state, so the order within a time step does not matter.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 2:
        raise DomainError("z must be a T x d matrix")
    if observed is None:
        observed = ~np.isnan(z)
    observed = np.asarray(observed, dtype=bool)
    if not np.all(np.isfinite(z[observed])):
        raise DomainError("observed entries must be finite")
    T, d = z.shape
    if d != params.d:
        raise DomainError(f"z has {d} columns but params describe {params.d} margins")

    m, p = 0.0, 1.0  # predictive mean/variance of W_1 given W_0 ~ N(0,1)
    ll = 0.0
    rl = params.rho_lat
    for t in range(T):
        for j in range(d):
            if not observed[t, j]:
                continue
            rj = params.rho_obs[j]
            s = rj * rj * p + (1.0 - rj * rj)
            innov = z[t, j] - rj * m
            ll -= 0.5 * (_LOG_2PI + math.log(s) + innov * innov / s)
            gain = rj * p / s
            m += gain * innov
            p -= gain * rj * p
        m = rl * m
        p = rl * rl * p + (1.0 - rl * rl)
    return ll


def dense_loglik(params: GaussSSMParams, z: np.ndarray, observed: np.ndarray | None = None) -> float:
    """Same likelihood from the dense joint covariance (test oracle path).

    Marginalizes W by dropping its rows/columns of Sigma and restricts to the
    observed coordinates; independent of the Kalman recursion.
    """
    z = np.asarray(z, dtype=float)
    if observed is None:
        observed = ~np.isnan(z)
    observed = np.asarray(observed, dtype=bool)
    T, d = z.shape
    sigma = build_sigma(params, T).sigma
    keep = [t * (d + 1) + j for t in range(T) for j in range(d) if observed[t, j]]
    if not keep:
        return 0.0
    sub = sigma[np.ix_(keep, keep)]
    zv = z[observed]
    chol = np.linalg.cholesky(sub)
    alpha = np.linalg.solve(chol, zv)
    return -0.5 * (len(keep) * _LOG_2PI + alpha @ alpha) - np.sum(np.log(np.diag(chol)))
