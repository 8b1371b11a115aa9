"""Predictive simulation from stored posterior draws.

In-sample prediction (which doubles as missing-value imputation) samples the
observation copula conditional on the stored latent value; out-of-sample
prediction first propagates the latent chain recursively beyond the fitted
range, one fresh path per posterior draw.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError
from .families import Kind, hinv, spec_for
from .margins import MarginalModel, boxcox_inverse
from .sampler import PosteriorDraws


@dataclass
class PredictiveSamples:
    margin: int
    t: int
    u: np.ndarray                # (R,) copula scale
    y: np.ndarray | None = None  # data scale, present once margins are attached

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        if np.any(self.u <= 0.0) or np.any(self.u >= 1.0):
            raise DomainError("copula-scale samples must lie strictly inside (0, 1)")

    @property
    def n(self) -> int:
        return self.u.shape[0]

    def quantiles(self, probs=(0.05, 0.5, 0.95)):
        values = self.y if self.y is not None else self.u
        return np.quantile(values, probs)


def _emit_observation(draws: PosteriorDraws, j: int, v_at_t: np.ndarray,
                      w: np.ndarray) -> np.ndarray:
    """u^r = hinv_{m_j^r, tau_j^r}(w^r | v^r), vectorized per family group."""
    R = draws.n_draws
    u = np.empty(R)
    taus = draws.tau_obs[:, j]
    codes = draws.m_obs[:, j]
    for k, kind in enumerate(draws.families):
        grp = np.flatnonzero(codes == k)
        if grp.size == 0:
            continue
        # hinv is vectorized in (p, v) but scalar in tau; group equal taus
        for tau in np.unique(taus[grp]):
            idx = grp[taus[grp] == tau]
            spec = spec_for(kind, float(tau))
            u[idx] = np.atleast_1d(hinv(spec, w[idx], v_at_t[idx]))
    return u


def predict_insample(draws: PosteriorDraws, j: int, t: int,
                     rng: np.random.Generator) -> PredictiveSamples:
    """Predictive sample for margin j at an in-sample time t (0-based).

    For masked cells this is exactly the model's imputation distribution.
    """
    if not 0 <= j < draws.d:
        raise DomainError(f"margin index {j} out of range [0, {draws.d})")
    if not 0 <= t < draws.T:
        raise DomainError(f"time {t} outside the fitted range [0, {draws.T})")
    w = rng.uniform(size=draws.n_draws)
    u = _emit_observation(draws, j, draws.v[:, t], w)
    return PredictiveSamples(margin=j, t=t, u=u)


def predict_oos(draws: PosteriorDraws, j: int, t: int,
                rng: np.random.Generator) -> PredictiveSamples:
    """Predictive sample for margin j at horizon t - T >= 1 beyond the data.

    Latent values are propagated recursively per posterior draw:
    v_{t'} = hinv_lat(w_{t'} | v_{t'-1}) for t' = T .. t.
    """
    if not 0 <= j < draws.d:
        raise DomainError(f"margin index {j} out of range [0, {draws.d})")
    if t < draws.T:
        raise DomainError(f"out-of-sample time must be >= T = {draws.T}, got {t}")
    R = draws.n_draws
    v = draws.v[:, -1].copy()
    lat_taus = draws.tau_lat
    lat_codes = draws.m_lat
    horizon = t - draws.T + 1
    for _ in range(horizon):
        w = rng.uniform(size=R)
        nxt = np.empty(R)
        for k, kind in enumerate(draws.families):
            grp = np.flatnonzero(lat_codes == k)
            if grp.size == 0:
                continue
            for tau in np.unique(lat_taus[grp]):
                idx = grp[lat_taus[grp] == tau]
                spec = spec_for(kind, float(tau))
                nxt[idx] = np.atleast_1d(hinv(spec, w[idx], v[idx]))
        v = nxt
    w = rng.uniform(size=R)
    u = _emit_observation(draws, j, v, w)
    return PredictiveSamples(margin=j, t=t, u=u)


def to_data_scale(samples: PredictiveSamples, marg: MarginalModel,
                  covariates_at_t: dict[str, float | np.ndarray]) -> PredictiveSamples:
    """Lift copula-scale samples to the data scale.

    y_bc = f_hat(x_t) + sigma_hat * Phi^{-1}(u), then the inverse Box-Cox
    transform.  Monotone in u.
    """
    cov = {k: np.atleast_1d(np.asarray(val, dtype=float)) for k, val in covariates_at_t.items()}
    mean = float(marg.mean(cov)[0])
    y_bc = mean + marg.sigma * special.ndtri(samples.u)
    samples.y = boxcox_inverse(y_bc, marg.lam)
    return samples
