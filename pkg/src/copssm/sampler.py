"""Posterior simulation for the copula state space model.

Continuous parameters are sampled with multinomial No-U-Turn HMC (doubling
trajectories, generalized U-turn criterion with the extra cross-subtree
checks, dual-averaging step size, diagonal mass matrix estimated over
expanding warmup windows).  Family indicators are then drawn per stored
draw from their exact Gibbs conditionals.

Chains are independent; each derives its RNG stream from (seed, chain
index), so results are bit-identical whether chains run serially or in a
process pool.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FitError
from .families import Kind
from .model import (
    DEFAULT_FAMILIES,
    CopulaScaleData,
    MarginalizedPosterior,
    _check_families,
    constrain,
    log_jacobian,
)

_DIVERGENCE_THRESHOLD = 1000.0


@dataclass(frozen=True)
class SamplerConfig:
    iterations: int = 3000
    warmup: int = 1000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    chains: int = 1
    init_jitter: float = 0.5
    parallel: bool = True  # execution detail only; draws do not depend on it
    store_latent: bool = True

    def __post_init__(self):
        if self.warmup < 0 or self.warmup >= self.iterations:
            raise ConfigError("need 0 <= warmup < iterations")
        if not 0.0 < self.target_accept < 1.0:
            raise ConfigError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 0 or self.chains < 1:
            raise ConfigError("max_tree_depth must be >= 0 and chains >= 1")


# ---------------------------------------------------------------------------
# NUTS core
# ---------------------------------------------------------------------------

class _Subtree:
    __slots__ = ("ok", "divergent", "q_end", "p_end_travel", "lp_end", "grad_end",
                 "q_prop", "lp_prop", "grad_prop", "log_sum_w", "p_sum",
                 "p_first", "p_last", "ps_first", "ps_last", "alpha", "n_alpha", "n_leap")


def _uturn(ps_first, ps_last, rho):
    return (rho @ ps_first > 0.0) and (rho @ ps_last > 0.0)


def _build_tree(target, depth, q, p, lp, grad, eps_signed, inv_mass, h0, rng):
    """Build a subtree of 2^depth leapfrog steps starting (exclusive) at
    (q, p); everything is tracked in travel order, which the U-turn checks
    are invariant to."""
    tree = _Subtree()
    if depth == 0:
        # single leapfrog step
        p_half = p + 0.5 * eps_signed * grad
        q_new = q + eps_signed * (inv_mass * p_half)
        lp_new, grad_new = target(q_new)
        p_new = p_half + 0.5 * eps_signed * grad_new
        ke = 0.5 * float(p_new @ (inv_mass * p_new))
        energy_err = (ke - lp_new) - h0
        if not np.isfinite(energy_err):
            energy_err = np.inf
        tree.divergent = energy_err > _DIVERGENCE_THRESHOLD
        tree.ok = not tree.divergent
        tree.q_end, tree.p_end_travel, tree.lp_end, tree.grad_end = q_new, p_new, lp_new, grad_new
        tree.q_prop, tree.lp_prop, tree.grad_prop = q_new, lp_new, grad_new
        tree.log_sum_w = -energy_err if tree.ok else -np.inf
        tree.p_sum = p_new
        tree.p_first = tree.p_last = p_new
        ps = inv_mass * p_new
        tree.ps_first = tree.ps_last = ps
        tree.alpha = min(1.0, math.exp(-energy_err)) if np.isfinite(energy_err) else 0.0
        tree.n_alpha = 1
        tree.n_leap = 1
        return tree

    t1 = _build_tree(target, depth - 1, q, p, lp, grad, eps_signed, inv_mass, h0, rng)
    if not t1.ok:
        return t1
    t2 = _build_tree(target, depth - 1, t1.q_end, t1.p_end_travel, t1.lp_end, t1.grad_end,
                     eps_signed, inv_mass, h0, rng)

    tree.alpha = t1.alpha + t2.alpha
    tree.n_alpha = t1.n_alpha + t2.n_alpha
    tree.n_leap = t1.n_leap + t2.n_leap
    tree.divergent = t1.divergent or t2.divergent
    tree.q_end, tree.p_end_travel = t2.q_end, t2.p_end_travel
    tree.lp_end, tree.grad_end = t2.lp_end, t2.grad_end
    tree.log_sum_w = np.logaddexp(t1.log_sum_w, t2.log_sum_w)
    # multinomial sampling within the merged subtree
    if math.log(rng.uniform()) < t2.log_sum_w - tree.log_sum_w:
        tree.q_prop, tree.lp_prop, tree.grad_prop = t2.q_prop, t2.lp_prop, t2.grad_prop
    else:
        tree.q_prop, tree.lp_prop, tree.grad_prop = t1.q_prop, t1.lp_prop, t1.grad_prop
    tree.p_sum = t1.p_sum + t2.p_sum
    tree.p_first, tree.ps_first = t1.p_first, t1.ps_first
    tree.p_last, tree.ps_last = t2.p_last, t2.ps_last
    tree.ok = (t2.ok
               and _uturn(t1.ps_first, t2.ps_last, tree.p_sum)
               and _uturn(t1.ps_first, t2.ps_first, t1.p_sum + t2.p_first)
               and _uturn(t1.ps_last, t2.ps_last, t2.p_sum + t1.p_last))
    return tree


def _nuts_iteration(target, q, lp, grad, eps, inv_mass, max_depth, rng):
    dim = q.shape[0]
    p0 = rng.standard_normal(dim) / np.sqrt(inv_mass)
    ke0 = 0.5 * float(p0 @ (inv_mass * p0))
    h0 = ke0 - lp

    q_prop, lp_prop, grad_prop = q, lp, grad
    log_sum_w = 0.0
    p_sum = p0.copy()
    ps0 = inv_mass * p0
    p_minus = p_plus = p0
    ps_minus = ps_plus = ps0
    ends = {1: (q, p0, lp, grad), -1: (q, p0, lp, grad)}
    alpha_sum, n_alpha, n_leap = 0.0, 0, 0
    divergent = False

    depth = 0
    while depth <= max_depth:
        direction = 1 if rng.uniform() < 0.5 else -1
        qe, pe, lpe, ge = ends[direction]
        sub = _build_tree(target, depth, qe, pe, lpe, ge,
                          direction * eps, inv_mass, h0, rng)
        alpha_sum += sub.alpha
        n_alpha += sub.n_alpha
        n_leap += sub.n_leap
        divergent = divergent or sub.divergent
        if not sub.ok:
            break
        ends[direction] = (sub.q_end, sub.p_end_travel, sub.lp_end, sub.grad_end)
        # biased progressive sampling toward the new subtree
        if math.log(rng.uniform()) < sub.log_sum_w - log_sum_w:
            q_prop, lp_prop, grad_prop = sub.q_prop, sub.lp_prop, sub.grad_prop
        log_sum_w = np.logaddexp(log_sum_w, sub.log_sum_w)
        # time-order the new subtree's boundary quantities and merge
        if direction == 1:
            sub_pf, sub_pl = sub.p_first, sub.p_last
            sub_psf, sub_psl = sub.ps_first, sub.ps_last
            cross1 = _uturn(ps_minus, sub_psf, p_sum + sub_pf)
            cross2 = _uturn(ps_plus, sub_psl, sub.p_sum + p_plus)
            p_plus, ps_plus = sub_pl, sub_psl
        else:
            sub_pf, sub_pl = sub.p_last, sub.p_first  # travel order reversed in time
            sub_psf, sub_psl = sub.ps_last, sub.ps_first
            cross1 = _uturn(sub_psf, ps_minus, sub.p_sum + p_minus)
            cross2 = _uturn(sub_psl, ps_plus, p_sum + sub_pl)
            p_minus, ps_minus = sub_pf, sub_psf
        p_sum = p_sum + sub.p_sum
        if not (_uturn(ps_minus, ps_plus, p_sum) and cross1 and cross2):
            break
        depth += 1

    accept_stat = alpha_sum / max(n_alpha, 1)
    return q_prop, lp_prop, grad_prop, accept_stat, divergent, n_leap


def _find_reasonable_epsilon(target, q, lp, grad, inv_mass, rng):
    dim = q.shape[0]
    eps = 1.0
    p = rng.standard_normal(dim) / np.sqrt(inv_mass)
    h0 = 0.5 * float(p @ (inv_mass * p)) - lp

    def energy_error(eps):
        p_half = p + 0.5 * eps * grad
        q_new = q + eps * (inv_mass * p_half)
        lp_new, grad_new = target(q_new)
        p_new = p_half + 0.5 * eps * grad_new
        if not np.isfinite(lp_new):
            return np.inf
        return (0.5 * float(p_new @ (inv_mass * p_new)) - lp_new) - h0

    err = energy_error(eps)
    direction = 1 if err < math.log(2.0) else -1
    for _ in range(60):
        eps = eps * (2.0 if direction == 1 else 0.5)
        err = energy_error(eps)
        if direction == 1 and not err < math.log(2.0):
            break
        if direction == -1 and not err >= math.log(2.0):
            break
        if eps > 1e7 or eps < 1e-10:
            break
    return eps


class _DualAveraging:
    """Nesterov dual averaging of log step size (gamma=0.05, t0=10, kappa=0.75)."""

    def __init__(self, eps0, delta):
        self.mu = math.log(10.0 * eps0)
        self.delta = delta
        self.log_eps = math.log(eps0)
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.count = 1

    def update(self, accept_stat):
        m = self.count
        self.h_bar = (1.0 - 1.0 / (m + 10.0)) * self.h_bar \
            + (self.delta - accept_stat) / (m + 10.0)
        self.log_eps = self.mu - math.sqrt(m) / 0.05 * self.h_bar
        eta = m ** -0.75
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar
        self.count += 1

    @property
    def eps(self):
        return math.exp(self.log_eps)

    @property
    def eps_bar(self):
        return math.exp(self.log_eps_bar)


def _slow_windows(warmup, init_buffer=75, term_buffer=50, base_window=25):
    """Iteration indices (exclusive ends) at which the mass matrix updates."""
    if warmup < 20:
        return 0, warmup, []
    if init_buffer + term_buffer + base_window > warmup:
        init_buffer = max(1, int(round(0.15 * warmup)))
        term_buffer = max(1, int(round(0.10 * warmup)))
        return init_buffer, warmup - term_buffer, [warmup - term_buffer]
    ends = []
    start = init_buffer
    size = base_window
    while True:
        end = start + size
        if end + 2 * size > warmup - term_buffer:
            ends.append(warmup - term_buffer)
            break
        ends.append(end)
        start = end
        size *= 2
    return init_buffer, warmup - term_buffer, ends


class _Welford:
    def __init__(self, dim):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def variance(self):
        return self.m2 / max(self.n - 1, 1)


@dataclass
class NutsResult:
    draws: np.ndarray       # (chains, kept, dim)
    log_prob: np.ndarray    # (chains, kept)
    accept_stat: np.ndarray  # (chains, kept)
    divergences: np.ndarray  # per chain, post-warmup
    step_size: np.ndarray   # per chain, final
    n_leapfrog: np.ndarray  # per chain, total


def _run_chain(target, x0, cfg: SamplerConfig, chain_index: int):
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed,
                                                       spawn_key=(chain_index,)))
    dim = x0.shape[0]

    q = None
    for _ in range(100):
        cand = x0 + rng.uniform(-cfg.init_jitter, cfg.init_jitter, size=dim)
        lp, grad = target(cand)
        if np.isfinite(lp):
            q = cand
            break
    if q is None:
        raise FitError("non-finite log density at initialization after 100 jittered retries")

    inv_mass = np.ones(dim)
    eps = _find_reasonable_epsilon(target, q, lp, grad, inv_mass, rng)
    da = _DualAveraging(eps, cfg.target_accept)
    adapt_start, adapt_end, window_ends = _slow_windows(cfg.warmup)
    welford = _Welford(dim)

    kept = cfg.iterations - cfg.warmup
    draws = np.empty((kept, dim))
    lps = np.empty(kept)
    accepts = np.empty(kept)
    divergences = 0
    warm_divergences = 0
    n_leap_total = 0

    for m in range(cfg.iterations):
        warm = m < cfg.warmup
        step = da.eps if warm else da.eps_bar
        q, lp, grad, astat, div, n_leap = _nuts_iteration(
            target, q, lp, grad, step, inv_mass, cfg.max_tree_depth, rng)
        n_leap_total += n_leap
        if warm:
            warm_divergences += int(div)
            da.update(astat)
            if adapt_start <= m < adapt_end:
                welford.add(q)
            if window_ends and (m + 1) == window_ends[0]:
                window_ends.pop(0)
                n = welford.n
                if n >= 3:
                    var = welford.variance()
                    inv_mass = n / (n + 5.0) * var + 1e-3 * (5.0 / (n + 5.0))
                welford = _Welford(dim)
                eps = _find_reasonable_epsilon(target, q, lp, grad, inv_mass, rng)
                da = _DualAveraging(eps, cfg.target_accept)
        else:
            k = m - cfg.warmup
            draws[k] = q
            lps[k] = lp
            accepts[k] = astat
            divergences += int(div)

    return {
        "draws": draws,
        "log_prob": lps,
        "accept_stat": accepts,
        "divergences": divergences,
        "warm_divergences": warm_divergences,
        "step_size": da.eps_bar,
        "n_leapfrog": n_leap_total,
    }


def nuts_sample(target, x0, cfg: SamplerConfig) -> NutsResult:
    """Sample an arbitrary log-density-with-gradient target.

    `target(x)` must return (log density, gradient).  Runs cfg.chains
    independent chains (serially; :func:`fit` parallelizes the model case)
    and returns the post-warmup draws.
    """
    x0 = np.asarray(x0, dtype=float)
    results = [_run_chain(target, x0, cfg, c) for c in range(cfg.chains)]
    return NutsResult(
        draws=np.stack([r["draws"] for r in results]),
        log_prob=np.stack([r["log_prob"] for r in results]),
        accept_stat=np.stack([r["accept_stat"] for r in results]),
        divergences=np.array([r["divergences"] for r in results]),
        step_size=np.array([r["step_size"] for r in results]),
        n_leapfrog=np.array([r["n_leapfrog"] for r in results]),
    )


# ---------------------------------------------------------------------------
# chain-level job for the copula model (module level so it pickles)
# ---------------------------------------------------------------------------

def _model_chain_job(args):
    u, observed, kind_values, cfg, chain_index, x0 = args
    data = CopulaScaleData(u, observed)
    posterior = MarginalizedPosterior(data, tuple(Kind(k) for k in kind_values))
    out = _run_chain(posterior.value_and_grad, x0, cfg, chain_index)
    out.update(_gibbs_families(posterior, out["draws"], cfg, chain_index))
    return out


def _gibbs_families(posterior: MarginalizedPosterior, draws: np.ndarray,
                    cfg: SamplerConfig, chain_index: int):
    """Per stored draw, sample the family indicators from their exact
    conditionals; continues the chain's RNG stream deterministically."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed,
                                                       spawn_key=(chain_index, 1)))
    kept = draws.shape[0]
    d = posterior.d
    K = len(posterior.kinds)
    m_obs = np.empty((kept, d), dtype=np.int8)
    m_lat = np.empty(kept, dtype=np.int8)
    for r in range(kept):
        v, tau_obs, tau_lat = constrain(draws[r], d)
        S, Sl = posterior.family_log_scores(v, tau_obs, tau_lat)
        # normalized conditionals via max-shifted softmax
        pm = np.exp(S - S.max(axis=1, keepdims=True))
        pm /= pm.sum(axis=1, keepdims=True)
        pl = np.exp(Sl - Sl.max())
        pl /= pl.sum()
        uu = rng.uniform(size=d + 1)
        m_obs[r] = (pm.cumsum(axis=1) < uu[:d, None]).sum(axis=1).clip(max=K - 1)
        m_lat[r] = min(int((pl.cumsum() < uu[d]).sum()), K - 1)
    return {"m_obs": m_obs, "m_lat": m_lat}


@dataclass
class PosteriorDraws:
    """Stored posterior sample plus sampler diagnostics."""

    families: tuple[Kind, ...]
    v: np.ndarray            # (R, T)
    tau_obs: np.ndarray      # (R, d)
    tau_lat: np.ndarray      # (R,)
    m_obs: np.ndarray        # (R, d) indices into `families`
    m_lat: np.ndarray        # (R,)
    log_post: np.ndarray     # (R,) log posterior density, constrained space
    chain: np.ndarray        # (R,)
    iteration: np.ndarray    # (R,) post-warmup iteration index
    accept_stat: np.ndarray  # per chain mean
    divergences: np.ndarray  # per chain
    step_size: np.ndarray    # per chain
    ess: np.ndarray          # per continuous parameter (T + d + 1)
    rhat: np.ndarray         # per continuous parameter

    @property
    def n_draws(self) -> int:
        return self.tau_lat.shape[0]

    @property
    def T(self) -> int:
        return self.v.shape[1]

    @property
    def d(self) -> int:
        return self.tau_obs.shape[1]

    def obs_family(self, r: int, j: int) -> Kind:
        return self.families[self.m_obs[r, j]]

    def lat_family(self, r: int) -> Kind:
        return self.families[self.m_lat[r]]

    def family_posterior(self):
        """(d+1) x K matrix of family frequencies (margins then latent)."""
        K = len(self.families)
        out = np.empty((self.d + 1, K))
        for j in range(self.d):
            out[j] = np.bincount(self.m_obs[:, j], minlength=K) / self.n_draws
        out[self.d] = np.bincount(self.m_lat, minlength=K) / self.n_draws
        return out

    def tau_matrix(self):
        """(R, d+1) matrix of tau draws, observation margins then latent."""
        return np.column_stack([self.tau_obs, self.tau_lat])


def initial_point(data: CopulaScaleData) -> np.ndarray:
    """Starting point for the chains.

    Taus start at 0.1 (tau_obs_1 at 0.5).  The latent path starts at the
    rank transform of the per-time mean of the observed normal scores: a
    crude common-factor estimate.  A neutral v = 0.5 start can drift into
    the unbounded-density funnel of the D-vine prior at tau_lat -> +-1
    (conforming paths give unbounded latent prior density), from which
    adaptation rarely recovers; an orientation-aligned path keeps warmup
    out of it.
    """
    from scipy import special as sp
    from scipy.stats import rankdata

    T, d = data.T, data.d
    z = np.where(data.observed, sp.ndtri(np.where(data.observed, data.u, 0.5)), 0.0)
    zbar = z.sum(axis=1) / np.maximum(data.observed.sum(axis=1), 1)
    v0 = rankdata(zbar, method="average") / (T + 1.0)
    x0 = np.empty(T + d + 1)
    x0[:T] = sp.logit(v0)
    x0[T] = 0.0  # tau_obs_1 = 0.5
    x0[T + 1:] = 2.0 * math.atanh(0.1)  # remaining taus = 0.1
    return x0


def fit(data: CopulaScaleData, families=DEFAULT_FAMILIES,
        cfg: SamplerConfig = SamplerConfig()) -> PosteriorDraws:
    """Full posterior simulation: NUTS over the family-marginalized
    continuous posterior, then Gibbs draws of the indicators per stored draw."""
    kinds = _check_families(families)
    counts = data.n_observed()
    for j in range(data.d):
        if counts[j] == 0:
            raise ConfigError(f"margin {j} has no observed cells")

    T, d = data.T, data.d
    x0 = initial_point(data)

    jobs = [(data.u, data.observed, tuple(k.value for k in kinds), cfg, c, x0)
            for c in range(cfg.chains)]
    if cfg.parallel and cfg.chains > 1 and (os.cpu_count() or 1) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.chains, os.cpu_count())) as pool:
            results = list(pool.map(_model_chain_job, jobs))
    else:
        results = [_model_chain_job(job) for job in jobs]

    kept = cfg.iterations - cfg.warmup
    R = kept * cfg.chains
    v = np.empty((R, T))
    tau_obs = np.empty((R, d))
    tau_lat = np.empty(R)
    log_post = np.empty(R)
    for c, res in enumerate(results):
        for i in range(kept):
            r = c * kept + i
            x = res["draws"][i]
            v[r], tau_obs[r], tau_lat[r] = constrain(x, d)
            log_post[r] = res["log_prob"][i] - log_jacobian(x, d)

    m_obs = np.concatenate([res["m_obs"] for res in results])
    m_lat = np.concatenate([res["m_lat"] for res in results])
    chain = np.repeat(np.arange(cfg.chains), kept)
    iteration = np.tile(np.arange(kept), cfg.chains)

    stacked = np.stack([res["draws"] for res in results])  # (C, kept, dim)
    ess, rhat = _ess_rhat(stacked)

    total_div = int(sum(res["divergences"] for res in results))
    if R and total_div / R > 0.01:
        warnings.warn(
            f"{total_div} divergent transitions out of {R} draws (> 1%); "
            "results may be unreliable", RuntimeWarning, stacklevel=2)

    return PosteriorDraws(
        families=kinds,
        v=v, tau_obs=tau_obs, tau_lat=tau_lat,
        m_obs=m_obs, m_lat=m_lat, log_post=log_post,
        chain=chain, iteration=iteration,
        accept_stat=np.array([res["accept_stat"].mean() for res in results]),
        divergences=np.array([res["divergences"] for res in results]),
        step_size=np.array([res["step_size"] for res in results]),
        ess=ess, rhat=rhat,
    )


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def _split_sequences(stacked):
    """(C, N, dim) -> (2C, N//2, dim), dropping an odd trailing draw."""
    C, N, dim = stacked.shape
    half = N // 2
    if half < 1:
        return stacked
    return np.concatenate([stacked[:, :half], stacked[:, half:2 * half]])


def _ess_rhat(stacked):
    """Split-Rhat and autocorrelation ESS per parameter.

    stacked: (chains, kept, dim).  Standard split formulation; ESS uses
    Geyer's initial monotone positive sequence on the chain-averaged
    autocorrelations.
    """
    seqs = _split_sequences(stacked)
    m, n, dim = seqs.shape
    ess = np.full(dim, float(m * n))
    rhat = np.ones(dim)
    if n < 4:
        return ess, rhat

    means = seqs.mean(axis=1)                       # (m, dim)
    variances = seqs.var(axis=1, ddof=1)            # (m, dim)
    w = variances.mean(axis=0)
    b_over_n = means.var(axis=0, ddof=1) if m > 1 else np.zeros(dim)
    var_plus = (n - 1) / n * w + b_over_n
    good = (w > 0) & np.isfinite(var_plus)
    rhat[good] = np.sqrt(var_plus[good] / w[good])

    nfft = 1 << (2 * n - 1).bit_length()
    for p in range(dim):
        if not good[p]:
            continue
        acov = np.zeros(n)
        for c in range(m):
            x = seqs[c, :, p] - means[c, p]
            f = np.fft.rfft(x, nfft)
            ac = np.fft.irfft(f * np.conj(f), nfft)[:n].real
            acov += ac / n
        acov /= m
        rho = 1.0 - (w[p] - acov) / var_plus[p]
        # Geyer: sum consecutive pairs while positive, enforce monotone
        tau = -1.0
        prev = np.inf
        for k in range(0, n - 1, 2):
            pair = rho[k] + rho[k + 1]
            if pair < 0:
                break
            pair = min(pair, prev)
            prev = pair
            tau += 2.0 * pair
        tau = max(tau, 1.0 / (m * n))
        ess[p] = min(m * n / tau, m * n * math.log10(max(m * n, 10.0)))
    return ess, rhat
