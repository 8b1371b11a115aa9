"""Simplified marginal pipeline.

Per margin: Box-Cox transform with the exponent chosen by profile likelihood
over a grid, an additive regression on cubic B-spline bases (one-hot for
categorical covariates) with a small ridge for conditioning, standardized
residuals, and the probability integral transform to the copula scale.

This intentionally replaces a full penalized GAM: no smoothness selection,
fixed knot count.  The dependence model downstream consumes only the
standardized residuals.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.interpolate import BSpline

from .errors import DomainError, FitError, NumericError
from .families import EPS_U

DEFAULT_LAMBDA_GRID = np.round(np.arange(-2.0, 2.0 + 1e-9, 0.05), 10)
_N_INTERIOR_KNOTS = 10
_RIDGE = 1e-6
_SPLINE_DEGREE = 3


def boxcox(y, lam: float):
    """Box-Cox transform: (y^lam - 1)/lam, or ln y at lam = 0."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0.0) or not np.all(np.isfinite(y)):
        raise DomainError("Box-Cox requires strictly positive finite values")
    if lam == 0.0:
        return np.log(y)
    return np.expm1(lam * np.log(y)) / lam


def boxcox_inverse(b, lam: float):
    """Inverse transform; raises when 1 + lam*b leaves the admissible range."""
    b = np.asarray(b, dtype=float)
    if lam == 0.0:
        return np.exp(b)
    arg = 1.0 + lam * b
    if np.any(arg <= 0.0):
        bad = int(np.argmax(arg <= 0.0))
        raise NumericError(
            f"inverse Box-Cox undefined at sample {bad}: 1 + lambda*y_bc = {arg.flat[bad]:.4g} <= 0")
    return np.exp(np.log(arg) / lam)


@dataclass
class CovariateSpec:
    name: str
    kind: str  # "numeric" | "categorical"

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise DomainError(f"unknown covariate kind {self.kind!r}")


@dataclass
class MarginalModel:
    """Fitted marginal regression for one series."""

    lam: float
    covariates: list[CovariateSpec]
    knots: dict[str, np.ndarray]       # numeric covariates: full knot vectors
    categories: dict[str, np.ndarray]  # categorical covariates: level values
    coef: np.ndarray
    sigma: float
    fitted: np.ndarray | None = None   # training-set fitted means

    def design_matrix(self, covariates: dict[str, np.ndarray]) -> np.ndarray:
        n = len(next(iter(covariates.values()))) if covariates else 0
        cols = [np.ones((n, 1))]
        for spec in self.covariates:
            x = np.asarray(covariates[spec.name], dtype=float)
            if spec.kind == "numeric":
                t = self.knots[spec.name]
                # clamp to the training range; B-splines vanish outside it
                xc = np.clip(x, t[0], t[-1])
                basis = BSpline.design_matrix(xc, t, _SPLINE_DEGREE).toarray()
                cols.append(basis[:, 1:])  # drop one column: partition of unity
            else:
                levels = self.categories[spec.name]
                onehot = (x[:, None] == levels[None, 1:]).astype(float)
                cols.append(onehot)
        return np.hstack(cols)

    def mean(self, covariates: dict[str, np.ndarray]) -> np.ndarray:
        return self.design_matrix(covariates) @ self.coef

    # -- flat key-value serialization ----------------------------------------

    def to_text(self) -> str:
        out = io.StringIO()
        fmt = lambda a: " ".join(f"{x:.17g}" for x in np.atleast_1d(a))
        out.write(f"lambda = {self.lam:.17g}\n")
        out.write(f"sigma = {self.sigma:.17g}\n")
        out.write("covariates = " + ",".join(f"{s.name}:{s.kind}" for s in self.covariates) + "\n")
        for spec in self.covariates:
            if spec.kind == "numeric":
                out.write(f"knots.{spec.name} = {fmt(self.knots[spec.name])}\n")
            else:
                out.write(f"categories.{spec.name} = {fmt(self.categories[spec.name])}\n")
        out.write(f"coef = {fmt(self.coef)}\n")
        return out.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "MarginalModel":
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
        specs = []
        if kv.get("covariates"):
            for item in kv["covariates"].split(","):
                name, _, kind = item.partition(":")
                specs.append(CovariateSpec(name, kind))
        arr = lambda s: np.array([float(x) for x in s.split()])
        knots = {s.name: arr(kv[f"knots.{s.name}"]) for s in specs if s.kind == "numeric"}
        cats = {s.name: arr(kv[f"categories.{s.name}"]) for s in specs if s.kind == "categorical"}
        return cls(lam=float(kv["lambda"]), covariates=specs, knots=knots,
                   categories=cats, coef=arr(kv["coef"]), sigma=float(kv["sigma"]))


def _knot_vector(x: np.ndarray, name: str) -> np.ndarray:
    lo, hi = float(np.min(x)), float(np.max(x))
    if hi <= lo:
        raise FitError(f"covariate {name!r} is constant; basis is rank deficient")
    qs = np.quantile(x, np.linspace(0.0, 1.0, _N_INTERIOR_KNOTS + 2)[1:-1])
    interior = np.unique(qs[(qs > lo) & (qs < hi)])
    return np.concatenate([np.full(_SPLINE_DEGREE + 1, lo), interior,
                           np.full(_SPLINE_DEGREE + 1, hi)])


def fit_margin(y: np.ndarray, covariates: dict[str, np.ndarray],
               specs: list[CovariateSpec], lambda_grid=DEFAULT_LAMBDA_GRID,
               min_obs: int = 50) -> MarginalModel:
    """Fit one margin: choose the Box-Cox exponent by profile likelihood.

    Rows with missing response are dropped.  The Gaussian likelihood at each
    grid value includes the transform Jacobian (lambda - 1) * sum(log y), so
    values are comparable across the grid.
    """
    y = np.asarray(y, dtype=float)
    keep = np.isfinite(y)
    n = int(keep.sum())
    if n < min_obs:
        raise FitError(f"margin has {n} observed points; at least {min_obs} required")
    yo = y[keep]
    if np.any(yo <= 0.0):
        raise DomainError("Box-Cox margins require strictly positive responses")
    cov_obs = {}
    for spec in specs:
        if spec.name not in covariates:
            raise FitError(f"covariate {spec.name!r} missing from the data")
        col = np.asarray(covariates[spec.name], dtype=float)[keep]
        if not np.all(np.isfinite(col)):
            raise FitError(f"covariate {spec.name!r} has non-finite entries on observed rows")
        cov_obs[spec.name] = col

    knots = {s.name: _knot_vector(cov_obs[s.name], s.name) for s in specs if s.kind == "numeric"}
    categories = {s.name: np.unique(cov_obs[s.name]) for s in specs if s.kind == "categorical"}
    proto = MarginalModel(lam=0.0, covariates=specs, knots=knots,
                          categories=categories, coef=np.zeros(1), sigma=1.0)
    X = proto.design_matrix(cov_obs)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise FitError(_name_deficient_covariate(X, specs, knots, categories))

    # ridge solve via one SVD, reused across the lambda grid
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    shrink = s / (s * s + _RIDGE)
    log_jac_base = float(np.sum(np.log(yo)))

    best = None
    for lam in np.asarray(lambda_grid, dtype=float):
        b = boxcox(yo, float(lam))
        coef = Vt.T @ (shrink * (U.T @ b))
        resid = b - X @ coef
        sigma2 = float(resid @ resid) / n
        if sigma2 <= 0.0:
            sigma2 = np.finfo(float).tiny
        ll = -0.5 * n * (math.log(2.0 * math.pi * sigma2) + 1.0) + (lam - 1.0) * log_jac_base
        if best is None or ll > best[0]:
            best = (ll, float(lam), coef, math.sqrt(sigma2))

    _, lam, coef, sigma = best
    model = MarginalModel(lam=lam, covariates=specs, knots=knots,
                          categories=categories, coef=coef, sigma=max(sigma, 1e-12))
    model.fitted = X @ coef
    return model


def _name_deficient_covariate(X, specs, knots, categories):
    # report the first covariate block whose removal restores full rank
    col = 1
    for spec in specs:
        width = (len(knots[spec.name]) - _SPLINE_DEGREE - 2 if spec.kind == "numeric"
                 else len(categories[spec.name]) - 1)
        sub = np.delete(X, np.s_[col:col + width], axis=1)
        if np.linalg.matrix_rank(sub) == sub.shape[1]:
            return f"design matrix is rank deficient; covariate {spec.name!r} is the culprit"
        col += width
    return "design matrix is rank deficient"


def residuals_to_copula(model: MarginalModel, y: np.ndarray,
                        covariates: dict[str, np.ndarray]) -> np.ndarray:
    """Standardize through the fitted margin and map to (0,1) via the normal CDF.

    Missing responses give NaN output cells.
    """
    y = np.asarray(y, dtype=float)
    out = np.full(y.shape, np.nan)
    keep = np.isfinite(y)
    if not np.any(keep):
        return out
    cov_obs = {k: np.asarray(val, dtype=float)[keep] for k, val in covariates.items()}
    z = (boxcox(y[keep], model.lam) - model.mean(cov_obs)) / model.sigma
    out[keep] = np.clip(special.ndtr(z), EPS_U, 1.0 - EPS_U)
    return out
