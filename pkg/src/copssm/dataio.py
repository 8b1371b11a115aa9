"""CSV and config-file I/O for the command line front end.

All numeric output is written with 17 significant digits so write-then-read
round trips reproduce float64 values exactly.  Missing cells are an empty
field or "NA" (case-insensitive).
"""

from __future__ import annotations

import configparser
import csv
import math
from pathlib import Path

import numpy as np

from .errors import CompletenessError, ConfigError
from .families import Kind
from .sampler import PosteriorDraws

_NA_TOKENS = {"", "na"}


def fmt(x: float) -> str:
    return f"{x:.17g}"


def _parse_cell(token: str, path, row: int, col: int) -> float:
    token = token.strip()
    if token.lower() in _NA_TOKENS:
        return math.nan
    try:
        return float(token)
    except ValueError as exc:
        raise ConfigError(f"{path}: cannot parse value {token!r} at row {row}, column {col}") from exc


def write_table(path, header: list[str], rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) if isinstance(x, float) else x for x in row])


def read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        try:
            header = next(r)
        except StopIteration:
            raise ConfigError(f"{path}: empty file") from None
        return header, [row for row in r if row]


def write_data_csv(path, u: np.ndarray, names: list[str]) -> None:
    """T x d matrix with NaN as missing; leading time-index column."""
    rows = []
    for t in range(u.shape[0]):
        row = [t] + ["NA" if math.isnan(x) else fmt(x) for x in u[t]]
        rows.append(row)
    write_table(path, ["t"] + list(names), rows)


def read_data_csv(path, columns: list[str] | None = None):
    """Returns (names, T x d array with NaN for missing cells)."""
    header, rows = read_table(path)
    if header[0] != "t":
        raise ConfigError(f"{path}: first column must be the time index 't'")
    names = header[1:]
    if columns is not None:
        missing = [c for c in columns if c not in names]
        if missing:
            raise ConfigError(f"{path}: columns {missing} not found (have {names})")
        idx = [names.index(c) + 1 for c in columns]
        names = list(columns)
    else:
        idx = list(range(1, len(header)))
    out = np.empty((len(rows), len(idx)))
    for r, row in enumerate(rows):
        for c, j in enumerate(idx):
            out[r, c] = _parse_cell(row[j], path, r, j)
    return names, out


# ---------------------------------------------------------------------------
# posterior draws
# ---------------------------------------------------------------------------

def draws_header(d: int) -> list[str]:
    return (["chain", "iter", "tau_lat"]
            + [f"tau_obs_{j + 1}" for j in range(d)]
            + ["m_lat"] + [f"m_obs_{j + 1}" for j in range(d)] + ["log_post"])


def write_draws_csv(path, draws: PosteriorDraws) -> None:
    d = draws.d
    rows = []
    for r in range(draws.n_draws):
        row = [int(draws.chain[r]), int(draws.iteration[r]), fmt(draws.tau_lat[r])]
        row += [fmt(x) for x in draws.tau_obs[r]]
        row.append(draws.families[draws.m_lat[r]].value)
        row += [draws.families[k].value for k in draws.m_obs[r]]
        row.append(fmt(draws.log_post[r]))
        rows.append(row)
    write_table(path, draws_header(d), rows)


def write_latent_csv(path, draws: PosteriorDraws) -> None:
    header = ["chain", "iter"] + [f"v_{t + 1}" for t in range(draws.T)]
    rows = ([int(draws.chain[r]), int(draws.iteration[r])] + [fmt(x) for x in draws.v[r]]
            for r in range(draws.n_draws))
    write_table(path, header, rows)


def read_draws_csv(draws_path, latent_path) -> PosteriorDraws:
    """Reload stored draws (diagnostics are not persisted; NaN-filled)."""
    header, rows = read_table(draws_path)
    d = sum(1 for h in header if h.startswith("tau_obs_"))
    if header != draws_header(d):
        raise ConfigError(f"{draws_path}: unexpected header {header}")
    lheader, lrows = read_table(latent_path)
    T = len(lheader) - 2
    if len(lrows) != len(rows):
        raise CompletenessError(
            f"{latent_path} has {len(lrows)} rows but {draws_path} has {len(rows)}")

    R = len(rows)
    fam_order: list[Kind] = []

    def fam_code(label: str) -> int:
        kind = Kind(label)
        if kind not in fam_order:
            fam_order.append(kind)
        return fam_order.index(kind)

    chain = np.empty(R, dtype=int)
    iteration = np.empty(R, dtype=int)
    tau_lat = np.empty(R)
    tau_obs = np.empty((R, d))
    m_lat = np.empty(R, dtype=np.int8)
    m_obs = np.empty((R, d), dtype=np.int8)
    log_post = np.empty(R)
    v = np.empty((R, T))
    for r, row in enumerate(rows):
        chain[r] = int(row[0])
        iteration[r] = int(row[1])
        tau_lat[r] = float(row[2])
        tau_obs[r] = [float(x) for x in row[3:3 + d]]
        m_lat[r] = fam_code(row[3 + d])
        m_obs[r] = [fam_code(x) for x in row[4 + d:4 + 2 * d]]
        log_post[r] = float(row[4 + 2 * d])
        lrow = lrows[r]
        if int(lrow[0]) != chain[r] or int(lrow[1]) != iteration[r]:
            raise CompletenessError(f"{latent_path}: row {r} does not align with the draws file")
        v[r] = [float(x) for x in lrow[2:]]

    n = T + d + 1
    return PosteriorDraws(
        families=tuple(fam_order), v=v, tau_obs=tau_obs, tau_lat=tau_lat,
        m_obs=m_obs, m_lat=m_lat, log_post=log_post, chain=chain, iteration=iteration,
        accept_stat=np.array([math.nan]), divergences=np.array([0]),
        step_size=np.array([math.nan]), ess=np.full(n, math.nan), rhat=np.full(n, math.nan))


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

_SCHEMA = {
    "data": {"path", "scale", "margins", "covariates", "truth"},
    "simulate": {"t", "d", "obs_families", "obs_taus", "lat_family", "lat_tau",
                 "seed", "mask_rate", "mask_block"},
    "sampler": {"iterations", "warmup", "chains", "target_accept",
                "max_tree_depth", "seed", "families", "store_latent", "parallel"},
    "margins": {"lambda_min", "lambda_max", "lambda_step", "min_obs"},
    "holdout": {"margins", "last"},
    "predict": {"margins", "mode", "horizon", "draws_dir", "seed"},
    "score": {"truth", "predictions"},
    "contours": {"pairs", "grid_n", "z_max", "nodes", "source", "draws_dir",
                 "obs_families", "obs_taus", "lat_family", "lat_tau"},
}


class RunConfig:
    """Validated view of a flat key-value config file with per-module sections."""

    def __init__(self, sections: dict[str, dict[str, str]]):
        for name, keys in sections.items():
            if name not in _SCHEMA:
                raise ConfigError(f"unknown config section [{name}]")
            unknown = set(keys) - _SCHEMA[name]
            if unknown:
                raise ConfigError(f"unknown keys {sorted(unknown)} in section [{name}]")
        self.sections = sections

    @classmethod
    def load(cls, path) -> "RunConfig":
        cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
        read = cp.read(path)
        if not read:
            raise ConfigError(f"config file {path} not found")
        return cls({s: dict(cp.items(s)) for s in cp.sections()})

    def section(self, name: str) -> dict[str, str]:
        return self.sections.get(name, {})

    def require(self, name: str) -> dict[str, str]:
        if name not in self.sections:
            raise ConfigError(f"config section [{name}] is required for this command")
        return self.sections[name]

    # typed getters ---------------------------------------------------------

    def get(self, section: str, key: str, default=None, cast=str):
        raw = self.section(section).get(key)
        if raw is None:
            if default is None:
                return None
            return default
        if cast is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"[{section}] {key}: expected a boolean, got {raw!r}")
        try:
            return cast(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from exc

    def get_list(self, section: str, key: str, default=None):
        raw = self.section(section).get(key)
        if raw is None:
            return default
        return [tok.strip() for tok in raw.split(",") if tok.strip()]


def parse_families(tokens) -> tuple[Kind, ...]:
    try:
        return tuple(Kind(tok.strip().lower()) for tok in tokens)
    except ValueError as exc:
        raise ConfigError(f"unknown copula family in {tokens!r}; "
                          f"valid: {[k.value for k in Kind]}") from exc
