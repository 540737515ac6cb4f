"""Synthetic worlds with known parameters.

A world has CZs made of counties, lenders with national pricing positions,
three loan vintages (2018-2019, 2020-2021, 2024), a gravity-shaped migration
network, the exposures implied by the true pricing rule, and CZ-year and
CZ-SOC-year outcome panels. Every draw comes from a child stream of
``SeedSequence(master_seed)``, so a config fully determines its world.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import pandas as pd

from mpwedge.errors import InvalidInputError
from mpwedge.exposure import build_bartik, build_mpw, build_wop
from mpwedge.mortgage import NORMALIZED_PRINCIPAL, NORMALIZED_TERM, monthly_payment
from mpwedge.network import great_circle_distance, normalize_in_shares

COVARIATES = ["loan_amount_k", "income_k", "dti", "points", "refi"]

# slopes per covariate unit, on the annual-rate scale
NEW_SLOPES = {"loan_amount_k": -4e-6, "income_k": -1e-5, "dti": 2e-4, "points": -2.5e-3,
              "refi": 1.5e-3}
OLD_SLOPES = {"loan_amount_k": -3e-6, "income_k": -8e-6, "dti": 1.5e-4, "points": -2e-3,
              "refi": 1e-3}

STREAMS = ("geography", "network", "loans", "panel", "soc_panel", "bartik")


@dataclass(frozen=True)
class DgpConfig:
    n_cz: int = 200
    n_counties_per_cz: int = 2
    n_states: int = 10
    n_lenders: int = 20
    n_soc: int = 8
    year_start: int = 2017
    year_end: int = 2024
    post_start: int = 2022
    baseline_years: tuple = (2017, 2018, 2019)

    true_beta_migration: float = -0.059
    true_theta_h1b: float = 0.018
    true_triple: float = 0.048
    true_theta_count: float = 0.02
    triple_lower_order: tuple = (0.05, 0.03, 0.002)

    gravity: tuple = (-6.0, 0.8, 0.7, -1.5)
    flow_noise: float = 0.3
    n_feeders: int = 20

    loans_pre: int = 20
    loans_shock: int = 40
    loans_new: int = 30
    lender_rate_scale: float = 0.004
    lender_share_concentration: float = 0.3
    county_share_precision: float = 5.0
    county_rate_shift_scale: float = 0.001
    old_base_rate: float = 0.030
    new_base_rate: float = 0.068
    county_new_effect_scale: float = 0.0004
    old_rate_noise: float = 0.002
    new_rate_noise: float = 0.002
    new_slopes: tuple = tuple(NEW_SLOPES.values())
    old_slopes: tuple = tuple(OLD_SLOPES.values())

    outcome_noise: float = 0.4
    cluster_effect_scale: float = 1.0
    cluster_noise_corr: float = 0.5
    control_effects: tuple = (0.3, -0.2)
    endogeneity: float = 0.0

    soc_noise: float = 0.3
    soc_fe_scale: float = 1.0
    bartik_growth_mean: float = 0.02
    bartik_growth_sd: float = 0.03
    bartik_noise: float = 0.01

    dispersion: float = 0.5
    base_h1b_rate: float = 0.002
    employment_ratio: float = 0.45

    master_seed: int = 0

    def __post_init__(self):
        scales = ["flow_noise", "lender_rate_scale", "county_rate_shift_scale", "old_rate_noise",
                  "new_rate_noise", "outcome_noise", "cluster_effect_scale", "soc_noise",
                  "soc_fe_scale", "bartik_growth_sd", "bartik_noise", "dispersion",
                  "county_new_effect_scale"]
        bad = [s for s in scales if getattr(self, s) < 0]
        if bad:
            raise InvalidInputError(f"noise scales must be nonnegative: {bad}")
        if self.n_cz < 2 or self.n_counties_per_cz < 1 or self.n_lenders < 1:
            raise InvalidInputError("need at least two CZs, one county per CZ and one lender")
        if self.n_cz * self.n_counties_per_cz > self.n_states * 999:
            raise InvalidInputError("too many counties per state for 5-digit county codes")
        if not -1 < self.cluster_noise_corr < 1:
            raise InvalidInputError("cluster_noise_corr must lie in (-1, 1)")
        if not self.year_start <= self.post_start <= self.year_end:
            raise InvalidInputError("post_start must lie within the panel years")

    @property
    def years(self) -> list[int]:
        return list(range(self.year_start, self.year_end + 1))

    def with_(self, **changes) -> "DgpConfig":
        return replace(self, **changes)

    @classmethod
    def from_dict(cls, d: dict) -> "DgpConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidInputError(f"unknown DGP settings: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def streams(config: DgpConfig) -> dict[str, np.random.Generator]:
    """One independent generator per generation stage."""
    children = np.random.SeedSequence(config.master_seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(STREAMS, children)}


def generate_geography(config: DgpConfig, rng: np.random.Generator) -> pd.DataFrame:
    """Counties with CZ, state, centroid and population."""
    n_cz, k = config.n_cz, config.n_counties_per_cz
    cz_lat = rng.uniform(26.0, 48.0, n_cz)
    cz_lon = rng.uniform(-122.0, -70.0, n_cz)
    cz = np.repeat(np.arange(1, n_cz + 1), k)
    # states are contiguous longitude bands of roughly equal CZ counts
    band = np.empty(n_cz, dtype=int)
    band[np.argsort(cz_lon, kind="stable")] = np.arange(n_cz) * config.n_states // n_cz
    state = 1 + np.repeat(band, k)
    lat = np.repeat(cz_lat, k) + rng.normal(0.0, 0.2, n_cz * k)
    lon = np.repeat(cz_lon, k) + rng.normal(0.0, 0.2, n_cz * k)
    pop = np.round(np.exp(rng.normal(11.5, 1.0, n_cz * k))) + 1000.0
    seq = pd.Series(state).groupby(state).cumcount().to_numpy() + 1
    county = state * 1000 + seq
    return pd.DataFrame({"county": county, "cz": cz, "state": state, "latitude": lat,
                         "longitude": lon, "population": pop})


def cz_centroids(geography: pd.DataFrame) -> pd.DataFrame:
    """Population-weighted CZ centroids and CZ populations."""
    g = geography.assign(wlat=geography["latitude"] * geography["population"],
                         wlon=geography["longitude"] * geography["population"])
    agg = g.groupby("cz", sort=True)[["wlat", "wlon", "population"]].sum()
    return pd.DataFrame({"cz": agg.index, "latitude": agg["wlat"] / agg["population"],
                         "longitude": agg["wlon"] / agg["population"],
                         "population": agg["population"]}).reset_index(drop=True)


def expected_log_flows(config: DgpConfig, centroids: pd.DataFrame) -> np.ndarray:
    """Matrix [origin, destination] of gravity log flows (NaN on the diagonal)."""
    b0, b1, b2, b3 = config.gravity
    lat = centroids["latitude"].to_numpy()
    lon = centroids["longitude"].to_numpy()
    pop = centroids["population"].to_numpy()
    dist = great_circle_distance(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        L = b0 + b1 * np.log(pop)[:, None] + b2 * np.log(pop)[None, :] + b3 * np.log(dist)
    np.fill_diagonal(L, np.nan)
    return L


def generate_network(config: DgpConfig, rng: np.random.Generator, geography: pd.DataFrame):
    """CZ flows around the gravity law, their county split, and CZ centroids.

    Each destination receives flows from its ``n_feeders`` origins with the
    largest expected gravity flow. Returns ``(cz_flows, county_flows,
    centroids)``.
    """
    cents = cz_centroids(geography)
    L = expected_log_flows(config, cents)
    n = len(cents)
    cz = cents["cz"].to_numpy()
    k = min(config.n_feeders, n - 1)
    rows = []
    for j in range(n):
        col = np.where(np.isnan(L[:, j]), -np.inf, L[:, j])
        # stable sort on -value then origin index keeps ties deterministic
        top = np.lexsort((np.arange(n), -col))[:k]
        rows.append(np.column_stack([top, np.full(k, j)]))
    pairs = np.vstack(rows)
    log_flow = L[pairs[:, 0], pairs[:, 1]] + config.flow_noise * rng.standard_normal(len(pairs))
    cz_flows = pd.DataFrame({"origin": cz[pairs[:, 0]], "destination": cz[pairs[:, 1]],
                             "count": np.exp(log_flow)})
    cz_flows = cz_flows.sort_values(["origin", "destination"]).reset_index(drop=True)

    share = geography["population"] / geography.groupby("cz")["population"].transform("sum")
    parts = geography[["county", "cz"]].assign(share=share.to_numpy())
    f = cz_flows.merge(parts.rename(columns={"county": "o_county", "cz": "origin",
                                             "share": "s_o"}), on="origin")
    f = f.merge(parts.rename(columns={"county": "d_county", "cz": "destination",
                                      "share": "s_d"}), on="destination")
    county_flows = pd.DataFrame({"origin": f["o_county"], "destination": f["d_county"],
                                 "count": f["count"] * f["s_o"] * f["s_d"]})
    county_flows = county_flows.sort_values(["origin", "destination"]).reset_index(drop=True)
    return cz_flows, county_flows, cents


def _draw_covariates(rng, n):
    return pd.DataFrame({
        "loan_amount_k": np.exp(rng.normal(np.log(300.0), 0.4, n)),
        "income_k": np.exp(rng.normal(np.log(110.0), 0.4, n)),
        "dti": rng.uniform(15.0, 45.0, n),
        "points": rng.exponential(0.4, n),
        "refi": (rng.random(n) < 0.4).astype(float),
    })


@dataclass
class LoanTruth:
    lender_position: np.ndarray
    lender_shares: np.ndarray
    county_shift: pd.Series
    county_new_effect: pd.Series


def generate_loans(config: DgpConfig, rng: np.random.Generator, geography: pd.DataFrame):
    """Loans for all three vintages plus the pricing truth behind them.

    Shock-period (2020-2021) rates are a base rate plus the lender's position,
    a county shift, covariate effects and noise. 2024 rates follow
    ``new_base_rate + X' new_slopes + county effect + noise``.
    """
    counties = geography["county"].to_numpy()
    n_c, n_l = len(counties), config.n_lenders
    position = rng.normal(0.0, config.lender_rate_scale, n_l)
    # each state has its own lender mix; counties scatter around it
    states = geography["state"].to_numpy()
    uniq_states = np.unique(states)
    mix = rng.dirichlet(np.full(n_l, config.lender_share_concentration), len(uniq_states))
    mix = np.maximum(mix[np.searchsorted(uniq_states, states)], 1e-12)
    shares = np.vstack([rng.dirichlet(config.county_share_precision * n_l * m) for m in mix])
    shift = rng.normal(0.0, config.county_rate_shift_scale, n_c)
    new_effect = rng.normal(0.0, config.county_new_effect_scale, n_c)
    old_slopes = np.asarray(config.old_slopes)
    new_slopes = np.asarray(config.new_slopes)
    cum = np.cumsum(shares, axis=1)
    frames = []
    plan = [((2018, 2019), config.loans_pre), ((2020, 2021), config.loans_shock),
            ((2024,), config.loans_new)]
    for years, per_county in plan:
        n = n_c * per_county
        cidx = np.repeat(np.arange(n_c), per_county)
        u = rng.random(n)
        lender = np.minimum((u[:, None] > cum[cidx]).sum(axis=1), n_l - 1)
        year = np.asarray(years)[rng.integers(0, len(years), n)]
        X = _draw_covariates(rng, n)
        eps = rng.standard_normal(n)
        if years == (2024,):
            rate = (config.new_base_rate + X.to_numpy() @ new_slopes + new_effect[cidx]
                    + config.new_rate_noise * eps)
        else:
            rate = (config.old_base_rate + position[lender] + shift[cidx]
                    + X.to_numpy() @ old_slopes + config.old_rate_noise * eps)
        frame = pd.DataFrame({"county": counties[cidx], "lender": lender + 1, "vintage_year": year,
                              "annual_rate": np.maximum(rate, 1e-4),
                              "principal": np.round(X["loan_amount_k"].to_numpy() * 1000.0, 2)})
        frames.append(pd.concat([frame, X], axis=1))
    loans = pd.concat(frames, ignore_index=True)
    loans.insert(0, "loan_id", np.arange(1, len(loans) + 1))
    truth = LoanTruth(position, shares, pd.Series(shift, index=counties),
                      pd.Series(new_effect, index=counties))
    return loans, truth


def true_new_rates(config: DgpConfig, loans: pd.DataFrame, truth: LoanTruth) -> np.ndarray:
    """Noise-free 2024 pricing rule applied to ``loans``, floored at zero."""
    X = loans[COVARIATES].to_numpy(dtype=float)
    rate = (config.new_base_rate + X @ np.asarray(config.new_slopes)
            + loans["county"].map(truth.county_new_effect).to_numpy())
    return np.maximum(rate, 0.0)


def true_exposures(config: DgpConfig, loans: pd.DataFrame, truth: LoanTruth,
                   cz_flows: pd.DataFrame, geography: pd.DataFrame) -> pd.DataFrame:
    """Exposure table computed from the true pricing rule and realized flows.

    Adds ``confounder``: realized wop minus the wop implied by noise-free
    gravity flows on the same origin-destination support. It is the part of
    the wedge driven by idiosyncratic migration links, which the gravity and
    lender-predicted instrument excludes by construction.
    """
    shock = loans.loc[loans["vintage_year"].isin([2020, 2021])].sort_values("loan_id")
    cz_of = geography.set_index("county")["cz"]
    cz = shock["county"].map(cz_of).to_numpy()
    pay_new = monthly_payment(NORMALIZED_PRINCIPAL, true_new_rates(config, shock, truth),
                              NORMALIZED_TERM)
    pay_old = monthly_payment(NORMALIZED_PRINCIPAL, shock["annual_rate"].to_numpy(),
                              NORMALIZED_TERM)
    per_cz = pd.DataFrame({"cz": cz, "p_new": pay_new, "p_old": pay_old})
    means = per_cz.groupby("cz", sort=True).mean()
    weights = normalize_in_shares(cz_flows)
    wop = build_wop(weights, means["p_old"])
    out = build_mpw(means["p_new"], wop)
    out["p_old"] = out["cz"].map(means["p_old"]).to_numpy()

    cents = cz_centroids(geography)
    L = expected_log_flows(config, cents)
    pos = pd.Series(np.arange(len(cents)), index=cents["cz"])
    o = pos.loc[cz_flows["origin"].to_numpy()].to_numpy()
    d = pos.loc[cz_flows["destination"].to_numpy()].to_numpy()
    expected = cz_flows[["origin", "destination"]].assign(count=np.exp(L[o, d]))
    wop_expected = build_wop(normalize_in_shares(expected), means["p_old"])
    base = out["cz"].map(wop_expected).to_numpy(dtype=float)
    raw = out["wop"].to_numpy() - base
    # share normalization makes raw noise lean on the noise-free wop; keep the orthogonal part
    ok = np.isfinite(raw) & np.isfinite(base)
    conf = np.full(len(out), np.nan)
    if ok.sum() > 2:
        X = np.column_stack([np.ones(ok.sum()), base[ok]])
        coef = np.linalg.lstsq(X, raw[ok], rcond=None)[0]
        conf[ok] = raw[ok] - X @ coef
    out["confounder"] = conf
    return out


def _ar1(rng, n_units, n_t, rho, scale):
    e = np.empty((n_units, n_t))
    shocks = rng.standard_normal((n_units, n_t))
    e[:, 0] = shocks[:, 0]
    c = np.sqrt(1.0 - rho ** 2)
    for t in range(1, n_t):
        e[:, t] = rho * e[:, t - 1] + c * shocks[:, t]
    return scale * e


def _standardize(x):
    sd = np.std(x)
    return (x - np.mean(x)) / sd if sd > 0 else np.zeros_like(x)


def generate_panel(config: DgpConfig, exposures: pd.DataFrame, rng: np.random.Generator,
                   populations: pd.Series | None = None) -> pd.DataFrame:
    """CZ-year panel with linear outcomes and NB2 H-1B counts.

    ``college_inmig`` and ``h1b_new`` follow
    ``a_c + d_t + effect * (mpw_c - mean mpw) * post_t + controls'g + noise``
    with AR(1) noise within CZ; ``h1b_count`` is NB2 around
    ``exp(a_c + d_t + theta_count * (mpw_c - mean) * post_t + log emp_ct)``.
    ``endogeneity`` adds that many outcome units per SD of the confounder in
    the post period.
    """
    e = exposures.dropna(subset=["mpw"]).sort_values("cz").reset_index(drop=True)
    cz = e["cz"].to_numpy()
    years = np.asarray(config.years)
    n_c, n_t = len(cz), len(years)
    post = (years >= config.post_start).astype(float)
    mpw_c = e["mpw"].to_numpy() - e["mpw"].mean()
    conf = _standardize(e["confounder"].to_numpy()) if "confounder" in e else np.zeros(n_c)
    if populations is None:
        pop = np.full(n_c, 200_000.0)
    else:
        pop = pd.Series(populations).reindex(cz).to_numpy(dtype=float)
    g1, g2 = config.control_effects

    a_ctrl = rng.normal(0.0, 1.0, n_c)
    ctrl1 = a_ctrl[:, None] + rng.standard_normal((n_c, n_t))
    ctrl2 = rng.standard_normal((n_c, n_t))

    def linear(base, effect):
        a = base + rng.normal(0.0, config.cluster_effect_scale, n_c)
        d = rng.normal(0.0, 0.3, n_t)
        noise = _ar1(rng, n_c, n_t, config.cluster_noise_corr, config.outcome_noise)
        return (a[:, None] + d[None, :] + effect * mpw_c[:, None] * post[None, :]
                + g1 * ctrl1 + g2 * ctrl2 + config.endogeneity * conf[:, None] * post[None, :]
                + noise)

    college = linear(7.0, config.true_beta_migration)
    h1b_new = linear(1.0, config.true_theta_h1b)

    emp = (config.employment_ratio * pop[:, None]
           * np.exp(0.01 * (years - config.year_start))[None, :])
    a_cnt = np.log(config.base_h1b_rate) + rng.normal(0.0, 0.5, n_c)
    d_cnt = rng.normal(0.0, 0.1, n_t)
    mu = np.exp(a_cnt[:, None] + d_cnt[None, :]
                + config.true_theta_count * mpw_c[:, None] * post[None, :] + np.log(emp))
    if config.dispersion > 0:
        lam = rng.gamma(1.0 / config.dispersion, config.dispersion * mu)
    else:
        lam = mu
    counts = rng.poisson(lam)

    grid_c = np.repeat(cz, n_t)
    return pd.DataFrame({
        "unit": grid_c, "period": np.tile(years, n_c), "cluster": grid_c,
        "college_inmig": college.ravel(), "h1b_new": h1b_new.ravel(),
        "h1b_count": counts.ravel().astype(np.int64),
        "h1b_rate": (1000.0 * counts / emp).ravel(),
        "log_emp": np.log(emp).ravel(), "ctrl1": ctrl1.ravel(), "ctrl2": ctrl2.ravel(),
    })


def generate_bartik_inputs(config: DgpConfig, rng: np.random.Generator, czs) -> tuple:
    """Baseline CZ-SOC shares and national SOC employment by year."""
    czs = np.asarray(sorted(czs))
    socs = np.arange(1, config.n_soc + 1)
    shares = rng.dirichlet(np.full(config.n_soc, 2.0), len(czs))
    base = pd.DataFrame({"cz": np.repeat(czs, config.n_soc), "soc": np.tile(socs, len(czs)),
                         "share": shares.ravel()})
    years = np.asarray(config.years)
    level = np.log(1e6 * rng.uniform(1.0, 10.0, config.n_soc))
    growth = rng.normal(config.bartik_growth_mean, config.bartik_growth_sd, config.n_soc)
    log_emp = (level[:, None] + growth[:, None] * (years - config.year_start)[None, :]
               + config.bartik_noise * rng.standard_normal((config.n_soc, len(years))))
    national = pd.DataFrame({"soc": np.repeat(socs, len(years)), "year": np.tile(years, config.n_soc),
                             "emp": np.exp(log_emp).ravel()})
    return base, national


def generate_soc_panel(config: DgpConfig, exposures: pd.DataFrame, rng: np.random.Generator,
                       bartik: pd.DataFrame) -> pd.DataFrame:
    """CZ-SOC-year panel with the triple interaction and three two-way FE sets.

    ``h1b_soc = a_ct + a_cs + a_st + triple * mpw~ * post * b + p1 b + p2 post b
    + p3 mpw~ b + noise`` where mpw~ is the demeaned wedge and noise is AR(1)
    within CZ-SOC cells.
    """
    e = exposures.dropna(subset=["mpw"]).set_index("cz")
    panel = bartik.loc[bartik["cz"].isin(e.index)].sort_values(["cz", "soc", "year"])
    panel = panel.reset_index(drop=True)
    czs = np.sort(panel["cz"].unique())
    socs = np.sort(panel["soc"].unique())
    years = np.sort(panel["year"].unique())
    n_c, n_s, n_t = len(czs), len(socs), len(years)
    if len(panel) != n_c * n_s * n_t:
        raise InvalidInputError("bartik cells must form a balanced CZ x SOC x year grid")
    ci = np.searchsorted(czs, panel["cz"].to_numpy())
    si = np.searchsorted(socs, panel["soc"].to_numpy())
    ti = np.searchsorted(years, panel["year"].to_numpy())
    mpw_raw = e.loc[czs, "mpw"].to_numpy()
    mpw_c = (mpw_raw - mpw_raw.mean())[ci]
    post = (panel["year"].to_numpy() >= config.post_start).astype(float)
    b = panel["b"].to_numpy()
    s = config.soc_fe_scale
    a_ct = rng.normal(0.0, s, (n_c, n_t))[ci, ti]
    a_cs = rng.normal(0.0, s, (n_c, n_s))[ci, si]
    a_st = rng.normal(0.0, s, (n_s, n_t))[si, ti]
    noise = _ar1(rng, n_c * n_s, n_t, config.cluster_noise_corr, config.soc_noise)
    noise = noise[ci * n_s + si, ti]
    p1, p2, p3 = config.triple_lower_order
    y = (2.0 + a_ct + a_cs + a_st + config.true_triple * mpw_c * post * b
         + p1 * b + p2 * post * b + p3 * mpw_c * b + noise)
    return pd.DataFrame({"unit": panel["cz"].to_numpy(), "group": panel["soc"].to_numpy(),
                         "period": panel["year"].to_numpy(), "cluster": panel["cz"].to_numpy(),
                         "h1b_soc": y, "b": b})


@dataclass
class SyntheticWorld:
    config: DgpConfig
    geography: pd.DataFrame
    loans: pd.DataFrame
    loan_truth: LoanTruth
    cz_flows: pd.DataFrame
    flows: pd.DataFrame
    centroids: pd.DataFrame
    crosswalk: pd.DataFrame
    exposures: pd.DataFrame
    bartik: pd.DataFrame
    baseline_shares: pd.DataFrame
    national_emp: pd.DataFrame
    panel: pd.DataFrame
    soc_panel: pd.DataFrame
    truth: dict = field(default_factory=dict)

    @property
    def cz_map(self) -> pd.Series:
        return self.geography.set_index("county")["cz"]

    @property
    def populations(self) -> pd.Series:
        return self.centroids.set_index("cz")["population"]


def truth_record(config: DgpConfig) -> dict:
    """Flat name -> value record of the generating parameters."""
    rec = {}
    for k, v in asdict(config).items():
        if isinstance(v, (tuple, list)):
            for i, x in enumerate(v):
                rec[f"{k}[{i}]"] = x
        else:
            rec[k] = v
    return rec


def generate_world(config: DgpConfig | None = None, with_panels: bool = True) -> SyntheticWorld:
    """Build a complete synthetic world from ``config`` (deterministic in master_seed)."""
    config = config or DgpConfig()
    rngs = streams(config)
    geo = generate_geography(config, rngs["geography"])
    cz_flows, flows, cents = generate_network(config, rngs["network"], geo)
    loans, ltruth = generate_loans(config, rngs["loans"], geo)
    exposures = true_exposures(config, loans, ltruth, cz_flows, geo)
    czs = exposures.dropna(subset=["mpw"])["cz"]
    base, national = generate_bartik_inputs(config, rngs["bartik"], czs)
    bartik = build_bartik(base, national, config.baseline_years)
    crosswalk = pd.DataFrame({"county": geo["county"], "cz": geo["cz"], "weight": 1.0})
    panel = soc = pd.DataFrame()
    if with_panels:
        panel = generate_panel(config, exposures, rngs["panel"], cents.set_index("cz")["population"])
        soc = generate_soc_panel(config, exposures, rngs["soc_panel"], bartik)
    return SyntheticWorld(config, geo, loans, ltruth, cz_flows, flows, cents, crosswalk, exposures,
                          bartik, base, national, panel, soc, truth_record(config))
