"""Wedge construction, its decomposition, placebo permutations and instruments."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import pandas as pd

from mpwedge.errors import InsufficientDataError, InvalidInputError
from mpwedge.estimation.absorb import Absorber
from mpwedge.mortgage import NORMALIZED_PRINCIPAL, NORMALIZED_TERM, monthly_payment

log = logging.getLogger(__name__)

MISSING_POLICIES = ("renormalize", "missing")
BIN_LABELS = ["nonpositive", "low", "mid", "high"]


def _as_series(values, name: str) -> pd.Series:
    """Accept a Series keyed by CZ or a DataFrame with ``cz`` and ``name`` columns."""
    if isinstance(values, pd.DataFrame):
        return values.set_index("cz")[name]
    if isinstance(values, pd.Series):
        return values
    return pd.Series(values)


def build_wop(weights: pd.DataFrame, p_old, policy: str = "renormalize") -> pd.Series:
    """Migration-weighted origin payment for each destination.

    ``p_old`` maps origin CZ to payment (Series, dict, or frame with
    ``cz, p_old``). Origins without a payment are handled by ``policy``:
    ``renormalize`` drops them and rescales the remaining weights,
    ``missing`` marks the destination missing.
    """
    if policy not in MISSING_POLICIES:
        raise InvalidInputError(f"policy must be one of {MISSING_POLICIES}")
    pay = _as_series(p_old, "p_old")
    w = weights.loc[weights["origin"] != weights["destination"]].copy()
    w["pay"] = w["origin"].map(pay).to_numpy(dtype=float)
    has = np.isfinite(w["pay"].to_numpy())
    dests = pd.Index(sorted(w["destination"].unique()), name="cz")
    if not has.all():
        n_bad = int(w.loc[~has, "destination"].nunique())
        log.info("build_wop: %d destinations have origins without payments (policy=%s)",
                 n_bad, policy)
    if policy == "missing":
        bad = set(w.loc[~has, "destination"])
    else:
        bad = set()
    w = w.loc[has]
    w = w.sort_values(["destination", "origin"], kind="stable")
    w["wp"] = w["weight"] * w["pay"]
    grouped = w.groupby("destination", sort=True)
    out = (grouped["wp"].sum() / grouped["weight"].sum()).reindex(dests)
    if bad:
        out.loc[sorted(bad)] = np.nan
    out.name = "wop"
    return out


def build_predicted_wop(gravity_shares: pd.DataFrame, predicted_p_old,
                        policy: str = "renormalize") -> pd.Series:
    """Instrument: gravity-predicted shares applied to predicted origin payments."""
    out = build_wop(gravity_shares, predicted_p_old, policy)
    out.name = "predicted_wop"
    return out


def build_mpw(p_new, wop, predicted_wop=None) -> pd.DataFrame:
    """Exposure table ``cz, p_new, wop, mpw, predicted_wop`` with mpw = p_new - wop."""
    pn = _as_series(p_new, "p_new").astype(float)
    wo = _as_series(wop, "wop").astype(float)
    idx = pn.index.union(wo.index).sort_values()
    out = pd.DataFrame({"cz": idx})
    out["p_new"] = pn.reindex(idx).to_numpy()
    out["wop"] = wo.reindex(idx).to_numpy()
    out["mpw"] = out["p_new"] - out["wop"]
    if predicted_wop is not None:
        out["predicted_wop"] = _as_series(predicted_wop, "predicted_wop").reindex(idx).to_numpy(
            dtype=float)
    else:
        out["predicted_wop"] = np.nan
    return out


@dataclass(frozen=True)
class VarianceDecomposition:
    var_mpw: float
    var_pnew: float
    var_wop: float
    cov_term: float
    corr: float
    n: int

    def as_dict(self) -> dict:
        return {"var_mpw": self.var_mpw, "var_pnew": self.var_pnew, "var_wop": self.var_wop,
                "cov_term": self.cov_term, "corr": self.corr, "n": self.n}


def variance_decomposition(exposures: pd.DataFrame) -> VarianceDecomposition:
    """Var(mpw) = Var(p_new) + Var(wop) - 2 Cov(p_new, wop) over complete rows."""
    e = exposures.dropna(subset=["p_new", "wop"])
    if len(e) < 2:
        raise InsufficientDataError("variance decomposition needs at least two complete rows")
    p = e["p_new"].to_numpy(dtype=float)
    w = e["wop"].to_numpy(dtype=float)
    C = np.cov(np.vstack([p, w]), ddof=1)
    var_mpw = float(np.var(p - w, ddof=1))
    denom = np.sqrt(C[0, 0] * C[1, 1])
    corr = float(C[0, 1] / denom) if denom > 0 else float("nan")
    return VarianceDecomposition(var_mpw, float(C[0, 0]), float(C[1, 1]), float(-2.0 * C[0, 1]),
                                 corr, len(e))


def placebo_seeds(master_seed: int, n: int) -> list[np.random.SeedSequence]:
    """Child seeds for ``n`` replications: ``SeedSequence(master_seed).spawn(n)``.

    Replication r always uses child r, so results do not depend on the order in
    which replications run.
    """
    return np.random.SeedSequence(master_seed).spawn(n)


def permute_wop(exposures: pd.DataFrame, seed) -> pd.DataFrame:
    """Shuffle wop across destinations with a defined wedge; recompute mpw.

    ``seed`` is anything :func:`numpy.random.default_rng` accepts.
    """
    out = exposures.copy()
    ok = out[["p_new", "wop"]].notna().all(axis=1).to_numpy()
    rng = np.random.default_rng(seed)
    vals = out.loc[ok, "wop"].to_numpy()
    out.loc[ok, "wop"] = vals[rng.permutation(len(vals))]
    out["mpw"] = out["p_new"] - out["wop"]
    return out


def centered_p_value(actual: float, placebos) -> float:
    """Two-sided p-value of ``actual`` against placebo draws centered at their mean.

    p = (1 + #{r: |placebo_r - m| >= |actual - m|}) / (R + 1).
    """
    pl = np.asarray(placebos, dtype=float)
    if pl.size == 0:
        raise InvalidInputError("at least one placebo draw is required")
    m = pl.mean()
    dist = np.abs(actual - m)
    # relative slack so that ties survive floating-point noise in the centering
    slack = 1e-12 * max(dist, np.abs(pl - m).max(), 1e-300)
    hits = int(np.sum(np.abs(pl - m) >= dist - slack))
    return (1 + hits) / (pl.size + 1)


@dataclass
class LeaveOutResult:
    """Output of the lender leave-out construction.

    ``predictions`` maps county to predicted origin payment (a deviation from
    the state-average pricing position); ``positions`` holds lambda by lender
    and state with shock-period counts; ``leaveout`` holds q by lender and
    leave-out state.
    """

    predictions: pd.Series
    coverage: pd.Series
    positions: pd.DataFrame
    leaveout: pd.DataFrame
    slopes: pd.Series
    omitted_counties: list = field(default_factory=list)


def fips_state(county) -> object:
    """State code of a 5-digit county FIPS code (leading two digits)."""
    return int(county) // 1000


def lender_leaveout_payments(loans_pre: pd.DataFrame, loans_shock: pd.DataFrame,
                             covariates: list[str] | None = None, min_out_of_state: int = 50,
                             coverage_floor: float = 0.70,
                             state_of: Callable | pd.Series | dict | None = None) -> LeaveOutResult:
    """Lender-predicted origin payments by county from out-of-state pricing.

    1. County lender shares from ``loans_pre``.
    2. On ``loans_shock``, regress the normalized payment on covariates with
       county, state-year and lender-by-state effects.
    3. Normalize lender-by-state effects to loan-weighted mean zero within state.
    4. For lender L and state k, average the effects over states other than k
       (loan-count weights), requiring ``min_out_of_state`` loans.
    5. Predict each county as the share-weighted sum of its lenders' leave-out
       averages for its own state; keep counties whose lenders with a defined
       average cover at least ``coverage_floor`` of pre-period loans.
    """
    if state_of is None:
        state_of = fips_state
    mapper = state_of if callable(state_of) else pd.Series(state_of).get
    covariates = list(covariates or [])

    def states(counties):
        return counties.map(mapper)

    # step 1
    pre = loans_pre[["county", "lender"]].copy()
    pre["state"] = states(pre["county"])
    shares = pre.groupby(["county", "lender"]).size().rename("n").reset_index()
    shares["share"] = shares["n"] / shares.groupby("county")["n"].transform("sum")

    # step 2
    shock = loans_shock.sort_values("loan_id", kind="stable").reset_index(drop=True)
    shock_state = states(shock["county"])
    if shock_state.isna().any() or pre["state"].isna().any():
        raise InvalidInputError("state could not be resolved for every loan")
    pay = monthly_payment(NORMALIZED_PRINCIPAL, shock["annual_rate"].to_numpy(dtype=float),
                          NORMALIZED_TERM)
    ls = pd.MultiIndex.from_arrays([shock["lender"], shock_state])
    ls_codes, ls_index = pd.factorize(ls, sort=True)
    sy_codes, _ = pd.factorize(pd.MultiIndex.from_arrays([shock_state, shock["vintage_year"]]),
                               sort=True)
    c_codes, _ = pd.factorize(shock["county"], sort=True)
    absorber = Absorber([np.asarray(c_codes), np.asarray(sy_codes), np.asarray(ls_codes)])
    if covariates:
        X = shock[covariates].to_numpy(dtype=float)
        dm = absorber.demean(np.column_stack([pay, X]))
        beta = np.linalg.lstsq(dm[:, 1:], dm[:, 0], rcond=None)[0]
        resid = pay - X @ beta
    else:
        beta = np.zeros(0)
        resid = pay
    effects = absorber.recover_effects(resid)
    lam = effects[2]

    # step 3
    pos = pd.DataFrame({"lender": ls_index.get_level_values(0),
                        "state": ls_index.get_level_values(1),
                        "n": np.bincount(ls_codes, minlength=len(ls_index)),
                        "raw": lam})
    wmean = (pos["raw"] * pos["n"]).groupby(pos["state"]).sum() / pos.groupby("state")["n"].sum()
    pos["lambda"] = pos["raw"] - pos["state"].map(wmean)

    # step 4
    all_states = sorted(set(pos["state"]) | set(pre["state"]))
    tot_n = pos.groupby("lender")["n"].sum()
    tot_nl = (pos["n"] * pos["lambda"]).groupby(pos["lender"]).sum()
    rows = []
    for k in all_states:
        in_k = pos.loc[pos["state"] == k].set_index("lender")
        n_out = tot_n.sub(in_k["n"], fill_value=0.0)
        nl_out = tot_nl.sub(in_k["n"] * in_k["lambda"], fill_value=0.0)
        ok = n_out >= min_out_of_state
        q = (nl_out / n_out.where(n_out > 0)).where(ok)
        rows.append(pd.DataFrame({"lender": tot_n.index, "state": k, "n_out": n_out.to_numpy(),
                                  "q": q.to_numpy()}))
    leave = pd.concat(rows, ignore_index=True)

    # step 5
    shares["state"] = states(shares["county"])
    s = shares.merge(leave[["lender", "state", "q"]], on=["lender", "state"], how="left")
    s["has_q"] = s["q"].notna()
    s["sq"] = (s["share"] * s["q"]).fillna(0.0)
    cov = s.loc[s["has_q"]].groupby("county")["share"].sum().reindex(
        sorted(shares["county"].unique()), fill_value=0.0)
    pred = s.groupby("county")["sq"].sum().reindex(cov.index)
    keep = cov >= coverage_floor - 1e-12
    omitted = cov.index[~keep].tolist()
    if omitted:
        log.info("lender leave-out: %d counties below coverage floor %.2f", len(omitted),
                 coverage_floor)
    pred = pred.loc[keep]
    pred.index.name = "county"
    pred.name = "predicted_p_old"
    return LeaveOutResult(predictions=pred, coverage=cov, positions=pos, leaveout=leave,
                          slopes=pd.Series(beta, index=covariates, dtype=float),
                          omitted_counties=omitted)


def aggregate_county_predictions(predictions: pd.Series, loans_pre: pd.DataFrame, cz_map) -> pd.Series:
    """Average county predictions to CZs with pre-period loan-count weights."""
    cz_map = pd.Series(cz_map) if not isinstance(cz_map, pd.Series) else cz_map
    n = loans_pre.groupby("county").size()
    df = pd.DataFrame({"pred": predictions})
    df["n"] = n.reindex(df.index).fillna(0.0).to_numpy()
    df["cz"] = df.index.map(cz_map)
    df = df.loc[df["cz"].notna() & (df["n"] > 0)]
    df["wp"] = df["pred"] * df["n"]
    g = df.groupby("cz", sort=True)
    out = g["wp"].sum() / g["n"].sum()
    out.name = "predicted_p_old"
    return out


def build_bartik(baseline_shares: pd.DataFrame, national_emp: pd.DataFrame,
                 baseline_years) -> pd.DataFrame:
    """SOC Bartik shocks in percentage points, demeaned over the full panel.

    ``baseline_shares`` has ``cz, soc, share``; ``national_emp`` has
    ``soc, year, emp``. The raw shock is
    100 * share_cs * (log emp_st - mean over baseline years of log emp_s).
    """
    emp = national_emp.copy()
    if (emp["emp"] <= 0).any() or emp["emp"].isna().any():
        raise InvalidInputError("national employment must be positive in every cell")
    emp["log_emp"] = np.log(emp["emp"].astype(float))
    base_years = list(baseline_years)
    base = emp.loc[emp["year"].isin(base_years)].groupby("soc")["log_emp"].mean()
    missing = set(emp["soc"]) - set(base.index)
    if missing:
        raise InvalidInputError(f"no baseline-year employment for SOC groups {sorted(missing)}")
    emp["growth"] = emp["log_emp"] - emp["soc"].map(base)
    cells = baseline_shares[["cz", "soc", "share"]].merge(emp[["soc", "year", "growth"]], on="soc")
    cells["b_raw"] = 100.0 * cells["share"] * cells["growth"]
    cells["b"] = cells["b_raw"] - cells["b_raw"].mean()
    cells = cells.sort_values(["cz", "soc", "year"], kind="stable").reset_index(drop=True)
    return cells[["cz", "soc", "year", "b_raw", "b"]]


def bin_positive_terciles(shocks) -> pd.Categorical:
    """Assign nonpositive shocks to a reference bin and split positives into terciles.

    Cut points are the 33.3 and 66.7 percentiles (linear interpolation) of the
    positive values; values equal to a cut point go to the lower bin.
    """
    b = np.asarray(shocks, dtype=float)
    codes = np.zeros(len(b), dtype=int)
    pos = b > 0
    if pos.any():
        q1, q2 = np.percentile(b[pos], [100.0 / 3.0, 200.0 / 3.0])
        codes[pos] = np.where(b[pos] <= q1, 1, np.where(b[pos] <= q2, 2, 3))
    return pd.Categorical.from_codes(codes, categories=BIN_LABELS)


def offset_ratio(beta_migration: float, theta_h1b: float, e_bar: float = 0.45) -> float:
    """H-1B response per deterred domestic in-migrant: e_bar * theta / |beta|."""
    if beta_migration == 0:
        raise InvalidInputError("beta_migration must be nonzero")
    return e_bar * theta_h1b / abs(beta_migration)
