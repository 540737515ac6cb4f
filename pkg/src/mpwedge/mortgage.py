"""Fixed-rate amortization, the 2024 pricing model and CZ payment aggregates.

Payments throughout are principal-and-interest per month on a $100,000,
360-month loan unless stated otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from mpwedge.errors import InsufficientDataError, InvalidInputError, RankError
from mpwedge.estimation.linear import check_rank

NORMALIZED_PRINCIPAL = 100_000.0
NORMALIZED_TERM = 360
LOAN_COLUMNS = ["loan_id", "county", "lender", "vintage_year", "annual_rate", "principal"]


def monthly_payment(principal, annual_rate, term_months=NORMALIZED_TERM):
    """Level monthly payment that amortizes ``principal`` over ``term_months``.

    Vectorized over all arguments. A zero rate gives principal / term.
    """
    L = np.asarray(principal, dtype=float)
    r = np.asarray(annual_rate, dtype=float)
    n = np.asarray(term_months, dtype=float)
    if np.any(L <= 0):
        raise InvalidInputError("principal must be positive")
    if np.any(n < 1):
        raise InvalidInputError("term_months must be at least 1")
    if np.any(r < 0) or np.any(~np.isfinite(r)):
        raise InvalidInputError("annual_rate must be finite and nonnegative")
    i = r / 12.0
    with np.errstate(divide="ignore", invalid="ignore"):
        # expm1/log1p keep precision as i -> 0
        growth = np.exp(n * np.log1p(i))
        pay = L * i * growth / np.expm1(n * np.log1p(i))
    out = np.where(i == 0, L / n, pay)
    return out.item() if out.ndim == 0 else out


def present_value_of_wedge(monthly_amount, annual_discount, years):
    """Present value of a constant monthly amount paid for ``years`` years.

    Discounts monthly at ``annual_discount / 12``.
    """
    A = np.asarray(monthly_amount, dtype=float)
    d = np.asarray(annual_discount, dtype=float)
    T = np.asarray(years, dtype=float)
    if np.any(d <= 0):
        raise InvalidInputError("annual_discount must be positive")
    if np.any(T < 0):
        raise InvalidInputError("years must be nonnegative")
    m = d / 12.0
    out = A * (1.0 - (1.0 + m) ** (-12.0 * T)) / m
    return out.item() if out.ndim == 0 else out


@dataclass
class PricingModel:
    """Fitted rate_i = intercept + X_i' slopes + county_effect[c(i)]."""

    slopes: pd.Series
    county_effects: pd.Series
    intercept: float
    penalty: float
    means: pd.Series
    scales: pd.Series
    standardized_slopes: pd.Series
    diagnostics: dict = field(default_factory=dict)

    @property
    def covariates(self) -> list[str]:
        return list(self.slopes.index)

    def predict(self, loans: pd.DataFrame, floor: float | None = 0.0) -> pd.Series:
        """Predicted annual rate per loan; NaN where the county has no effect."""
        X = loans[self.covariates].to_numpy(dtype=float)
        effect = loans["county"].map(self.county_effects).to_numpy(dtype=float)
        rate = self.intercept + X @ self.slopes.to_numpy() + effect
        if floor is not None:
            rate = np.where(np.isnan(rate), rate, np.maximum(rate, floor))
        return pd.Series(rate, index=loans.index, name="predicted_rate")


def covariate_columns(loans: pd.DataFrame) -> list[str]:
    """Columns after the fixed loans.csv header are covariates."""
    return [c for c in loans.columns if c not in LOAN_COLUMNS]


def fit_pricing_model(loans: pd.DataFrame, penalty: float = 1.0,
                      covariates: list[str] | None = None) -> PricingModel:
    """Ridge pricing regression with county effects absorbed by demeaning.

    Covariates are standardized (population SD) before penalization and only
    slopes are penalized. ``penalty=0`` is ordinary least squares with county
    dummies. Counties with fewer than two loans are excluded.
    """
    if penalty < 0:
        raise InvalidInputError("penalty must be nonnegative")
    covariates = covariate_columns(loans) if covariates is None else list(covariates)
    if loans[covariates + ["annual_rate"]].isna().any().any():
        raise InvalidInputError("covariates and rates must be complete")
    counts = loans["county"].value_counts()
    small = sorted(counts.index[counts < 2].tolist())
    train = loans.loc[loans["county"].isin(counts.index[counts >= 2])]
    if train.empty:
        raise InsufficientDataError("no county has at least two loans")
    train = train.sort_values("loan_id", kind="stable")
    X = train[covariates].to_numpy(dtype=float)
    r = train["annual_rate"].to_numpy(dtype=float)
    means = X.mean(axis=0)
    scales = X.std(axis=0)
    flat = [c for c, s in zip(covariates, scales) if not s > 0]
    if flat:
        raise RankError(f"covariates without variation: {flat}", flat)
    Z = (X - means) / scales
    codes, _ = pd.factorize(train["county"], sort=True)
    cnt = np.bincount(codes)
    Zc = Z - (np.apply_along_axis(lambda z: np.bincount(codes, z), 0, Z) / cnt[:, None])[codes]
    rc = r - (np.bincount(codes, r) / cnt)[codes]
    if penalty == 0:
        check_rank(Zc, covariates, Z, "pricing design")
    A = Zc.T @ Zc + penalty * np.eye(len(covariates))
    b_std = np.linalg.solve(A, Zc.T @ rc)
    slopes = b_std / scales
    level = r - X @ slopes
    intercept = float(level.mean())
    county_level = pd.Series(level).groupby(train["county"].to_numpy()).mean()
    return PricingModel(
        slopes=pd.Series(slopes, index=covariates),
        county_effects=county_level - intercept,
        intercept=intercept,
        penalty=float(penalty),
        means=pd.Series(means, index=covariates),
        scales=pd.Series(scales, index=covariates),
        standardized_slopes=pd.Series(b_std, index=covariates),
        diagnostics={"n_loans": int(len(train)), "excluded_counties": small},
    )


def _aggregate(loans: pd.DataFrame, payments: np.ndarray, cz_map, value: str) -> pd.DataFrame:
    cz_map = pd.Series(cz_map) if not isinstance(cz_map, pd.Series) else cz_map
    cz = loans["county"].map(cz_map)
    usable = np.isfinite(payments) & cz.notna().to_numpy()
    frame = pd.DataFrame({"loan_id": loans["loan_id"].to_numpy(), "cz": cz.to_numpy(),
                          value: payments})
    frame = frame.loc[usable].sort_values("loan_id", kind="stable")
    agg = frame.groupby("cz", sort=True)[value].agg(["mean", "size"])
    universe = pd.Index(sorted(pd.unique(cz_map.to_numpy())), name="cz")
    agg = agg.reindex(universe)
    out = pd.DataFrame({"cz": universe, value: agg["mean"].to_numpy(),
                        "n_loans": agg["size"].fillna(0).astype(int).to_numpy()})
    skipped = loans.loc[~usable, "loan_id"].tolist()
    out.attrs["skipped_loans"] = skipped
    out.attrs["n_skipped"] = len(skipped)
    return out


def compute_p_new(model: PricingModel, loans: pd.DataFrame, cz_map) -> pd.DataFrame:
    """Mean counterfactual 2024 payment of each CZ's loans, per $100k over 360 months.

    Loans whose county lacks a fitted effect (or a CZ) are skipped and listed in
    ``attrs["skipped_loans"]``; CZs with no usable loan get NaN.
    """
    rate = model.predict(loans).to_numpy()
    pay = np.full(len(loans), np.nan)
    ok = np.isfinite(rate)
    if ok.any():
        pay[ok] = monthly_payment(NORMALIZED_PRINCIPAL, rate[ok], NORMALIZED_TERM)
    return _aggregate(loans, pay, cz_map, "p_new")


def compute_p_old(loans: pd.DataFrame, cz_map) -> pd.DataFrame:
    """Mean normalized payment at each loan's actual contract rate, by CZ."""
    rate = loans["annual_rate"].to_numpy(dtype=float)
    pay = np.full(len(loans), np.nan)
    ok = np.isfinite(rate)
    if ok.any():
        pay[ok] = monthly_payment(NORMALIZED_PRINCIPAL, rate[ok], NORMALIZED_TERM)
    return _aggregate(loans, pay, cz_map, "p_old")
