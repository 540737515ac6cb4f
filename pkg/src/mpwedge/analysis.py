"""Estimation designs built on exposures: DiD panels, placebos, top-K paths."""

from __future__ import annotations

import numpy as np
import pandas as pd

from mpwedge.errors import InvalidInputError
from mpwedge.estimation import (EstimateReport, ModelSpec, PanelDataset, add_event_time_terms,
                                apply_sample, fit_fe_ols, transform_outcome)
from mpwedge.estimation.absorb import Absorber
from mpwedge.estimation.linear import check_rank
from mpwedge.exposure import build_mpw, build_wop, centered_p_value, placebo_seeds
from mpwedge.network import coverage, truncate_top_k

EXPOSURE_COLUMNS = ["p_new", "wop", "mpw", "predicted_wop"]


def attach_exposures(frame: pd.DataFrame, exposures: pd.DataFrame, post_start: int,
                     unit: str = "unit", period: str = "period") -> pd.DataFrame:
    """Merge exposure columns onto panel rows by unit and add ``post``.

    Also adds ``predicted_mpw = p_new - predicted_wop`` when an instrument is
    present. Existing exposure columns in ``frame`` are replaced.
    """
    e = exposures.set_index("cz")
    out = frame.drop(columns=[c for c in EXPOSURE_COLUMNS + ["predicted_mpw", "post"]
                              if c in frame], errors="ignore").copy()
    for col in EXPOSURE_COLUMNS:
        if col in e:
            out[col] = out[unit].map(e[col]).to_numpy(dtype=float)
    if "predicted_wop" in out:
        out["predicted_mpw"] = out["p_new"] - out["predicted_wop"]
    out["post"] = (out[period] >= post_start).astype(float)
    return out


def baseline_spec(outcome: str, controls=(), cluster: str = "cluster", **kw) -> ModelSpec:
    """MPW x Post with unit and period effects, clustered by ``cluster``."""
    return ModelSpec(outcome=outcome, regressors=["mpw:post", *controls], fe=["unit", "period"],
                     cluster=cluster, **kw)


def event_study(data: PanelDataset, spec: ModelSpec, exposure: str, reference) -> tuple[EstimateReport, pd.DataFrame]:
    """Exposure x period indicators (reference omitted) plus ``spec``'s other terms.

    ``spec.regressors`` should hold only controls; the exposure-by-period
    terms are added here. Returns the report and a table
    ``year, coef, se, ci_lo, ci_hi, reference`` with a zero row for the
    reference period.
    """
    data = apply_sample(data, spec.sample)
    aug, terms = add_event_time_terms(data, exposure, reference)
    es_spec = ModelSpec(**{**spec.__dict__, "regressors": terms + list(spec.regressors),
                           "sample": {}})
    report = fit_fe_ols(es_spec, aug)
    periods = sorted(data.frame[data.period].unique())
    rows = []
    it = iter(terms)
    for t in periods:
        if t == reference:
            rows.append((t, 0.0, 0.0, 1))
        else:
            name = next(it)
            rows.append((t, report[name], report.se_of(name), 0))
    table = pd.DataFrame(rows, columns=["year", "coef", "se", "reference"])
    table["ci_lo"] = table["coef"] - 1.96 * table["se"]
    table["ci_hi"] = table["coef"] + 1.96 * table["se"]
    return report, table[["year", "coef", "se", "ci_lo", "ci_hi", "reference"]]


def placebo_coefficients(data: PanelDataset, exposures: pd.DataFrame, spec: ModelSpec, n_perm: int,
                         master_seed: int, term: str = "mpw:post") -> dict:
    """Re-estimate ``term``'s coefficient with wop shuffled across destinations.

    Replication r shuffles wop with generator ``default_rng(child_r)`` where
    ``child_r`` is the r-th spawn of ``SeedSequence(master_seed)``; p_new stays
    fixed. ``term`` must be ``mpw`` times other panel columns. All
    replications are estimated together through the same fixed-effect
    projection, which is algebraically the per-replication FE-OLS fit.
    Returns the actual coefficient, the placebo draws and the centered p-value.
    """
    parts = term.split(":")
    if parts[0] != "mpw":
        raise InvalidInputError("placebo term must start with the 'mpw' column")
    if term not in spec.regressors:
        raise InvalidInputError(f"placebo term {term!r} not among the spec's regressors")
    if spec.estimator != "fe_ols":
        raise InvalidInputError("placebo re-estimation supports fe_ols specs")
    others = [r for r in spec.regressors if r != term]
    data = apply_sample(data, spec.sample)
    df = data.frame
    y = transform_outcome(data.column(spec.outcome), spec.transform)
    W = np.column_stack([data.column(r) for r in others]) if others else np.empty((len(df), 0))
    mult = np.ones(len(df))
    for p in parts[1:]:
        mult = mult * data.column(p)

    e = exposures.sort_values("cz").reset_index(drop=True)
    ok_e = e[["p_new", "wop"]].notna().all(axis=1).to_numpy()
    pos = pd.Series(np.arange(len(e)), index=e["cz"])
    row_pos = df[data.unit].map(pos).to_numpy(dtype=float)
    ok = np.isfinite(y) & np.isfinite(row_pos) & np.all(np.isfinite(W), axis=1) & np.isfinite(mult)
    ok[ok] &= ok_e[row_pos[ok].astype(int)]
    sub = data.with_frame(df.loc[ok].reset_index(drop=True))
    y, W, mult, row_pos = y[ok], W[ok], mult[ok], row_pos[ok].astype(int)

    p_new = e["p_new"].to_numpy()
    wop = e["wop"].to_numpy()
    idx_ok = np.flatnonzero(ok_e)
    seeds = placebo_seeds(master_seed, n_perm)
    X = np.empty((len(y), n_perm + 1))
    X[:, 0] = (p_new - wop)[row_pos] * mult
    for r, s in enumerate(seeds, start=1):
        perm = np.random.default_rng(s).permutation(len(idx_ok))
        wop_r = wop.copy()
        wop_r[idx_ok] = wop[idx_ok][perm]
        X[:, r] = (p_new - wop_r)[row_pos] * mult

    w = sub.weights()
    if spec.fe:
        absorber = Absorber([sub.key_codes(k) for k in spec.fe], w)
        dm = absorber.demean(np.column_stack([y, W, X]))
    else:
        W = np.column_stack([np.ones(len(y)), W])
        dm = np.column_stack([y, W, X])
    k = W.shape[1]
    yd, Wd, Xd = dm[:, 0], dm[:, 1:1 + k], dm[:, 1 + k:]
    sw = np.ones(len(yd)) if w is None else np.sqrt(w)
    yd, Wd, Xd = yd * sw, Wd * sw[:, None], Xd * sw[:, None]
    if k:
        check_rank(np.column_stack([Xd[:, 0], Wd]), [term] + others)
        Q, _ = np.linalg.qr(Wd)
        yd = yd - Q @ (Q.T @ yd)
        Xd = Xd - Q @ (Q.T @ Xd)
    coefs = (Xd.T @ yd) / np.einsum("ij,ij->j", Xd, Xd)
    actual, placebos = float(coefs[0]), coefs[1:]
    return {"actual": actual, "placebos": placebos,
            "p_value": centered_p_value(actual, placebos), "n_perm": n_perm,
            "master_seed": master_seed}


def top_k_path(frame: pd.DataFrame, p_new, weights: pd.DataFrame, p_old, spec: ModelSpec,
               ks=(1, 3, 5, 10, 20), post_start: int = 2022, policy: str = "renormalize",
               data_kwargs: dict | None = None) -> pd.DataFrame:
    """Coefficient on ``mpw:post`` with the wedge rebuilt from each top-K network.

    Returns ``k, coef, se, median_coverage`` rows plus a ``baseline`` row
    (k = 0) using all origins.
    """
    data_kwargs = data_kwargs or {}
    rows = []
    for k in [None, *ks]:
        w = weights if k is None else truncate_top_k(weights, k)
        exp_k = build_mpw(p_new, build_wop(w, p_old, policy))
        panel = PanelDataset(attach_exposures(frame, exp_k, post_start), **data_kwargs)
        rep = fit_fe_ols(spec, panel)
        cov = 1.0 if k is None else float(coverage(weights, k).median())
        rows.append({"k": 0 if k is None else k, "coef": rep["mpw:post"],
                     "se": rep.se_of("mpw:post"), "median_coverage": cov})
    return pd.DataFrame(rows)
