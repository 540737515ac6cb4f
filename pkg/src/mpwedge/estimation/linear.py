"""Fixed-effects OLS, two-stage least squares, long differences and Wald tests."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import linalg, stats

from mpwedge.errors import InsufficientDataError, InvalidInputError, RankError
from mpwedge.estimation.absorb import Absorber
from mpwedge.estimation.data import (EstimateReport, ModelSpec, PanelDataset, apply_sample,
                                     check_terms, transform_outcome)

RANK_TOL = 1e-9


def cluster_vcov(resid: np.ndarray, X: np.ndarray, clusters, n_params: int | None = None,
                 weights: np.ndarray | None = None) -> np.ndarray:
    """CR1 cluster-robust covariance for least-squares coefficients.

    Uses the small-sample factor G/(G-1) * (N-1)/(N-K), with K the number of
    columns of ``X`` unless ``n_params`` overrides it.
    """
    X = np.asarray(X, dtype=float)
    u = np.asarray(resid, dtype=float)
    if weights is not None:
        sw = np.sqrt(np.asarray(weights, dtype=float))
        X = X * sw[:, None]
        u = u * sw
    codes, uniq = pd.factorize(np.asarray(clusters), sort=True)
    G = len(uniq)
    if G < 2:
        raise InvalidInputError("cluster-robust covariance needs at least two clusters")
    n, k = X.shape
    k = k if n_params is None else n_params
    scores = X * u[:, None]
    summed = np.zeros((G, X.shape[1]))
    np.add.at(summed, codes, scores)
    meat = summed.T @ summed
    bread = np.linalg.inv(X.T @ X)
    factor = G / (G - 1) * (n - 1) / (n - k)
    V = factor * bread @ meat @ bread
    return (V + V.T) / 2.0


def hc1_vcov(resid: np.ndarray, X: np.ndarray, n_params: int | None = None,
             weights: np.ndarray | None = None) -> np.ndarray:
    """Heteroskedasticity-robust covariance with the N/(N-K) correction."""
    X = np.asarray(X, dtype=float)
    u = np.asarray(resid, dtype=float)
    if weights is not None:
        sw = np.sqrt(np.asarray(weights, dtype=float))
        X = X * sw[:, None]
        u = u * sw
    n, k = X.shape
    k = k if n_params is None else n_params
    bread = np.linalg.inv(X.T @ X)
    meat = (X * (u ** 2)[:, None]).T @ X
    V = n / (n - k) * bread @ meat @ bread
    return (V + V.T) / 2.0


def check_rank(Xd: np.ndarray, names: Sequence[str], raw: np.ndarray | None = None,
               what: str = "design") -> None:
    """Raise :class:`RankError` naming columns that are collinear in ``Xd``.

    A column whose norm collapses relative to ``raw`` (its value before
    demeaning) is reported as absorbed by the fixed effects.
    """
    names = list(names)
    if Xd.shape[1] == 0:
        return
    norms = np.linalg.norm(Xd, axis=0)
    ref = np.linalg.norm(raw, axis=0) if raw is not None else norms
    scale = np.maximum(ref, np.finfo(float).tiny)
    absorbed = [names[j] for j in range(len(names)) if norms[j] <= RANK_TOL * scale[j] or norms[j] == 0]
    if absorbed:
        raise RankError(f"{what}: columns absorbed by fixed effects or identically zero: {absorbed}",
                        absorbed)
    Q, R, piv = linalg.qr(Xd / norms, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > RANK_TOL * diag[0] * max(Xd.shape)))
    if rank < Xd.shape[1]:
        bad = [names[j] for j in piv[rank:]]
        raise RankError(f"{what}: collinear columns {bad}", bad)


@dataclass
class _Design:
    y: np.ndarray
    terms: dict[str, np.ndarray]
    weights: np.ndarray | None
    clusters: np.ndarray | None
    absorber: Absorber | None
    frame: pd.DataFrame
    dropped: int


def _prepare(spec: ModelSpec, data: PanelDataset, terms: Sequence[str]) -> _Design:
    data = apply_sample(data, spec.sample)
    check_terms(data, [spec.outcome, *terms])
    cluster = spec.cluster or data.cluster
    y = transform_outcome(data.column(spec.outcome), spec.transform)
    cols = {t: data.column(t) for t in terms}
    ok = np.isfinite(y)
    for v in cols.values():
        ok &= np.isfinite(v)
    dropped = int((~ok).sum())
    if not ok.all():
        data = data.with_frame(data.frame.loc[ok].reset_index(drop=True))
        y = y[ok]
        cols = {k: v[ok] for k, v in cols.items()}
    if len(y) == 0:
        raise InsufficientDataError("no complete observations for the model")
    w = data.weights()
    clusters = data.frame[cluster].to_numpy() if cluster else None
    absorber = None
    if spec.fe:
        absorber = Absorber([data.key_codes(k) for k in spec.fe], w)
    return _Design(y, cols, w, clusters, absorber, data.frame, dropped)


def _partial(design: _Design, names: Sequence[str]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return demeaned (y, X) and raw X; adds an intercept when no FE is absorbed."""
    raw = np.column_stack([design.terms[n] for n in names]) if names else np.empty((len(design.y), 0))
    if design.absorber is None:
        return design.y.copy(), raw, raw
    stacked = design.absorber.demean(np.column_stack([design.y, raw]))
    return stacked[:, 0], stacked[:, 1:], raw


def _lstsq(X: np.ndarray, y: np.ndarray, w: np.ndarray | None) -> np.ndarray:
    if w is not None:
        sw = np.sqrt(w)
        X, y = X * sw[:, None], y * sw
    return np.linalg.lstsq(X, y, rcond=None)[0]


def _vcov(design: _Design, resid, X, n_params=None):
    if design.clusters is None:
        return hc1_vcov(resid, X, n_params, design.weights), "HC1", None
    G = len(pd.unique(design.clusters))
    return cluster_vcov(resid, X, design.clusters, n_params, design.weights), "CR1", G


def fit_fe_ols(spec: ModelSpec, data: PanelDataset) -> EstimateReport:
    """OLS with absorbed fixed effects and cluster-robust (CR1) inference.

    Without fixed effects an intercept ``const`` is added and reported.
    Fitted values and residuals are on the (transformed) outcome scale.
    """
    design = _prepare(spec, data, spec.regressors)
    names = list(spec.regressors)
    yd, Xd, raw = _partial(design, names)
    if design.absorber is None:
        Xd = np.column_stack([np.ones(len(yd)), Xd])
        raw = Xd
        names = ["const"] + names
    if Xd.shape[1] == 0:
        raise InvalidInputError("model has no regressors")
    if Xd.shape[0] <= Xd.shape[1]:
        raise InsufficientDataError(f"{Xd.shape[0]} observations for {Xd.shape[1]} coefficients")
    check_rank(Xd, names, raw)
    beta = _lstsq(Xd, yd, design.weights)
    resid = yd - Xd @ beta
    V, kind, G = _vcov(design, resid, Xd)
    ab = design.absorber
    return EstimateReport(
        names=names, coef=beta, vcov=V, nobs=len(yd), n_clusters=G,
        n_singletons=ab.n_singletons if ab else 0, vcov_type=kind, estimator="fe_ols",
        iterations=ab.iterations if ab else 0,
        diagnostics={"dropped_incomplete": design.dropped},
        fitted=design.y - resid, resid=resid)


def fit_tsls(spec: ModelSpec, data: PanelDataset) -> EstimateReport:
    """Just-identified 2SLS with one endogenous term and one excluded instrument.

    The report's ``first_stage`` holds the first-stage coefficient on the
    instrument, its cluster-robust SE, and F = (coef / se)^2. With one
    endogenous regressor and one instrument this robust Wald statistic is the
    Kleibergen-Paap rk Wald F.
    """
    if spec.estimator != "tsls" or not spec.endogenous or not spec.instrument:
        raise InvalidInputError("fit_tsls needs a tsls spec with endogenous and instrument set")
    exog = list(spec.regressors)
    terms = [spec.endogenous, spec.instrument] + exog
    design = _prepare(spec, data, terms)
    yd, D, raw = _partial(design, terms)
    if design.absorber is None:
        D = np.column_stack([D, np.ones(len(yd))])
        raw = np.column_stack([raw, np.ones(len(yd))])
        exog = exog + ["const"]
    x_endog, z, W = D[:, 0], D[:, 1], D[:, 2:]
    names = [spec.endogenous] + exog
    X = np.column_stack([x_endog, W])
    Z = np.column_stack([z, W])
    check_rank(X, names, np.column_stack([raw[:, 0], raw[:, 2:]]), "second stage")
    check_rank(Z, [spec.instrument] + exog, np.column_stack([raw[:, 1], raw[:, 2:]]),
               "instrument set")
    w = design.weights

    # first stage: endogenous on instrument and included exogenous terms
    pi = _lstsq(Z, x_endog, w)
    v = x_endog - Z @ pi
    V1, _, _ = _vcov(design, v, Z)
    fs_coef, fs_se = float(pi[0]), float(np.sqrt(V1[0, 0]))

    X_hat = Z @ pi
    X_hat_full = np.column_stack([X_hat, W])
    beta = _lstsq(X_hat_full, yd, w)
    resid = yd - X @ beta
    V, kind, G = _vcov(design, resid, X_hat_full)
    ab = design.absorber
    return EstimateReport(
        names=names, coef=beta, vcov=V, nobs=len(yd), n_clusters=G,
        n_singletons=ab.n_singletons if ab else 0, vcov_type=kind, estimator="tsls",
        first_stage={"coef": fs_coef, "se": fs_se, "F": (fs_coef / fs_se) ** 2},
        iterations=ab.iterations if ab else 0,
        diagnostics={"dropped_incomplete": design.dropped},
        fitted=design.y - resid, resid=resid)


def fit_long_difference(data: PanelDataset, outcome: str, exposure: str, year0, year1,
                        controls: Sequence[str] = (), transform: str = "none") -> EstimateReport:
    """Cross-sectional OLS of y(year1) - y(year0) on exposure and year0 controls.

    Units missing either year are dropped and counted in
    ``diagnostics["dropped_units"]``. Inference is HC1.
    """
    df = data.frame
    u, t = data.unit, data.period
    y = pd.Series(transform_outcome(data.column(outcome), transform), index=df.index)
    base = df.loc[df[t] == year0].set_index(u)
    end = df.loc[df[t] == year1].set_index(u)
    units = df[u].unique()
    both = base.index.intersection(end.index)
    dropped = len(units) - len(both)
    if len(both) == 0:
        raise InsufficientDataError(f"no unit observed in both {year0} and {year1}")
    both = both.sort_values()
    dy = (y.loc[df[t] == year1].set_axis(end.index).loc[both]
          - y.loc[df[t] == year0].set_axis(base.index).loc[both])
    cross = pd.DataFrame({"unit": both, "dy": dy.to_numpy()})
    terms = [exposure, *controls]
    sub = PanelDataset(base.loc[both].reset_index(), unit=u, period=t)
    for term in terms:
        cross[term] = sub.column(term)
    cross["period"] = year1
    spec = ModelSpec(outcome="dy", regressors=terms, fe=[], cluster=None)
    report = fit_fe_ols(spec, PanelDataset(cross, unit="unit", period="period"))
    report.estimator = "long_diff"
    report.diagnostics["dropped_units"] = dropped
    return report


@dataclass(frozen=True)
class WaldResult:
    stat: float
    df: int
    pvalue: float


def wald_test(report: EstimateReport, R: np.ndarray, r: np.ndarray | None = None) -> WaldResult:
    """Wald test of R b = r referred to chi-square with rows(R) degrees of freedom."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    r = np.zeros(R.shape[0]) if r is None else np.asarray(r, dtype=float)
    diff = R @ report.coef - r
    S = R @ report.vcov @ R.T
    eig = np.linalg.eigvalsh(S)
    if eig.min() <= 1e-14 * max(eig.max(), 1e-300) or eig.max() <= 0:
        raise RankError("restriction covariance is singular")
    stat = float(diff @ np.linalg.solve(S, diff))
    q = R.shape[0]
    return WaldResult(stat, q, float(stats.chi2.sf(stat, q)))


def wald_joint_test(report: EstimateReport, names: Sequence[str]) -> float:
    """p-value for the hypothesis that the named coefficients are jointly zero."""
    idx = [report.index(n) for n in names]
    R = np.zeros((len(idx), len(report.coef)))
    R[np.arange(len(idx)), idx] = 1.0
    return wald_test(report, R).pvalue


def fit(spec: ModelSpec, data: PanelDataset, **kwargs) -> EstimateReport:
    """Dispatch on ``spec.estimator`` (long_diff needs year0/year1 keyword arguments)."""
    if spec.estimator == "fe_ols":
        return fit_fe_ols(spec, data)
    if spec.estimator == "tsls":
        return fit_tsls(spec, data)
    if spec.estimator == "negbin":
        from mpwedge.estimation.negbin import fit_negbin_spec
        return fit_negbin_spec(spec, data, **kwargs)
    if spec.estimator == "long_diff":
        if not spec.regressors:
            raise InvalidInputError("long_diff needs an exposure regressor")
        return fit_long_difference(data, spec.outcome, spec.regressors[0], kwargs["year0"],
                                   kwargs["year1"], spec.regressors[1:], spec.transform)
    raise InvalidInputError(f"unknown estimator {spec.estimator!r}")
