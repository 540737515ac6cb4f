"""NB2 negative binomial regression with explicit unit and period dummies.

Variance is mu + alpha * mu**2. The log-likelihood is maximized jointly over
the linear index and alpha by damped Newton steps. alpha is constrained to be
nonnegative; when the score at alpha = 0 points outward the fit is reported at
the Poisson limit.
"""

from __future__ import annotations

import numpy as np
import pandas as pd
from scipy import special

from mpwedge.errors import ConvergenceError, InsufficientDataError, InvalidInputError, RankError
from mpwedge.estimation.data import EstimateReport, ModelSpec, PanelDataset, apply_sample
from mpwedge.estimation.linear import check_rank

ALPHA_FLOOR = 1e-6


def nb2_loglik(y, eta, alpha):
    """Per-observation NB2 log-likelihood (Poisson when alpha == 0)."""
    y = np.asarray(y, dtype=float)
    mu = np.exp(eta)
    if alpha <= 0:
        return y * eta - mu - special.gammaln(y + 1)
    r = 1.0 / alpha
    return (special.gammaln(y + r) - special.gammaln(r) - special.gammaln(y + 1)
            + r * np.log(r / (r + mu)) + y * np.log(mu / (r + mu)))


def _derivatives(y, X, eta, alpha):
    """Gradient and Hessian of the total log-likelihood in (beta, alpha)."""
    mu = np.exp(eta)
    k = X.shape[1]
    if alpha <= 0:
        g_eta = y - mu
        h_eta = -mu
        g_a = 0.5 * np.sum((y - mu) ** 2 - y)
        grad = np.append(X.T @ g_eta, g_a)
        H = np.zeros((k + 1, k + 1))
        H[:k, :k] = (X * h_eta[:, None]).T @ X
        H[k, k] = -1.0
        return grad, H, g_eta, np.full_like(y, np.nan)
    r = 1.0 / alpha
    rm = r + mu
    g_eta = r * (y - mu) / rm
    h_eta = -r * mu * (r + y) / rm ** 2
    l_r = special.digamma(y + r) - special.digamma(r) + np.log(r / rm) + (mu - y) / rm
    l_rr = (special.polygamma(1, y + r) - special.polygamma(1, r) + 1.0 / r - 1.0 / rm
            - (mu - y) / rm ** 2)
    l_er = (y - mu) * mu / rm ** 2
    g_a_i = -r ** 2 * l_r
    h_aa = np.sum(r ** 4 * l_rr + 2.0 * r ** 3 * l_r)
    h_ea = -r ** 2 * l_er
    grad = np.append(X.T @ g_eta, g_a_i.sum())
    H = np.empty((k + 1, k + 1))
    H[:k, :k] = (X * h_eta[:, None]).T @ X
    H[:k, k] = H[k, :k] = X.T @ h_ea
    H[k, k] = h_aa
    return grad, H, g_eta, g_a_i


def nb2_fit(y, X, offset=None, names=None, clusters=None, tol=1e-9, max_iter=200,
            alpha0=0.1):
    """Maximize the NB2 likelihood of counts ``y`` on design ``X`` (with offset).

    Returns an :class:`EstimateReport` whose last coefficient is ``alpha``.
    Covariance is the inverse observed information, or the CR1-style cluster
    sandwich when ``clusters`` is given.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    n, k = X.shape
    names = list(names) if names is not None else [f"x{j}" for j in range(k)]
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise InvalidInputError("negative binomial outcome must be nonnegative integers")
    if y.sum() == 0:
        raise InsufficientDataError("all outcomes are zero")
    check_rank(X, names)

    # Poisson-style start: regress log(y + 0.5) - offset on X
    beta = np.linalg.lstsq(X, np.log(y + 0.5) - off, rcond=None)[0]
    alpha = float(alpha0)
    trace = []

    def total_ll(b, a):
        return float(np.sum(nb2_loglik(y, off + X @ b, a)))

    ll = total_ll(beta, alpha)
    converged = False
    for it in range(1, max_iter + 1):
        eta = off + X @ beta
        grad, H, _, _ = _derivatives(y, X, eta, alpha)
        at_boundary = alpha <= 0
        if at_boundary and grad[-1] > 0:
            at_boundary = False
            alpha = ALPHA_FLOOR * 10
            ll = total_ll(beta, alpha)
            continue
        if at_boundary:
            step_b = np.linalg.solve(-H[:k, :k], grad[:k])
            step = np.append(step_b, 0.0)
        else:
            try:
                step = np.linalg.solve(-H, grad)
            except np.linalg.LinAlgError:
                step = grad / (np.abs(np.diag(H)) + 1.0)
            if np.any(~np.isfinite(step)) or grad @ step <= 0:
                # Hessian not negative definite here; fall back to scaled ascent
                step = grad / (np.abs(np.diag(H)) + 1.0)
        t = 1.0
        while True:
            b_new = beta + t * step[:k]
            a_new = alpha + t * step[k]
            if a_new < ALPHA_FLOOR:
                a_new = 0.0
            ll_new = total_ll(b_new, a_new)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
            if t < 1e-12:
                b_new, a_new, ll_new = beta, alpha, ll
                break
        moved = max(np.max(np.abs(b_new - beta)), abs(a_new - alpha))
        beta, alpha, ll_prev, ll = b_new, a_new, ll, ll_new
        trace.append({"iter": it, "loglik": ll, "alpha": alpha, "max_step": float(moved)})
        if moved < tol and abs(ll - ll_prev) <= 1e-10 * (1 + abs(ll)):
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"negative binomial Newton iterations did not converge in {max_iter}",
                               trace)

    eta = off + X @ beta
    grad, H, g_eta, g_a = _derivatives(y, X, eta, alpha)
    poisson_limit = alpha <= 0
    if poisson_limit:
        info = -H[:k, :k]
        bread = np.zeros((k + 1, k + 1))
        bread[:k, :k] = np.linalg.inv(info)
        score = X * g_eta[:, None]
        score = np.column_stack([score, np.zeros(n)])
    else:
        bread = np.linalg.inv(-H)
        score = np.column_stack([X * g_eta[:, None], g_a])
    if clusters is None:
        V = bread
        vtype, G = "OIM", None
    else:
        codes, uniq = pd.factorize(np.asarray(clusters), sort=True)
        G = len(uniq)
        if G < 2:
            raise InvalidInputError("cluster-robust covariance needs at least two clusters")
        summed = np.zeros((G, k + 1))
        np.add.at(summed, codes, score)
        V = G / (G - 1) * bread @ (summed.T @ summed) @ bread
        vtype = "CR1"
    V = (V + V.T) / 2.0
    return EstimateReport(
        names=names + ["alpha"], coef=np.append(beta, alpha), vcov=V, nobs=n, n_clusters=G,
        vcov_type=vtype, estimator="negbin", converged=True, iterations=len(trace),
        diagnostics={"loglik": ll, "poisson_limit": bool(poisson_limit), "trace": trace},
        fitted=np.exp(eta), resid=y - np.exp(eta))


def fit_negbin(data: PanelDataset, outcome: str, regressors: list[str], offset: str | None = None,
               cluster: str | None = None, unit_dummies: bool = True, period_dummies: bool = True,
               **kwargs) -> EstimateReport:
    """NB2 regression of a count outcome with an intercept and unit/period dummies.

    Units whose outcomes are all zero are dropped first (their dummies would
    diverge); ``diagnostics["dropped_all_zero_units"]`` counts them. The
    first unit and first period are the omitted categories, so ``const`` is
    the log rate of that cell.
    """
    df = data.frame
    y_all = data.column(outcome)
    keep_units = df.loc[y_all > 0, data.unit].unique()
    mask = df[data.unit].isin(keep_units).to_numpy()
    n_dropped = int(df[data.unit].nunique() - len(keep_units))
    sub = data.with_frame(df.loc[mask].reset_index(drop=True))
    if len(sub) == 0:
        raise InsufficientDataError("every unit has all-zero outcomes")
    y = sub.column(outcome)
    cols = [np.ones(len(sub))] + [sub.column(r) for r in regressors]
    names = ["const"] + list(regressors)
    for key, use in ((sub.unit, unit_dummies), (sub.period, period_dummies)):
        if not use:
            continue
        levels = np.sort(sub.frame[key].unique())
        vals = sub.frame[key].to_numpy()
        for lev in levels[1:]:
            cols.append((vals == lev).astype(float))
            names.append(f"{key}[{lev}]")
    X = np.column_stack(cols)
    off = sub.column(offset) if offset else None
    clusters = sub.frame[cluster].to_numpy() if cluster else None
    try:
        report = nb2_fit(y, X, off, names, clusters, **kwargs)
    except RankError:
        raise
    report.diagnostics["dropped_all_zero_units"] = n_dropped
    return report


def fit_negbin_spec(spec: ModelSpec, data: PanelDataset, **kwargs) -> EstimateReport:
    data = apply_sample(data, spec.sample)
    return fit_negbin(data, spec.outcome, spec.regressors, spec.offset, spec.cluster, **kwargs)
