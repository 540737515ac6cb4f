import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from mpwedge.errors import (ConvergenceError, InsufficientDataError, InvalidInputError,
                            RankError)
from mpwedge.estimation import (Absorber, ModelSpec, PanelDataset, cluster_vcov, demean,
                                demean_fe, fit, fit_fe_ols, fit_long_difference, fit_negbin,
                                fit_tsls, hc1_vcov, transform_outcome, wald_joint_test,
                                wald_test)
from mpwedge.analysis import event_study


def dummies(*keys):
    cols = [np.ones(len(keys[0]))]
    for k in keys:
        d = pd.get_dummies(pd.Series(k).astype(str)).to_numpy(dtype=float)
        cols.append(d[:, 1:])
    return np.column_stack(cols)


def residualize(x, D):
    return x - D @ np.linalg.lstsq(D, x, rcond=None)[0]


def small_panel(n_units=15, n_periods=6, seed=0, beta=(1.5, -0.7)):
    rng = np.random.default_rng(seed)
    u = np.repeat(np.arange(n_units), n_periods)
    t = np.tile(np.arange(2015, 2015 + n_periods), n_units)
    a = rng.normal(size=n_units)[u]
    d = rng.normal(size=n_periods)[t - 2015]
    x1 = rng.normal(size=len(u)) + a
    x2 = rng.normal(size=len(u)) + d
    y = a + d + beta[0] * x1 + beta[1] * x2 + rng.normal(size=len(u))
    return pd.DataFrame({"unit": u, "period": t, "cluster": u // 3, "x1": x1, "x2": x2, "y": y})


def test_single_fe_group_means_vanish():
    rng = np.random.default_rng(1)
    codes = rng.integers(0, 7, 100)
    x = rng.normal(size=(100, 3))
    xd = demean(x, [codes])
    for g in range(7):
        np.testing.assert_allclose(xd[codes == g].mean(axis=0), 0.0, atol=1e-12)


def test_two_way_demeaning_matches_dummies():
    df = small_panel()
    xd = demean(df[["x1", "y"]].to_numpy(), [df["unit"].to_numpy(), df["period"].to_numpy() - 2015])
    D = dummies(df["unit"], df["period"])
    np.testing.assert_allclose(xd, residualize(df[["x1", "y"]].to_numpy(), D), atol=1e-8)


def test_unbalanced_two_way_demeaning_matches_dummies():
    df = small_panel(seed=3).sample(frac=0.7, random_state=1).reset_index(drop=True)
    codes = [pd.factorize(df["unit"])[0], pd.factorize(df["period"])[0]]
    xd = demean(df[["x1"]].to_numpy(), codes)
    D = dummies(df["unit"], df["period"])
    np.testing.assert_allclose(xd, residualize(df[["x1"]].to_numpy(), D), atol=1e-8)


def three_way_panel(seed=0):
    rng = np.random.default_rng(seed)
    c, s, t = np.meshgrid(np.arange(8), np.arange(4), np.arange(5), indexing="ij")
    df = pd.DataFrame({"unit": c.ravel(), "group": s.ravel(), "period": t.ravel()})
    df["x"] = rng.normal(size=len(df))
    df["w"] = rng.normal(size=len(df)) + df["unit"] * 0.1
    df["y"] = 0.8 * df["x"] - 0.3 * df["w"] + rng.normal(size=len(df))
    df["cluster"] = df["unit"]
    return df


def test_three_two_way_sets_match_dummies():
    df = three_way_panel()
    data = PanelDataset(df, group="group")
    fe = ["unit:period", "unit:group", "group:period"]
    out, ab = demean_fe(data, fe, ["x", "y"])
    keys = [df["unit"].astype(str) + "_" + df["period"].astype(str),
            df["unit"].astype(str) + "_" + df["group"].astype(str),
            df["group"].astype(str) + "_" + df["period"].astype(str)]
    D = dummies(*keys)
    np.testing.assert_allclose(out[["x", "y"]].to_numpy(),
                               residualize(df[["x", "y"]].to_numpy(), D), atol=1e-6)
    spec = ModelSpec("y", ["x", "w"], fe=fe, cluster="cluster")
    rep = fit_fe_ols(spec, data)
    coef = np.linalg.lstsq(np.column_stack([df[["x", "w"]].to_numpy(), D]), df["y"], rcond=None)[0]
    np.testing.assert_allclose(rep.coef, coef[:2], atol=1e-6)


def test_non_convergence_raises_with_trace():
    df = three_way_panel().sample(frac=0.6, random_state=2).reset_index(drop=True)
    codes = [pd.factorize(df["unit"].astype(str) + df["period"].astype(str))[0],
             pd.factorize(df["unit"].astype(str) + df["group"].astype(str))[0],
             pd.factorize(df["group"].astype(str) + df["period"].astype(str))[0]]
    with pytest.raises(ConvergenceError) as err:
        Absorber(codes, max_iter=1).demean(df[["x"]].to_numpy())
    assert err.value.trace


def test_singletons_counted():
    df = small_panel()
    df = pd.concat([df, pd.DataFrame({"unit": [99], "period": [2015], "cluster": [99], "x1": [0.3],
                                      "x2": [0.1], "y": [1.0]})], ignore_index=True)
    rep = fit_fe_ols(ModelSpec("y", ["x1", "x2"], fe=["unit", "period"], cluster="cluster"),
                     PanelDataset(df))
    assert rep.n_singletons == 1


def test_fe_ols_matches_dummy_ols():
    df = small_panel(seed=4)
    rep = fit_fe_ols(ModelSpec("y", ["x1", "x2"], fe=["unit", "period"], cluster="cluster"),
                     PanelDataset(df))
    X = np.column_stack([df[["x1", "x2"]].to_numpy(), dummies(df["unit"], df["period"])])
    coef = np.linalg.lstsq(X, df["y"], rcond=None)[0]
    np.testing.assert_allclose(rep.coef, coef[:2], atol=1e-8)
    np.testing.assert_allclose(rep.fitted, X @ coef, atol=1e-8)


def test_fe_ols_invariant_to_absorbed_constants():
    df = small_panel(seed=5)
    spec = ModelSpec("y", ["x1", "x2"], fe=["unit", "period"], cluster="cluster")
    a = fit_fe_ols(spec, PanelDataset(df))
    shifted = df.assign(y=df["y"] + 3.0 * df["unit"] - 0.5 * (df["period"] - 2015) ** 2,
                        x1=df["x1"] + 7.0)
    b = fit_fe_ols(spec, PanelDataset(shifted))
    np.testing.assert_allclose(a.coef, b.coef, atol=1e-9)


def test_constant_outcome_gives_zero_slopes():
    df = small_panel().assign(y=4.2)
    rep = fit_fe_ols(ModelSpec("y", ["x1", "x2"], fe=["unit"], cluster="cluster"), PanelDataset(df))
    np.testing.assert_allclose(rep.coef, 0.0, atol=1e-12)


def test_collinear_regressors_named():
    df = small_panel().assign(x3=lambda d: 2 * d["x1"] - d["x2"])
    with pytest.raises(RankError) as err:
        fit_fe_ols(ModelSpec("y", ["x1", "x2", "x3"], fe=["unit"]), PanelDataset(df))
    assert set(err.value.columns) <= {"x1", "x2", "x3"} and err.value.columns


def test_regressor_absorbed_by_fe_is_rank_error():
    df = small_panel().assign(u_level=lambda d: d["unit"] * 1.0)
    with pytest.raises(RankError) as err:
        fit_fe_ols(ModelSpec("y", ["x1", "u_level"], fe=["unit"]), PanelDataset(df))
    assert err.value.columns == ["u_level"]


def test_empty_sample_is_insufficient():
    df = small_panel()
    spec = ModelSpec("y", ["x1"], fe=["unit"], sample={"keep": {"period": [1900]}})
    with pytest.raises(InsufficientDataError):
        fit_fe_ols(spec, PanelDataset(df))


def test_sample_drop_filter():
    df = small_panel()
    spec = ModelSpec("y", ["x1"], fe=["unit"], cluster="cluster",
                     sample={"drop": {"unit": [0, 1]}})
    rep = fit_fe_ols(spec, PanelDataset(df))
    assert rep.nobs == len(df) - 12


def hand_cr1(X, u, g):
    n, k = X.shape
    G = len(np.unique(g))
    bread = np.linalg.inv(X.T @ X)
    meat = sum(np.outer(X[g == c].T @ u[g == c], X[g == c].T @ u[g == c]) for c in np.unique(g))
    return G / (G - 1) * (n - 1) / (n - k) * bread @ meat @ bread


def test_cr1_matches_hand_sandwich():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(12, 2))
    u = rng.normal(size=12)
    g = np.repeat([0, 1, 2], 4)
    np.testing.assert_allclose(cluster_vcov(u, X, g), hand_cr1(X, u, g), rtol=1e-12, atol=1e-14)


def test_singleton_clusters_equal_hc1():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 3))
    u = rng.normal(size=40)
    np.testing.assert_allclose(cluster_vcov(u, X, np.arange(40)), hc1_vcov(u, X), rtol=1e-10)


def test_one_cluster_rejected():
    with pytest.raises(InvalidInputError):
        cluster_vcov(np.ones(5), np.ones((5, 1)), np.zeros(5))


def test_duplicated_rows_inflate_clustered_se():
    rng = np.random.default_rng(8)
    n = 200
    x = rng.normal(size=n)
    y = 0.5 * x + rng.normal(size=n)
    base = pd.DataFrame({"x": x, "y": y, "cluster": np.arange(n), "unit": np.arange(n),
                         "period": 0})
    dup = pd.concat([base, base.assign(period=1)], ignore_index=True)
    spec = ModelSpec("y", ["x"], cluster="cluster")
    se_once = fit_fe_ols(spec, PanelDataset(base)).se_of("x")
    se_dup_clustered = fit_fe_ols(spec, PanelDataset(dup)).se_of("x")
    dup_indep = dup.assign(cluster=np.arange(2 * n))
    se_dup_indep = fit_fe_ols(spec, PanelDataset(dup_indep)).se_of("x")
    assert se_dup_clustered > 1.3 * se_dup_indep
    assert se_dup_clustered == pytest.approx(se_once, rel=0.02)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_vcov_symmetric_psd(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 4))
    u = rng.normal(size=30)
    V = cluster_vcov(u, X, rng.integers(0, 5, 30))
    assert np.allclose(V, V.T)
    assert np.linalg.eigvalsh(V).min() >= -1e-10 * np.abs(V).max()


def iv_data(n=50, seed=0, fe=False):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=n)
    w = rng.normal(size=n)
    e = rng.normal(size=n)
    x = 0.8 * z + 0.3 * w + 0.5 * e + rng.normal(size=n)
    y = 1.0 + 0.6 * x - 0.4 * w + e
    df = pd.DataFrame({"y": y, "x": x, "z": z, "w": w, "unit": np.arange(n) % 10,
                       "period": np.arange(n) // 10, "cluster": np.arange(n) % 10})
    return df


def test_tsls_perfect_instrument_is_ols():
    df = iv_data().assign(x_copy=lambda d: d["x"])
    iv = fit_tsls(ModelSpec("y", ["w"], fe=["unit"], cluster="cluster", estimator="tsls",
                            endogenous="x", instrument="x_copy"), PanelDataset(df))
    ols = fit_fe_ols(ModelSpec("y", ["x", "w"], fe=["unit"], cluster="cluster"), PanelDataset(df))
    np.testing.assert_allclose(iv.coef, ols.coef, atol=1e-10)


def test_tsls_matches_manual_two_stage():
    df = iv_data(seed=2)
    rep = fit_tsls(ModelSpec("y", ["w"], cluster="cluster", estimator="tsls", endogenous="x",
                             instrument="z"), PanelDataset(df))
    one = np.ones(len(df))
    Z = np.column_stack([df["z"], df["w"], one])
    xhat = Z @ np.linalg.lstsq(Z, df["x"], rcond=None)[0]
    Xh = np.column_stack([xhat, df["w"], one])
    b = np.linalg.lstsq(Xh, df["y"], rcond=None)[0]
    np.testing.assert_allclose(rep.coef, b, atol=1e-8)
    u = df["y"].to_numpy() - np.column_stack([df["x"], df["w"], one]) @ b
    V = hand_cr1(Xh, u, df["cluster"].to_numpy())
    np.testing.assert_allclose(rep.vcov, V, rtol=1e-8)


def test_tsls_with_fe_matches_dummy_two_stage():
    df = iv_data(n=80, seed=6)
    rep = fit_tsls(ModelSpec("y", ["w"], fe=["unit", "period"], cluster="cluster",
                             estimator="tsls", endogenous="x", instrument="z"), PanelDataset(df))
    D = dummies(df["unit"], df["period"])
    Z = np.column_stack([df["z"], df["w"], D])
    xhat = Z @ np.linalg.lstsq(Z, df["x"], rcond=None)[0]
    b = np.linalg.lstsq(np.column_stack([xhat, df["w"], D]), df["y"], rcond=None)[0]
    np.testing.assert_allclose(rep.coef, b[:2], atol=1e-8)


def test_first_stage_f_is_cluster_wald():
    df = iv_data(n=120, seed=9)
    rep = fit_tsls(ModelSpec("y", ["w"], fe=["unit"], cluster="cluster", estimator="tsls",
                             endogenous="x", instrument="z"), PanelDataset(df))
    D = dummies(df["unit"])
    Zf = np.column_stack([df["z"], df["w"], D])
    pi = np.linalg.lstsq(Zf, df["x"], rcond=None)[0]
    v = df["x"].to_numpy() - Zf @ pi
    Zd = residualize(df[["z", "w"]].to_numpy(), D)
    V = hand_cr1(Zd, v, df["cluster"].to_numpy())
    assert rep.first_stage["F"] == pytest.approx(pi[0] ** 2 / V[0, 0], rel=1e-8)


def test_instrument_collinear_with_controls():
    df = iv_data().assign(z=lambda d: 2 * d["w"])
    with pytest.raises(RankError):
        fit_tsls(ModelSpec("y", ["w"], fe=["unit"], estimator="tsls", endogenous="x",
                           instrument="z"), PanelDataset(df))


def test_spec_rejects_instrument_among_regressors():
    with pytest.raises(InvalidInputError):
        ModelSpec("y", ["w", "z"], estimator="tsls", endogenous="x", instrument="z")


def test_wald_single_coefficient_is_squared_t():
    df = small_panel(seed=7)
    rep = fit_fe_ols(ModelSpec("y", ["x1", "x2"], fe=["unit"], cluster="cluster"),
                     PanelDataset(df))
    p = wald_joint_test(rep, ["x2"])
    t = rep["x2"] / rep.se_of("x2")
    assert p == pytest.approx(stats.chi2.sf(t ** 2, 1), rel=1e-12)
    assert p == pytest.approx(rep.pvalue[rep.index("x2")], rel=1e-9)


def test_wald_zero_coefficients_p_one():
    df = small_panel(seed=7)
    rep = fit_fe_ols(ModelSpec("y", ["x1", "x2"], fe=["unit"], cluster="cluster"),
                     PanelDataset(df))
    rep.coef = np.zeros_like(rep.coef)
    assert wald_joint_test(rep, ["x1", "x2"]) == 1.0


def test_wald_three_coefficients_quadratic_form():
    rng = np.random.default_rng(0)
    df = small_panel(seed=8).assign(x3=lambda d: rng.normal(size=len(d)))
    rep = fit_fe_ols(ModelSpec("y", ["x1", "x2", "x3"], fe=["unit"], cluster="cluster"),
                     PanelDataset(df))
    b = rep.coef
    W = b @ np.linalg.solve(rep.vcov, b)
    res = wald_test(rep, np.eye(3))
    assert res.stat == pytest.approx(W, rel=1e-10)
    assert res.pvalue == pytest.approx(stats.chi2.sf(W, 3), rel=1e-10)
    assert wald_joint_test(rep, ["x1", "x2", "x3"]) == pytest.approx(res.pvalue)


def test_wald_singular_rejected():
    df = small_panel(seed=8)
    rep = fit_fe_ols(ModelSpec("y", ["x1", "x2"], fe=["unit"], cluster="cluster"),
                     PanelDataset(df))
    with pytest.raises(RankError):
        wald_test(rep, np.array([[1.0, 0.0], [2.0, 0.0]]))


@pytest.mark.parametrize("kind,expected", [("log0.1", np.log(0.1)), ("log1p", 0.0),
                                           ("asinh", 0.0), ("none", 0.0)])
def test_transform_at_zero(kind, expected):
    assert transform_outcome(np.array([0.0]), kind)[0] == pytest.approx(expected)


def test_asinh_values():
    assert transform_outcome(np.array([10.0]), "asinh")[0] == pytest.approx(np.log(20.0499), abs=1e-4)
    assert transform_outcome(np.array([10.0]), "asinh")[0] == pytest.approx(2.9982, abs=1e-4)
    assert np.arcsinh(-3.0) == -np.arcsinh(3.0)


def test_transform_rejects_negative_and_unknown():
    with pytest.raises(InvalidInputError):
        transform_outcome(np.array([-1.0]), "log1p")
    with pytest.raises(InvalidInputError):
        transform_outcome(np.array([1.0]), "sqrt")


def count_panel(alpha, beta=0.3, n_units=60, n_periods=6, seed=0):
    rng = np.random.default_rng(seed)
    u = np.repeat(np.arange(n_units), n_periods)
    t = np.tile(np.arange(n_periods), n_units)
    x = rng.normal(size=len(u))
    log_emp = np.log(rng.uniform(500, 2000, n_units))[u]
    mu = np.exp(-4.0 + rng.normal(0, 0.3, n_units)[u] + 0.1 * t + beta * x + log_emp)
    lam = rng.gamma(1 / alpha, alpha * mu) if alpha > 0 else mu
    y = rng.poisson(lam)
    return pd.DataFrame({"unit": u, "period": t, "cluster": u, "x": x, "y": y,
                         "log_emp": log_emp})


def test_negbin_poisson_data():
    df = count_panel(alpha=0.0, seed=1)
    rep = fit_negbin(PanelDataset(df), "y", ["x"], offset="log_emp")
    assert rep["x"] == pytest.approx(0.3, rel=0.05)
    assert rep["alpha"] < 0.02
    assert rep.converged


def test_negbin_offset_identity():
    df = count_panel(alpha=0.5, seed=2)
    a = fit_negbin(PanelDataset(df), "y", ["x"], offset="log_emp")
    b = fit_negbin(PanelDataset(df.assign(log_emp=df["log_emp"] + np.log(2))), "y", ["x"],
                   offset="log_emp")
    assert b["const"] - a["const"] == pytest.approx(-np.log(2), abs=1e-6)
    assert b["x"] == pytest.approx(a["x"], abs=1e-7)


def test_negbin_drops_all_zero_units():
    df = count_panel(alpha=0.5, seed=3)
    df.loc[df["unit"] == 0, "y"] = 0
    rep = fit_negbin(PanelDataset(df), "y", ["x"], offset="log_emp", cluster="cluster")
    assert rep.diagnostics["dropped_all_zero_units"] == 1
    assert rep.vcov_type == "CR1"


def test_negbin_boundary_flag():
    df = count_panel(alpha=0.0, seed=4, n_units=30)
    rep = fit_negbin(PanelDataset(df), "y", ["x"], offset="log_emp")
    assert isinstance(rep.diagnostics["poisson_limit"], bool)


@pytest.mark.slow
def test_negbin_recovers_slope_and_dispersion():
    # unit dummies bias the dispersion down in short panels, so use 20 periods
    est = np.array([[fit_negbin(PanelDataset(count_panel(0.5, seed=s, n_units=40, n_periods=20)), "y", ["x"],
                                offset="log_emp")[k] for k in ("x", "alpha")]
                    for s in range(200)])
    assert est[:, 0].mean() == pytest.approx(0.3, rel=0.10)
    assert est[:, 1].mean() == pytest.approx(0.5, rel=0.10)


def ld_panel(beta, n=200, seed=0):
    rng = np.random.default_rng(seed)
    units = np.arange(n)
    mpw = rng.normal(200, 5, n)
    rows = []
    for yr in (2019, 2024):
        y = rng.normal(size=n) + (beta * mpw if yr == 2024 else 0)
        rows.append(pd.DataFrame({"unit": units, "period": yr, "y": y, "mpw": mpw,
                                  "ctrl": rng.normal(size=n)}))
    return pd.concat(rows, ignore_index=True)


def test_long_difference_null_and_signal():
    rep = fit_long_difference(PanelDataset(ld_panel(0.0)), "y", "mpw", 2019, 2024)
    assert abs(rep["mpw"]) < 3 * rep.se_of("mpw")
    rep = fit_long_difference(PanelDataset(ld_panel(-0.059, n=2000, seed=1)), "y", "mpw", 2019,
                              2024)
    assert rep["mpw"] == pytest.approx(-0.059, abs=3 * rep.se_of("mpw"))
    assert rep.vcov_type == "HC1"


def test_long_difference_matches_hand_ols_and_drops_units():
    df = ld_panel(0.1, n=10, seed=3)
    df = pd.concat([df, pd.DataFrame({"unit": [77], "period": [2019], "y": [1.0], "mpw": [200.0],
                                      "ctrl": [0.0]})], ignore_index=True)
    rep = fit_long_difference(PanelDataset(df), "y", "mpw", 2019, 2024, ["ctrl"])
    assert rep.diagnostics["dropped_units"] == 1
    a = df.loc[(df["period"] == 2019) & (df["unit"] < 10)].set_index("unit").sort_index()
    b = df.loc[df["period"] == 2024].set_index("unit").sort_index()
    X = np.column_stack([np.ones(10), a["mpw"], a["ctrl"]])
    dy = (b["y"] - a["y"]).to_numpy()
    coef = np.linalg.lstsq(X, dy, rcond=None)[0]
    np.testing.assert_allclose(rep.coef, coef, atol=1e-10)
    np.testing.assert_allclose(rep.vcov, hc1_vcov(dy - X @ coef, X), rtol=1e-10)


def es_panel(seed=0):
    df = small_panel(n_units=30, n_periods=6, seed=seed)
    rng = np.random.default_rng(seed)
    df["mpw"] = rng.normal(size=30)[df["unit"]]
    df["y"] = df["y"] + 0.4 * df["mpw"] * (df["period"] >= 2018)
    return df


def test_event_study_reference_row_and_invariance():
    df = es_panel()
    spec = ModelSpec("y", ["x1"], fe=["unit", "period"], cluster="cluster")
    rep_a, tab_a = event_study(PanelDataset(df), spec, "mpw", 2017)
    rep_b, tab_b = event_study(PanelDataset(df), spec, "mpw", 2019)
    ref = tab_a.loc[tab_a["year"] == 2017].iloc[0]
    assert (ref["coef"], ref["se"], ref["reference"]) == (0.0, 0.0, 1)
    assert not any(n.endswith("_2017") for n in rep_a.names)
    np.testing.assert_allclose(rep_a.fitted, rep_b.fitted, atol=1e-9)
    np.testing.assert_allclose(tab_a["ci_hi"] - tab_a["coef"], 1.96 * tab_a["se"], atol=1e-12)


def test_dispatch_unknown_and_long_diff():
    df = ld_panel(0.0, n=30)
    spec = ModelSpec("y", ["mpw"], estimator="long_diff")
    rep = fit(spec, PanelDataset(df), year0=2019, year1=2024)
    assert rep.estimator == "long_diff"
    with pytest.raises(InvalidInputError):
        ModelSpec("y", ["x"], estimator="probit")


def test_weights_match_replicated_rows():
    df = small_panel(seed=9)
    w = np.where(df.index % 2 == 0, 2.0, 1.0)
    spec = ModelSpec("y", ["x1", "x2"], fe=["unit"])
    rep_w = fit_fe_ols(spec, PanelDataset(df.assign(weight=w), weight="weight"))
    rep_r = fit_fe_ols(spec, PanelDataset(pd.concat([df, df.loc[df.index % 2 == 0].assign(period=lambda d: d["period"] + 100)],
                                                    ignore_index=True)))
    np.testing.assert_allclose(rep_w.coef, rep_r.coef, atol=1e-8)
