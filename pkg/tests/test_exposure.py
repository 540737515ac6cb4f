import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from mpwedge.errors import InsufficientDataError, InvalidInputError
from mpwedge.exposure import (aggregate_county_predictions, bin_positive_terciles, build_bartik,
                              build_mpw, build_predicted_wop, build_wop, centered_p_value,
                              lender_leaveout_payments, offset_ratio, permute_wop,
                              placebo_seeds, variance_decomposition)
from mpwedge.mortgage import monthly_payment


def shares(dest, origins, w):
    return pd.DataFrame({"destination": dest, "origin": origins, "weight": w})


def test_wop_examples():
    assert build_wop(shares(1, [2], [1.0]), {2: 400.0})[1] == 400.0
    assert build_wop(shares(1, [2, 3], [0.3, 0.7]), {2: 400.0, 3: 500.0})[1] == pytest.approx(470)


def test_wop_matches_dot_product():
    rng = np.random.default_rng(1)
    w = rng.dirichlet(np.ones(10))
    pay = rng.uniform(350, 550, 10)
    out = build_wop(shares(0, np.arange(1, 11), w), dict(zip(range(1, 11), pay)))
    assert out[0] == pytest.approx(w @ pay, abs=1e-10)


def test_wop_missing_origin_policies():
    w = shares(1, [2, 3], [0.5, 0.5])
    pay = {2: 400.0}
    assert build_wop(w, pay, "renormalize")[1] == 400.0
    assert np.isnan(build_wop(w, pay, "missing")[1])
    with pytest.raises(InvalidInputError):
        build_wop(w, pay, "zero")


def test_mpw_examples():
    e = build_mpw({1: 641.42, 2: 500.0}, {1: 427.11, 2: 500.0})
    assert e.loc[0, "mpw"] == pytest.approx(214.31, abs=1e-9)
    assert e.loc[1, "mpw"] == 0.0
    single = build_mpw({1: 650.0}, build_wop(shares(1, [5], [1.0]), {5: 420.0}))
    assert single.loc[0, "mpw"] == pytest.approx(230.0)


def test_mpw_missing_side_is_missing():
    e = build_mpw({1: 600.0, 2: 610.0}, {1: 400.0})
    assert np.isnan(e.set_index("cz").loc[2, "mpw"])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(300, 900), st.floats(300, 900)), min_size=2, max_size=30))
def test_mpw_identity_and_variance_decomposition(rows):
    p, w = map(np.asarray, zip(*rows))
    e = build_mpw(pd.Series(p), pd.Series(w))
    assert np.array_equal(e["mpw"].to_numpy(), p - w)
    v = variance_decomposition(e)
    direct = np.var(p - w, ddof=1)
    total = v.var_pnew + v.var_wop + v.cov_term
    assert total == pytest.approx(direct, rel=1e-10, abs=1e-9)
    assert v.var_mpw == pytest.approx(direct, rel=1e-12, abs=1e-12)


def test_variance_decomposition_constant_p_new():
    e = build_mpw(pd.Series([600.0] * 5), pd.Series([400.0, 410, 390, 420, 405]))
    v = variance_decomposition(e)
    assert v.var_mpw == pytest.approx(v.var_wop)
    assert v.cov_term == 0.0


def test_published_magnitudes_are_consistent():
    var_pnew, var_wop, cov_term = 9.0, 46.9, -6.6
    assert var_pnew + var_wop + cov_term == pytest.approx(49.3, abs=1e-9)
    corr = (-cov_term / 2) / (np.sqrt(var_pnew) * np.sqrt(var_wop))
    assert 0.159 <= 3.3 / (3.0 * 6.85) <= 0.162
    assert corr == pytest.approx(0.16, abs=0.005)


def test_variance_decomposition_needs_two_rows():
    with pytest.raises(InsufficientDataError):
        variance_decomposition(build_mpw(pd.Series([1.0]), pd.Series([0.5])))


def toy_exposures(n=20, seed=0):
    rng = np.random.default_rng(seed)
    e = build_mpw(pd.Series(rng.uniform(600, 700, n), index=range(1, n + 1)),
                  pd.Series(rng.uniform(400, 460, n), index=range(1, n + 1)))
    e.loc[3, "wop"] = np.nan
    e["mpw"] = e["p_new"] - e["wop"]
    return e


def test_permute_preserves_multiset_and_p_new():
    e = toy_exposures()
    p = permute_wop(e, 7)
    assert sorted(p["wop"].dropna()) == sorted(e["wop"].dropna())
    assert np.isnan(p.loc[3, "wop"])
    np.testing.assert_array_equal(p["p_new"], e["p_new"])
    np.testing.assert_array_equal(p["mpw"].dropna(), (p["p_new"] - p["wop"]).dropna())
    ok = e["wop"].notna()
    assert p.loc[ok, "mpw"].mean() == pytest.approx(e.loc[ok, "mpw"].mean(), rel=1e-12)


def test_permute_deterministic_and_seed_dependent():
    e = toy_exposures()
    pd.testing.assert_frame_equal(permute_wop(e, 1), permute_wop(e, 1))
    assert not permute_wop(e, 1)["wop"].equals(permute_wop(e, 2)["wop"])


def test_placebo_seeds_are_spawned_children():
    a = placebo_seeds(5, 3)
    b = np.random.SeedSequence(5).spawn(3)
    assert [s.generate_state(2).tolist() for s in a] == [s.generate_state(2).tolist() for s in b]


def test_centered_p_examples():
    assert centered_p_value(0.0, [-1.0, 0.0, 1.0]) == 1.0
    assert centered_p_value(2.0, [-1.0, 0.0, 1.0]) == pytest.approx(0.25)
    draws = np.random.default_rng(0).normal(size=999)
    assert centered_p_value(100.0, draws) == pytest.approx(1 / 1000)
    with pytest.raises(InvalidInputError):
        centered_p_value(1.0, [])


@given(st.floats(-10, 10), st.lists(st.floats(-10, 10), min_size=1, max_size=50))
def test_centered_p_in_unit_interval(actual, draws):
    p = centered_p_value(actual, draws)
    assert 0 < p <= 1


def rate_for_payment(pay):
    return brentq(lambda r: monthly_payment(1e5, r, 360) - pay, 1e-6, 0.5, xtol=1e-14)


def leaveout_toy(positions, pre_mix, n_states=4, counties_per_state=2, per_lender=5,
                 noise=0.0, seed=0):
    """Shock loans priced at base + county level + lender position (payment units)."""
    rng = np.random.default_rng(seed)
    base = 500.0
    pre_rows, shock_rows = [], []
    lid = 0
    for s in range(1, n_states + 1):
        for j in range(counties_per_state):
            county = s * 1000 + j + 1
            level = rng.normal(0, 5)
            for lender, pos in positions.items():
                for k in range(per_lender):
                    pay = base + level + pos + noise * rng.normal()
                    shock_rows.append((lid, county, lender, 2020 + k % 2, rate_for_payment(pay)))
                    lid += 1
            mix = pre_mix[j % len(pre_mix)]
            for lender, count in mix.items():
                for _ in range(count):
                    pre_rows.append((lid, county, lender, 2018, 0.04))
                    lid += 1
    cols = ["loan_id", "county", "lender", "vintage_year", "annual_rate"]
    pre = pd.DataFrame(pre_rows, columns=cols).assign(principal=1e5)
    shock = pd.DataFrame(shock_rows, columns=cols).assign(principal=1e5)
    return pre, shock


def test_leaveout_two_lender_mix():
    pre, shock = leaveout_toy({"A": 10.0, "B": -10.0}, [{"A": 7, "B": 3}, {"A": 2, "B": 8}])
    res = lender_leaveout_payments(pre, shock, min_out_of_state=1)
    for county, pred in res.predictions.items():
        mix = [{"A": 7, "B": 3}, {"A": 2, "B": 8}][(county % 1000) - 1]
        expected = (mix["A"] * 10 - mix["B"] * 10) / 10
        assert pred == pytest.approx(expected, abs=1e-6)
    state_means = (res.positions.assign(nl=lambda d: d["n"] * d["lambda"])
                   .groupby("state")[["nl"]].sum())
    np.testing.assert_allclose(state_means["nl"], 0.0, atol=1e-8)


def test_leaveout_omits_single_lender_without_out_of_state_loans():
    pre, shock = leaveout_toy({"A": 10.0, "B": -10.0}, [{"A": 7, "B": 3}])
    # lender C lends only in county 1001
    extra_shock = shock.loc[shock["county"] == 1001].head(5).assign(
        lender="C", loan_id=lambda d: d["loan_id"] + 10_000)
    pre_c = pd.DataFrame({"loan_id": [50_000 + i for i in range(4)], "county": 1001,
                          "lender": "C", "vintage_year": 2019, "annual_rate": 0.04,
                          "principal": 1e5})
    pre = pd.concat([pre.loc[pre["county"] != 1001], pre_c])
    res = lender_leaveout_payments(pre, pd.concat([shock, extra_shock]), min_out_of_state=1)
    assert 1001 in res.omitted_counties
    assert 1001 not in res.predictions.index
    assert res.coverage[1001] == 0.0


def test_leaveout_tracks_lender_driven_payments():
    rng = np.random.default_rng(11)
    positions = dict(zip("ABCDEF", rng.normal(0, 15, 6)))
    mixes = [dict(zip("ABCDEF", rng.integers(1, 12, 6).tolist())) for _ in range(6)]
    pre, shock = leaveout_toy(positions, mixes, n_states=6, counties_per_state=6, per_lender=6,
                              noise=1.0, seed=3)
    res = lender_leaveout_payments(pre, shock, min_out_of_state=10)
    share = pre.groupby(["county", "lender"]).size().unstack(fill_value=0)
    share = share.div(share.sum(axis=1), axis=0)
    truth = share @ pd.Series(positions)
    p = res.predictions
    assert np.corrcoef(p, truth.loc[p.index])[0, 1] > 0.99


def test_leaveout_unresolved_state_is_rejected():
    pre, shock = leaveout_toy({"A": 1.0, "B": -1.0}, [{"A": 1, "B": 1}])
    with pytest.raises(InvalidInputError):
        lender_leaveout_payments(pre, shock, state_of={})


def test_aggregate_county_predictions_weights_by_pre_loans():
    pred = pd.Series({101: 10.0, 102: 20.0, 201: 5.0})
    pre = pd.DataFrame({"county": [101] * 3 + [102] + [201]})
    out = aggregate_county_predictions(pred, pre, {101: 1, 102: 1, 201: 2})
    assert out[1] == pytest.approx((3 * 10 + 20) / 4)
    assert out[2] == 5.0


def test_predicted_wop_examples():
    eq = shares(1, [2, 3], [0.5, 0.5])
    assert build_predicted_wop(eq, {2: 400.0, 3: 500.0})[1] == pytest.approx(450.0)
    w = shares(1, [2, 3], [0.2, 0.8])
    pay = {2: 410.0, 3: 395.0}
    assert build_predicted_wop(w, pay)[1] == build_wop(w, pay)[1]
    rng = np.random.default_rng(4)
    ww = rng.dirichlet(np.ones(8))
    pp = rng.normal(0, 3, 8)
    got = build_predicted_wop(shares(0, np.arange(1, 9), ww), dict(enumerate(pp, start=1)))[0]
    assert got == pytest.approx(ww @ pp, abs=1e-12)


def bartik_inputs(growth):
    base = pd.DataFrame({"cz": [1, 1, 2, 2], "soc": [1, 2, 1, 2], "share": [0.1, 0.9, 0.5, 0.5]})
    years = [2017, 2018, 2019, 2020]
    rows = []
    for soc in (1, 2):
        for y in years:
            g = growth(soc, y)
            rows.append((soc, y, 1000.0 * np.exp(g)))
    return base, pd.DataFrame(rows, columns=["soc", "year", "emp"])


def test_bartik_flat_employment_gives_zero():
    base, emp = bartik_inputs(lambda s, y: 0.0)
    out = build_bartik(base, emp, [2017, 2018, 2019])
    np.testing.assert_allclose(out["b"], 0.0, atol=1e-12)


def test_bartik_raw_shock_arithmetic():
    base, emp = bartik_inputs(lambda s, y: 0.05 if y == 2020 else 0.0)
    out = build_bartik(base, emp, [2017, 2018, 2019])
    cell = out.loc[(out["cz"] == 1) & (out["soc"] == 1) & (out["year"] == 2020)]
    assert cell["b_raw"].iloc[0] == pytest.approx(0.5)
    assert abs(out["b"].mean()) < 1e-9


def test_bartik_rejects_zero_employment():
    base, emp = bartik_inputs(lambda s, y: 0.0)
    emp.loc[0, "emp"] = 0.0
    with pytest.raises(InvalidInputError):
        build_bartik(base, emp, [2017])


def test_tercile_bins():
    assert set(bin_positive_terciles([-1.0, 0.0, -3.0])) == {"nonpositive"}
    bins = bin_positive_terciles(np.arange(1, 10, dtype=float))
    assert list(bins) == ["low"] * 3 + ["mid"] * 3 + ["high"] * 3
    assert list(bin_positive_terciles([0.2, 5.0, 1.0])) == ["low", "high", "mid"]
    mixed = bin_positive_terciles([-1, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9])
    assert len(mixed) == 11 and list(mixed[:2]) == ["nonpositive"] * 2


@pytest.mark.parametrize("beta,theta,expected", [(-0.059, 0.018, 0.14), (-0.059, 0.0043, 0.03),
                                                 (-0.059, 0.0, 0.0)])
def test_offset_ratio_fixtures(beta, theta, expected):
    assert round(offset_ratio(beta, theta, 0.45), 2) == expected


def test_offset_ratio_three_decimals_and_zero_beta():
    assert offset_ratio(-0.059, 0.018) == pytest.approx(0.137, abs=5e-4)
    assert offset_ratio(-0.059, 0.0043) == pytest.approx(0.033, abs=5e-4)
    with pytest.raises(InvalidInputError):
        offset_ratio(0.0, 0.01)
