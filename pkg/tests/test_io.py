import numpy as np
import pandas as pd
import pytest

from mpwedge import io
from mpwedge.errors import ValidationError


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


LOANS = ("loan_id,county,lender,vintage_year,annual_rate,principal,fico\n"
         "a1,1001,L1,2020,0.031,250000,740\n"
         "a2,1003,L2,2024,0.068,180000,690\n")


def test_well_formed_loans(tmp_path):
    df = io.read_table(write(tmp_path, "loans.csv", LOANS), "loans")
    assert list(df.columns) == ["loan_id", "county", "lender", "vintage_year", "annual_rate",
                                "principal", "fico"]
    assert df["county"].dtype == np.int64 and df["fico"].dtype == float
    assert io.covariates_of(df) == ["fico"]


@pytest.mark.parametrize("kind,text,line,column", [
    ("flows", "origin,destination,count\n1,2,5\n2,1,-3\n", 3, "count"),
    ("flows", "origin,destination,count\n1,2,5\n1,2,4\n", 3, "origin"),
    ("flows", "origin,destination,count\n1,2,five\n", 2, "count"),
    ("flows", "origin,destination,count,extra\n1,2,5,0\n", 1, "extra"),
    ("flows", "origin,destination\n1,2\n", 1, "count"),
    ("centroids", "cz,latitude,longitude,population\n1,95,10,100\n", 2, "latitude"),
    ("crosswalk", "county,cz,weight\n1,1,0.6\n1,2,0.3\n", 2, "weight"),
    ("loans", "county,loan_id,lender,vintage_year,annual_rate,principal\n", 1, None),
    ("loans", "loan_id,county,lender,vintage_year,annual_rate,principal\nx,1.5,L,2020,0.03,1\n",
     2, "county"),
    ("loans", "loan_id,county,lender,vintage_year,annual_rate,principal\nx,1,L,2020,0.03,0\n",
     2, "principal"),
    ("panel", "unit,period,cluster,y\n1,2020,1,\n", 2, "y"),
])
def test_rejections_name_line_and_column(tmp_path, kind, text, line, column):
    with pytest.raises(ValidationError) as err:
        io.read_table(write(tmp_path, f"{kind}.csv", text), kind)
    assert err.value.line == line
    assert err.value.column == column
    assert err.value.file.endswith(f"{kind}.csv")
    assert f"line {line}" in str(err.value)


def test_missing_file(tmp_path):
    with pytest.raises(ValidationError):
        io.read_table(tmp_path / "nope.csv", "flows")


def test_exposure_identity_enforced(tmp_path):
    good = "cz,p_new,wop,mpw\n1,700,680,20\n2,,650,\n"
    df = io.read_table(write(tmp_path, "e.csv", good), "exposure")
    assert np.isnan(df.loc[1, "mpw"])
    bad = "cz,p_new,wop,mpw\n1,700,680,20\n2,710,650,61\n"
    with pytest.raises(ValidationError) as err:
        io.read_table(write(tmp_path, "e.csv", bad), "exposure")
    assert (err.value.line, err.value.column) == (3, "mpw")


def test_exposure_round_trip_within_tolerance(tmp_path):
    rng = np.random.default_rng(0)
    p_new = rng.uniform(600, 800, 50)
    wop = rng.uniform(600, 800, 50)
    e = pd.DataFrame({"cz": np.arange(50), "p_new": p_new, "wop": wop, "mpw": p_new - wop})
    io.write_csv(e, tmp_path / "e.csv")
    back = io.read_table(tmp_path / "e.csv", "exposure")
    np.testing.assert_allclose(back["mpw"], e["mpw"], rtol=1e-9)


def test_eventstudy_round_trip(tmp_path):
    es = pd.DataFrame({"year": [2018, 2019, 2020], "coef": [0.01, 0.0, -0.0312345678912],
                       "se": [0.004, 0.0, 0.005], "reference": [0, 1, 0]})
    es["ci_lo"] = es["coef"] - 1.96 * es["se"]
    es["ci_hi"] = es["coef"] + 1.96 * es["se"]
    io.write_csv(es, tmp_path / "eventstudy.csv")
    text = (tmp_path / "eventstudy.csv").read_bytes()
    assert b"\r" not in text and b"-0.03123456789," in text
    back = io.read_table(tmp_path / "eventstudy.csv", "eventstudy")
    pd.testing.assert_frame_equal(back, es, check_dtype=False, rtol=1e-9)


def test_describe_counts_missing(tmp_path):
    df = io.read_table(write(tmp_path, "e.csv", "cz,p_new,wop,mpw\n1,700,680,20\n2,,650,\n"),
                       "exposure")
    text = io.describe({"exposure": df})
    assert "2 rows" in text and "p_new=1" in text and "mpw=1" in text
