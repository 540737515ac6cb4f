"""Bilateral migration flows: aggregation, in-shares, truncation and gravity.

Flow tables are DataFrames with ``origin, destination, count``. Weight
matrices are long DataFrames with ``destination, origin, weight`` sorted by
destination then origin, each destination's weights summing to one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from mpwedge.errors import InsufficientDataError, InvalidInputError

EARTH_RADIUS_KM = 6371.0


def apply_crosswalk(flows: pd.DataFrame, crosswalk: pd.DataFrame) -> pd.DataFrame:
    """Aggregate county flows to CZ pairs using ``county, cz, weight`` rows.

    A county split across CZs sends its flows in proportion to its weights at
    both ends. Rows touching a county absent from the crosswalk are dropped and
    listed in ``attrs["missing_counties"]``.
    """
    sums = crosswalk.groupby("county")["weight"].sum()
    bad = sums[(sums - 1.0).abs() > 1e-9]
    if len(bad):
        raise InvalidInputError(f"crosswalk weights do not sum to 1 for counties {bad.index.tolist()}")
    known = set(crosswalk["county"])
    missing = sorted((set(flows["origin"]) | set(flows["destination"])) - known)
    keep = flows["origin"].isin(known) & flows["destination"].isin(known)
    f = flows.loc[keep, ["origin", "destination", "count"]]
    cw = crosswalk[["county", "cz", "weight"]]
    f = f.merge(cw.rename(columns={"county": "origin", "cz": "o_cz", "weight": "w_o"}), on="origin")
    f = f.merge(cw.rename(columns={"county": "destination", "cz": "d_cz", "weight": "w_d"}),
                on="destination")
    f["count"] = f["count"] * f["w_o"] * f["w_d"]
    out = (f.groupby(["o_cz", "d_cz"], sort=True)["count"].sum().reset_index()
           .rename(columns={"o_cz": "origin", "d_cz": "destination"}))
    out.attrs["missing_counties"] = missing
    out.attrs["dropped_rows"] = int((~keep).sum())
    return out


def normalize_in_shares(flows: pd.DataFrame) -> pd.DataFrame:
    """In-migration shares: each origin's share of a destination's inflow.

    Self-flows are excluded; destinations with no inflow from other places are
    omitted.
    """
    f = flows.loc[flows["origin"] != flows["destination"], ["origin", "destination", "count"]]
    total = f.groupby("destination")["count"].transform("sum")
    f = f.loc[total > 0].assign(weight=lambda d: d["count"] / total[total > 0])
    return _tidy(f[["destination", "origin", "weight"]])


def _tidy(w: pd.DataFrame) -> pd.DataFrame:
    return w.sort_values(["destination", "origin"], kind="stable").reset_index(drop=True)


def truncate_top_k(weights: pd.DataFrame, k: int) -> pd.DataFrame:
    """Keep each destination's ``k`` largest-share origins and renormalize.

    Ties are broken by ascending origin code.
    """
    if k < 1:
        raise InvalidInputError("k must be at least 1")
    w = weights.sort_values(["destination", "weight", "origin"], ascending=[True, False, True],
                            kind="stable")
    cut = w.groupby("destination", sort=False)["weight"].transform("size") > k
    w = w.loc[w.groupby("destination", sort=False).cumcount() < k]
    cut = cut.loc[w.index]
    # untouched destinations keep their weights bit for bit
    total = w.groupby("destination")["weight"].transform("sum")
    w = w.assign(weight=np.where(cut, w["weight"] / total, w["weight"]))
    return _tidy(w)


def coverage(weights: pd.DataFrame, k: int) -> pd.Series:
    """Share of each destination's inflow captured by its top-k origins."""
    w = weights.sort_values(["destination", "weight", "origin"], ascending=[True, False, True])
    return w.groupby("destination").head(k).groupby("destination")["weight"].sum()


@dataclass(frozen=True)
class Centroid:
    cz: object
    latitude: float
    longitude: float

    def __post_init__(self):
        if abs(self.latitude) > 90 or abs(self.longitude) > 180:
            raise InvalidInputError(f"invalid coordinates ({self.latitude}, {self.longitude})")


def great_circle_distance(lat1, lon1, lat2, lon2, radius: float = EARTH_RADIUS_KM):
    """Haversine distance in km; vectorized over coordinate arrays (degrees)."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dp = p2 - p1
    dl = np.radians(np.asarray(lon2, dtype=float) - np.asarray(lon1, dtype=float))
    h = np.sin(dp / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2.0) ** 2
    return 2.0 * radius * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def centroid_distance(a: Centroid, b: Centroid) -> float:
    return float(great_circle_distance(a.latitude, a.longitude, b.latitude, b.longitude))


def population_weighted_centroid(parts, cz=None) -> Centroid:
    """Population-weighted mean latitude and longitude of ``(lat, lon, pop)`` parts."""
    arr = np.asarray(parts, dtype=float).reshape(-1, 3)
    pop = arr[:, 2]
    if np.any(pop < 0) or pop.sum() <= 0:
        raise InvalidInputError("total population must be positive")
    lat = float(np.sum(arr[:, 0] * pop) / pop.sum())
    lon = float(np.sum(arr[:, 1] * pop) / pop.sum())
    return Centroid(cz, lat, lon)


@dataclass(frozen=True)
class GravityModel:
    """log flow_od = b0 + b1 log pop_o + b2 log pop_d + b3 log dist_od."""

    intercept: float
    pop_origin_elasticity: float
    pop_dest_elasticity: float
    distance_elasticity: float
    se: tuple = ()
    n_pairs: int = 0
    n_zero_dropped: int = 0

    @property
    def coef(self) -> np.ndarray:
        return np.array([self.intercept, self.pop_origin_elasticity, self.pop_dest_elasticity,
                         self.distance_elasticity])

    def log_flow(self, pop_o, pop_d, dist):
        return (self.intercept + self.pop_origin_elasticity * np.log(pop_o)
                + self.pop_dest_elasticity * np.log(pop_d)
                + self.distance_elasticity * np.log(dist))


def _pair_frame(pairs: pd.DataFrame, centroids: pd.DataFrame) -> pd.DataFrame:
    c = centroids.set_index("cz")
    missing = sorted((set(pairs["origin"]) | set(pairs["destination"])) - set(c.index))
    if missing:
        raise InvalidInputError(f"no centroid/population for CZs {missing[:10]}")
    o = c.loc[pairs["origin"].to_numpy()]
    d = c.loc[pairs["destination"].to_numpy()]
    out = pairs.copy()
    out["pop_o"] = o["population"].to_numpy(dtype=float)
    out["pop_d"] = d["population"].to_numpy(dtype=float)
    out["dist"] = great_circle_distance(o["latitude"].to_numpy(), o["longitude"].to_numpy(),
                                        d["latitude"].to_numpy(), d["longitude"].to_numpy())
    return out


def fit_gravity(flows: pd.DataFrame, centroids: pd.DataFrame) -> GravityModel:
    """OLS of log flow on log populations and log great-circle distance.

    ``centroids`` has ``cz, latitude, longitude, population``. Only pairs with
    o != d and a positive count enter; the number of zero flows dropped is
    recorded on the model.
    """
    f = flows.loc[flows["origin"] != flows["destination"]]
    positive = f.loc[f["count"] > 0]
    if len(positive) < 5:
        raise InsufficientDataError(f"gravity needs at least 5 positive flows, got {len(positive)}")
    p = _pair_frame(positive[["origin", "destination", "count"]], centroids)
    X = np.column_stack([np.ones(len(p)), np.log(p["pop_o"]), np.log(p["pop_d"]), np.log(p["dist"])])
    y = np.log(p["count"].to_numpy(dtype=float))
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    dof = max(len(y) - 4, 1)
    try:
        V = np.linalg.inv(X.T @ X) * (resid @ resid / dof)
        se = tuple(np.sqrt(np.diag(V)))
    except np.linalg.LinAlgError:
        se = ()
    return GravityModel(*map(float, beta), se=se, n_pairs=len(p),
                        n_zero_dropped=int((f["count"] <= 0).sum()))


def predict_gravity_shares(model: GravityModel, centroids: pd.DataFrame,
                           pairs: pd.DataFrame | None = None) -> pd.DataFrame:
    """Exponentiated gravity flows renormalized into in-shares.

    By default every ordered pair of distinct CZs in ``centroids`` is used;
    pass ``pairs`` (origin, destination) to restrict the support.
    """
    if pairs is None:
        cz = centroids["cz"].to_numpy()
        o, d = np.meshgrid(cz, cz, indexing="ij")
        mask = o != d
        pairs = pd.DataFrame({"origin": o[mask], "destination": d[mask]})
    else:
        pairs = pairs.loc[pairs["origin"] != pairs["destination"], ["origin", "destination"]]
    p = _pair_frame(pairs.reset_index(drop=True), centroids)
    log_flow = model.log_flow(p["pop_o"], p["pop_d"], p["dist"]).to_numpy()
    # subtract the per-destination max before exponentiating
    shift = pd.Series(log_flow).groupby(p["destination"].to_numpy()).transform("max").to_numpy()
    p["count"] = np.exp(log_flow - shift)
    return normalize_in_shares(p[["origin", "destination", "count"]])
