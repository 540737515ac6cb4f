"""Panel containers, model specifications and estimate reports."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from mpwedge.errors import InsufficientDataError, InvalidInputError, ValidationError

TRANSFORMS = ("none", "log0.1", "log1p", "asinh")
ESTIMATORS = ("fe_ols", "tsls", "negbin", "long_diff")


def transform_outcome(y, kind: str = "none"):
    """Apply one of the count-outcome transforms to ``y``.

    ``kind`` is one of ``none``, ``log0.1`` (log(0.1 + y)), ``log1p`` (log(1 + y))
    or ``asinh``. Transforms other than ``none`` require y >= 0.
    """
    if kind not in TRANSFORMS:
        raise InvalidInputError(f"unknown transform {kind!r}; expected one of {TRANSFORMS}")
    arr = np.asarray(y, dtype=float)
    if kind == "none":
        return arr
    if np.any(arr < 0):
        raise InvalidInputError(f"transform {kind!r} requires a nonnegative outcome")
    if kind == "log0.1":
        return np.log(0.1 + arr)
    if kind == "log1p":
        return np.log1p(arr)
    return np.arcsinh(arr)


@dataclass(frozen=True)
class PanelDataset:
    """Unit-period(-group) observations held in a DataFrame.

    Column roles are named rather than positional, so the same frame can carry
    several outcomes and regressors. ``group`` is the optional third panel
    dimension (e.g. an occupation code) and ``weight`` an optional column of
    positive analytic weights.
    """

    frame: pd.DataFrame
    unit: str = "unit"
    period: str = "period"
    group: str | None = None
    cluster: str | None = None
    weight: str | None = None

    def __post_init__(self):
        df = self.frame
        keys = self.keys
        missing = [k for k in keys + [self.cluster, self.weight] if k is not None and k not in df]
        if missing:
            raise ValidationError(f"panel is missing columns {missing}")
        if df.duplicated(keys).any():
            dup = df.loc[df.duplicated(keys, keep=False), keys].head(3).to_dict("records")
            raise ValidationError(f"duplicate panel keys {keys}: {dup}")
        if self.cluster is not None and df[self.cluster].isna().any():
            raise ValidationError(f"cluster column {self.cluster!r} has missing values")
        if self.weight is not None and (df[self.weight] <= 0).any():
            raise ValidationError(f"weight column {self.weight!r} must be positive")

    @property
    def keys(self) -> list[str]:
        return [self.unit, self.period] + ([self.group] if self.group else [])

    def __len__(self):
        return len(self.frame)

    def with_frame(self, frame: pd.DataFrame) -> "PanelDataset":
        return replace(self, frame=frame)

    def column(self, name: str) -> np.ndarray:
        """Return a column; ``a:b`` denotes the elementwise product of ``a`` and ``b``."""
        parts = name.split(":")
        missing = [p for p in parts if p not in self.frame]
        if missing:
            raise InvalidInputError(f"unknown column(s) {missing} in term {name!r}")
        out = np.ones(len(self.frame))
        for p in parts:
            out = out * self.frame[p].to_numpy(dtype=float)
        return out

    def key_codes(self, key: str) -> np.ndarray:
        """Integer codes for a fixed-effect key; ``a:b`` interacts two keys."""
        parts = key.split(":")
        missing = [p for p in parts if p not in self.frame]
        if missing:
            raise InvalidInputError(f"unknown fixed-effect key(s) {missing}")
        if len(parts) == 1:
            codes, _ = pd.factorize(self.frame[parts[0]], sort=True)
        else:
            codes = self.frame.groupby(parts, sort=True, dropna=False).ngroup().to_numpy()
        return np.asarray(codes, dtype=np.int64)

    def weights(self) -> np.ndarray | None:
        if self.weight is None:
            return None
        return self.frame[self.weight].to_numpy(dtype=float)


@dataclass
class ModelSpec:
    """What to estimate.

    ``regressors`` are exogenous terms (``a:b`` for products). For ``tsls`` the
    single endogenous term and the single excluded instrument go in
    ``endogenous`` and ``instrument``. ``fe`` lists absorbed fixed-effect keys;
    ``sample`` holds ``{"drop": {col: values}, "keep": {col: values}}`` filters.
    """

    outcome: str
    regressors: list[str]
    fe: list[str] = field(default_factory=list)
    cluster: str | None = None
    transform: str = "none"
    estimator: str = "fe_ols"
    endogenous: str | None = None
    instrument: str | None = None
    offset: str | None = None
    sample: dict[str, dict[str, list]] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        self.regressors = list(self.regressors)
        self.fe = list(self.fe)
        if self.transform not in TRANSFORMS:
            raise InvalidInputError(f"unknown transform {self.transform!r}")
        if self.estimator not in ESTIMATORS:
            raise InvalidInputError(f"unknown estimator {self.estimator!r}")
        if len(set(self.regressors)) != len(self.regressors):
            raise InvalidInputError("regressor names must be unique")
        if self.estimator == "tsls":
            if not self.endogenous or not self.instrument:
                raise InvalidInputError("tsls needs one endogenous term and one instrument")
            if self.instrument in self.regressors or self.instrument == self.endogenous:
                raise InvalidInputError("excluded instrument must not be a regressor")
            if self.endogenous in self.regressors:
                raise InvalidInputError("endogenous term must not also be listed as exogenous")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelSpec":
        d = dict(d)
        for key in ("regressors", "fe"):
            if isinstance(d.get(key), str):
                d[key] = [d[key]]
        return cls(**d)


def apply_sample(data: PanelDataset, sample: dict[str, dict[str, list]] | None) -> PanelDataset:
    """Apply ``drop``/``keep`` value filters and return the restricted panel."""
    if not sample:
        return data
    df = data.frame
    mask = np.ones(len(df), dtype=bool)
    for col, values in (sample.get("drop") or {}).items():
        mask &= ~df[col].isin(list(values)).to_numpy()
    for col, values in (sample.get("keep") or {}).items():
        mask &= df[col].isin(list(values)).to_numpy()
    unknown = set(sample) - {"drop", "keep"}
    if unknown:
        raise InvalidInputError(f"unknown sample filter(s) {sorted(unknown)}")
    out = df.loc[mask]
    if out.empty:
        raise InsufficientDataError("sample filters leave no observations")
    return data.with_frame(out.reset_index(drop=True))


def add_event_time_terms(data: PanelDataset, exposure: str, reference,
                         prefix: str | None = None) -> tuple[PanelDataset, list[str]]:
    """Add ``exposure x 1{period == t}`` columns for every period except ``reference``.

    Returns the augmented panel and the new term names in period order.
    """
    df = data.frame.copy()
    periods = sorted(df[data.period].unique())
    if reference not in periods:
        raise InvalidInputError(f"reference period {reference!r} not in panel")
    prefix = prefix or exposure.replace(":", "_")
    x = data.column(exposure)
    names = []
    for t in periods:
        if t == reference:
            continue
        name = f"{prefix}_x_{t}"
        df[name] = x * (df[data.period].to_numpy() == t)
        names.append(name)
    return data.with_frame(df), names


@dataclass
class EstimateReport:
    """Coefficients, covariance and diagnostics from one estimation."""

    names: list[str]
    coef: np.ndarray
    vcov: np.ndarray
    nobs: int
    n_clusters: int | None = None
    n_singletons: int = 0
    vcov_type: str = "CR1"
    estimator: str = "fe_ols"
    first_stage: dict[str, float] | None = None
    converged: bool = True
    iterations: int = 0
    diagnostics: dict[str, Any] = field(default_factory=dict)
    fitted: np.ndarray | None = field(default=None, repr=False)
    resid: np.ndarray | None = field(default=None, repr=False)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    @property
    def tstat(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.coef / self.se

    @property
    def pvalue(self) -> np.ndarray:
        # normal reference distribution (large-G asymptotics)
        return 2.0 * stats.norm.sf(np.abs(self.tstat))

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"coefficient {name!r} not in report ({self.names})") from None

    def __getitem__(self, name: str) -> float:
        return float(self.coef[self.index(name)])

    def se_of(self, name: str) -> float:
        return float(self.se[self.index(name)])

    def conf_int(self, level: float = 0.95) -> np.ndarray:
        z = stats.norm.ppf(0.5 + level / 2.0)
        return np.column_stack([self.coef - z * self.se, self.coef + z * self.se])

    def table(self) -> pd.DataFrame:
        return pd.DataFrame({"name": self.names, "coef": self.coef, "se": self.se,
                             "t": self.tstat, "p": self.pvalue})


def check_terms(data: PanelDataset, terms: Sequence[str]) -> None:
    for term in terms:
        for part in term.split(":"):
            if part not in data.frame:
                raise InvalidInputError(f"unknown column {part!r} in term {term!r}")
