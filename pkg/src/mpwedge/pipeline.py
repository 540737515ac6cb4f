"""Config-driven orchestration: payments, wedge, instrument, estimates, placebo, offset.

A run reads CSV inputs named in a YAML config and writes ``exposure.csv``,
``estimates.csv``, ``eventstudy.csv``, ``placebo.csv``, ``topk.csv`` and
``summary.txt`` (each only when the run produces it). Outputs are staged in a
scratch directory and moved into place only after every stage succeeds.
"""

from __future__ import annotations

import logging
import os
import shutil
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from mpwedge import io
from mpwedge.analysis import attach_exposures, event_study, placebo_coefficients, top_k_path
from mpwedge.errors import InvalidInputError, MpwedgeError, ValidationError
from mpwedge.estimation import (EstimateReport, ModelSpec, PanelDataset, fit, wald_joint_test)
from mpwedge.exposure import (aggregate_county_predictions, build_mpw, build_predicted_wop,
                              build_wop, lender_leaveout_payments, offset_ratio,
                              variance_decomposition)
from mpwedge.mortgage import compute_p_new, compute_p_old, covariate_columns, fit_pricing_model
from mpwedge.network import apply_crosswalk, fit_gravity, normalize_in_shares, predict_gravity_shares

log = logging.getLogger(__name__)

OUTPUT_ENV = "MPWEDGE_OUTPUT_DIR"
INPUT_KINDS = {"loans": "loans", "flows": "flows", "crosswalk": "crosswalk",
               "centroids": "centroids", "panel": "panel", "soc_panel": "panel",
               "exposure": "exposure", "bartik": "bartik"}
OUTPUT_FILES = ("exposure.csv", "estimates.csv", "eventstudy.csv", "placebo.csv", "topk.csv",
                "summary.txt")
SPEC_EXTRAS = ("data", "years", "wald")
EXPOSURE_TERMS = {"mpw", "p_new", "wop", "predicted_wop", "predicted_mpw"}


class StageError(MpwedgeError):
    """A pipeline stage failed; ``stage`` names it and ``exit_code`` is the CLI code."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = 2 if isinstance(cause, ValidationError) else 3


def _default_vintages():
    return {"pricing": [2024], "shock": [2020, 2021], "pre": [2018, 2019]}


@dataclass
class RunConfig:
    """Everything a run needs; see README for the YAML keys."""

    inputs: dict
    specs: list = field(default_factory=list)
    post_start: int = 2022
    reference_year: int = 2019
    top_k: list = field(default_factory=list)
    top_k_spec: str | None = None
    placebo: dict | None = None
    penalty: float = 1.0
    missing_origin_policy: str = "renormalize"
    flows_level: str = "county"
    vintages: dict = field(default_factory=_default_vintages)
    leaveout: dict = field(default_factory=lambda: {"min_out_of_state": 50,
                                                    "coverage_floor": 0.70})
    instrument: bool = True
    event_study: dict | None = None
    offset: dict | None = None
    output_dir: str | None = None
    base_dir: str = "."

    def __post_init__(self):
        unknown = set(self.inputs) - set(INPUT_KINDS)
        if unknown:
            raise ValidationError(f"unknown input names {sorted(unknown)}", column="inputs")
        if "exposure" not in self.inputs:
            missing = [k for k in ("loans", "flows", "crosswalk") if k not in self.inputs]
            if missing:
                raise ValidationError(f"inputs need {missing} (or a precomputed exposure file)",
                                      column="inputs")
        if self.flows_level not in ("county", "cz"):
            raise ValidationError("flows_level must be 'county' or 'cz'", column="flows_level")
        if self.placebo is not None:
            if int(self.placebo.get("permutations", 0)) < 1:
                raise ValidationError("placebo permutations must be at least 1",
                                      column="placebo")
        names = [s.get("name") for s in self.specs]
        if any(not n for n in names) or len(set(names)) != len(names):
            raise ValidationError("every spec needs a unique name", column="specs")
        self.model_specs = {}
        for s in self.specs:
            core = {k: v for k, v in s.items() if k not in SPEC_EXTRAS}
            try:
                self.model_specs[s["name"]] = ModelSpec.from_dict(core)
            except (TypeError, InvalidInputError) as exc:
                raise ValidationError(f"spec {s['name']!r}: {exc}", column="specs") from exc

    def path(self, name: str) -> Path:
        p = Path(self.inputs[name])
        return p if p.is_absolute() else Path(self.base_dir) / p

    def spec_options(self, name: str) -> dict:
        return next(s for s in self.specs if s["name"] == name)

    def resolved_output_dir(self) -> Path:
        out = self.output_dir or os.environ.get(OUTPUT_ENV) or "mpwedge_out"
        p = Path(out)
        return p if p.is_absolute() or self.output_dir is None else Path(self.base_dir) / p

    def check_files(self) -> None:
        for name in self.inputs:
            if not self.path(name).exists():
                raise ValidationError("file not found", file=str(self.path(name)))

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "RunConfig":
        names = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = set(d) - names
        if unknown:
            raise ValidationError(f"unknown config keys {sorted(unknown)}")
        if "inputs" not in d:
            raise ValidationError("config needs an 'inputs' section", column="inputs")
        return cls(**d, base_dir=base_dir)

    @classmethod
    def from_yaml(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            d = yaml.safe_load(path.read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ValidationError(f"cannot read config ({exc})", file=str(path)) from exc
        if not isinstance(d, dict):
            raise ValidationError("config must be a mapping", file=str(path))
        return cls.from_dict(d, base_dir=str(path.parent))


@dataclass
class RunResult:
    tables: dict
    exposures: pd.DataFrame
    reports: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)


def cz_map_from_crosswalk(crosswalk: pd.DataFrame) -> pd.Series:
    """County -> CZ carrying its largest crosswalk weight (ties to the lower CZ code)."""
    cw = crosswalk.sort_values(["county", "weight", "cz"], ascending=[True, False, True],
                               kind="stable")
    return cw.drop_duplicates("county").set_index("county")["cz"]


def _stage(name: str):
    def wrap(fn):
        def inner(*a, **kw):
            try:
                return fn(*a, **kw)
            except StageError:
                raise
            except (MpwedgeError, ValueError, KeyError, np.linalg.LinAlgError) as exc:
                raise StageError(name, exc) from exc
        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        return inner
    return wrap


@_stage("ingest")
def load_inputs(config: RunConfig) -> dict[str, pd.DataFrame]:
    config.check_files()
    return {name: io.read_table(config.path(name), INPUT_KINDS[name]) for name in config.inputs}


def _vintage(loans: pd.DataFrame, years) -> pd.DataFrame:
    return loans.loc[loans["vintage_year"].isin(list(years))]


@_stage("payments")
def payments_stage(config: RunConfig, tables: dict, stats: dict):
    loans = tables["loans"]
    cz_map = cz_map_from_crosswalk(tables["crosswalk"])
    v = config.vintages
    model = fit_pricing_model(_vintage(loans, v["pricing"]), penalty=config.penalty)
    shock = _vintage(loans, v["shock"])
    p_new = compute_p_new(model, shock, cz_map)
    p_old = compute_p_old(shock, cz_map)
    stats["pricing_loans"] = model.diagnostics["n_loans"]
    stats["skipped_loans_p_new"] = p_new.attrs["n_skipped"]
    stats["skipped_loans_p_old"] = p_old.attrs["n_skipped"]
    return cz_map, p_new.set_index("cz")["p_new"], p_old.set_index("cz")["p_old"]


@_stage("weights")
def weights_stage(config: RunConfig, tables: dict, stats: dict):
    flows = tables["flows"]
    if config.flows_level == "county":
        flows = apply_crosswalk(flows, tables["crosswalk"])
        stats["flow_rows_dropped"] = flows.attrs["dropped_rows"]
    weights = normalize_in_shares(flows)
    stats["destinations_with_weights"] = int(weights["destination"].nunique())
    return flows, weights


@_stage("instrument")
def instrument_stage(config: RunConfig, tables: dict, cz_flows, cz_map, stats: dict):
    if "centroids" not in tables:
        raise InvalidInputError("the instrument needs a centroids file")
    loans = tables["loans"]
    pre = _vintage(loans, config.vintages["pre"])
    shock = _vintage(loans, config.vintages["shock"])
    gravity = fit_gravity(cz_flows, tables["centroids"])
    shares = predict_gravity_shares(gravity, tables["centroids"])
    lo = lender_leaveout_payments(pre, shock, covariate_columns(loans), **config.leaveout)
    z_origin = aggregate_county_predictions(lo.predictions, pre, cz_map)
    stats["gravity"] = dict(zip(["b0", "b1_pop_origin", "b2_pop_dest", "b3_distance"],
                                gravity.coef.tolist()))
    stats["gravity_zero_flows_dropped"] = gravity.n_zero_dropped
    stats["leaveout_counties"] = int(len(lo.predictions))
    stats["leaveout_counties_omitted"] = len(lo.omitted_counties)
    return build_predicted_wop(shares, z_origin, config.missing_origin_policy)


def construct_exposures(config: RunConfig, tables: dict, stats: dict | None = None):
    """Payments -> weights -> wedge (-> instrument). Returns (exposures, weights, p_old, p_new)."""
    stats = {} if stats is None else stats
    if "exposure" in tables:
        return tables["exposure"], None, None, None
    cz_map, p_new, p_old = payments_stage(config, tables, stats)
    cz_flows, weights = weights_stage(config, tables, stats)
    wop = _stage("wedge")(build_wop)(weights, p_old, config.missing_origin_policy)
    z = instrument_stage(config, tables, cz_flows, cz_map, stats) if config.instrument else None
    exposures = build_mpw(p_new, wop, z)
    return exposures, weights, p_old, p_new


def _panel(config: RunConfig, tables: dict, exposures: pd.DataFrame, which: str) -> PanelDataset:
    if which not in tables:
        raise InvalidInputError(f"no {which!r} input for this spec")
    frame = attach_exposures(tables[which], exposures, config.post_start)
    has = lambda c: c in frame.columns  # noqa: E731
    return PanelDataset(frame, group="group" if has("group") else None,
                        cluster="cluster" if has("cluster") else None,
                        weight="weight" if has("weight") else None)


def _report_rows(spec_name: str, rep: EstimateReport) -> list[dict]:
    F = rep.first_stage.get("F") if rep.first_stage else None
    rows = []
    for i, n in enumerate(rep.names):
        rows.append({"spec": spec_name, "name": n, "coef": rep.coef[i], "se": rep.se[i],
                     "t": rep.tstat[i], "p": rep.pvalue[i], "nobs": rep.nobs,
                     "n_clusters": rep.n_clusters if rep.n_clusters is not None else np.nan,
                     "first_stage_f": np.nan if F is None else F})
    return rows


@_stage("estimates")
def estimate_stage(config: RunConfig, tables: dict, exposures: pd.DataFrame, only=None):
    reports, waldp = {}, {}
    for name, spec in config.model_specs.items():
        if only is not None and name not in only:
            continue
        opts = config.spec_options(name)
        data = _panel(config, tables, exposures, opts.get("data", "panel"))
        kw = {}
        if spec.estimator == "long_diff":
            y0, y1 = opts.get("years", (config.reference_year, data.frame["period"].max()))
            kw = {"year0": y0, "year1": y1}
        try:
            rep = fit(spec, data, **kw)
        except MpwedgeError as exc:
            raise StageError(f"estimates:{name}", exc) from exc
        reports[name] = rep
        if opts.get("wald"):
            waldp[name] = wald_joint_test(rep, opts["wald"])
    return reports, waldp


@_stage("event_study")
def event_study_stage(config: RunConfig, tables: dict, exposures: pd.DataFrame):
    es = config.event_study
    spec = config.model_specs[es["spec"]]
    data = _panel(config, tables, exposures, config.spec_options(es["spec"]).get("data", "panel"))
    if "drop" in es:
        controls = [r for r in spec.regressors if r not in set(es["drop"])]
    else:
        controls = [r for r in spec.regressors if not set(r.split(":")) & EXPOSURE_TERMS]
    base = ModelSpec(**{**spec.__dict__, "regressors": controls})
    return event_study(data, base, es.get("exposure", "mpw"),
                       es.get("reference", config.reference_year))


def _baseline_name(config: RunConfig, explicit: str | None) -> str:
    if explicit:
        return explicit
    for name, s in config.model_specs.items():
        if s.estimator == "fe_ols" and "mpw:post" in s.regressors:
            return name
    raise InvalidInputError("no fe_ols spec with an 'mpw:post' term")


@_stage("top_k")
def top_k_stage(config: RunConfig, tables, weights, p_new, p_old) -> pd.DataFrame:
    name = _baseline_name(config, config.top_k_spec)
    spec = config.model_specs[name]
    frame = tables[config.spec_options(name).get("data", "panel")]
    kw = {"cluster": "cluster"} if "cluster" in frame else {}
    path = top_k_path(frame, p_new, weights, p_old, spec, ks=[int(k) for k in config.top_k],
                      post_start=config.post_start, policy=config.missing_origin_policy,
                      data_kwargs=kw)
    path.insert(0, "spec", name)
    return path


@_stage("placebo")
def placebo_stage(config: RunConfig, tables, exposures):
    pl = config.placebo
    name = _baseline_name(config, pl.get("spec"))
    data = _panel(config, tables, exposures, config.spec_options(name).get("data", "panel"))
    res = placebo_coefficients(data, exposures, config.model_specs[name],
                               int(pl["permutations"]), int(pl.get("master_seed", 0)),
                               pl.get("term", "mpw:post"))
    res["spec"] = name
    return res


def _lookup(reports: dict, ref: str) -> float:
    spec, _, term = ref.partition("/")
    if spec not in reports:
        raise InvalidInputError(f"offset references unknown spec {spec!r}")
    return float(reports[spec][term])


@_stage("offset")
def offset_stage(config: RunConfig, reports: dict) -> dict:
    o = config.offset
    beta = _lookup(reports, o["beta"])
    e_bar = float(o.get("e_bar", 0.45))
    thetas = o.get("theta", {})
    if isinstance(thetas, str):
        thetas = {"theta": thetas}
    return {label: {"beta": beta, "theta": _lookup(reports, ref), "e_bar": e_bar,
                    "ratio": offset_ratio(beta, _lookup(reports, ref), e_bar)}
            for label, ref in thetas.items()}


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return io.FLOAT_FORMAT % x
    return str(x)


def _summary(result: RunResult, placebo: dict | None, offsets: dict, waldp: dict) -> str:
    lines = ["mpwedge run summary", ""]
    e = result.exposures
    lines.append(f"exposure rows: {len(e)}; with wedge: {int(e['mpw'].notna().sum())}; "
                 f"with instrument: {int(e['predicted_wop'].notna().sum())}")
    for k, v in result.stats.items():
        if isinstance(v, dict):
            lines.append(f"{k}: " + ", ".join(f"{a}={_fmt(b)}" for a, b in v.items()))
        else:
            lines.append(f"{k}: {_fmt(v)}")
    lines += ["", "estimates"]
    for name, rep in result.reports.items():
        diag = [f"N={rep.nobs}", f"G={rep.n_clusters}", f"singletons={rep.n_singletons}",
                f"vcov={rep.vcov_type}"]
        if rep.first_stage:
            diag.append(f"first_stage_F={_fmt(float(rep.first_stage['F']))}")
        if rep.converged is not None:
            diag.append(f"converged={rep.converged}")
        if name in waldp:
            diag.append(f"joint_wald_p={_fmt(float(waldp[name]))}")
        lines.append(f"  {name} ({rep.estimator}): " + ", ".join(diag))
        for i, n in enumerate(rep.names):
            if "[" in n:
                continue
            lines.append(f"    {n}: coef={_fmt(float(rep.coef[i]))} se={_fmt(float(rep.se[i]))}")
    if placebo is not None:
        lines += ["", f"placebo ({placebo['spec']}): actual={_fmt(placebo['actual'])} "
                      f"R={placebo['n_perm']} master_seed={placebo['master_seed']} "
                      f"centered_p={_fmt(placebo['p_value'])}"]
    if offsets:
        lines += ["", "offset ratios (e_bar * theta / |beta|)"]
        for label, o in offsets.items():
            lines.append(f"  {label}: beta={_fmt(o['beta'])} theta={_fmt(o['theta'])} "
                         f"e_bar={_fmt(o['e_bar'])} ratio={_fmt(o['ratio'])}")
    return "\n".join(lines) + "\n"


ALL_STEPS = ("exposure", "estimates", "event_study", "top_k", "placebo", "offset")


def run_pipeline(config: RunConfig, steps=ALL_STEPS, output_dir=None) -> RunResult:
    """Run the configured stages and write their outputs.

    ``steps`` selects what to emit; stages a step needs run regardless. On
    any failure no output file is left behind and a StageError is raised.
    """
    steps = set(steps)
    out = Path(output_dir) if output_dir is not None else config.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=".mpwedge-", dir=out))
    try:
        result = _run(config, steps, scratch)
        for name in OUTPUT_FILES:
            if (scratch / name).exists():
                os.replace(scratch / name, out / name)
                result.outputs[name] = out / name
        return result
    finally:
        shutil.rmtree(scratch, ignore_errors=True)


def _run(config: RunConfig, steps: set, scratch: Path) -> RunResult:
    tables = load_inputs(config)
    stats: dict = {}
    exposures, weights, p_old, p_new = construct_exposures(config, tables, stats)
    if exposures["mpw"].notna().sum() >= 2:
        stats["variance_decomposition"] = variance_decomposition(exposures).as_dict()
    result = RunResult(tables, exposures, stats=stats)
    io.write_csv(exposures[["cz", "p_new", "wop", "mpw", "predicted_wop"]],
                 scratch / "exposure.csv")

    waldp, placebo, offsets = {}, None, {}
    wants_reports = bool(steps & {"estimates", "offset"}) and config.specs
    if wants_reports:
        result.reports, waldp = estimate_stage(config, tables, exposures)
        rows = [r for name, rep in result.reports.items() for r in _report_rows(name, rep)]
        io.write_csv(pd.DataFrame(rows), scratch / "estimates.csv")
    if "event_study" in steps and config.event_study:
        _, table = event_study_stage(config, tables, exposures)
        io.write_csv(table, scratch / "eventstudy.csv")
    if "top_k" in steps and config.top_k:
        if weights is None:
            raise StageError("top_k", InvalidInputError("top-K needs loans and flows, not a "
                                                        "precomputed exposure file"))
        io.write_csv(top_k_stage(config, tables, weights, p_new, p_old), scratch / "topk.csv")
    if "placebo" in steps and config.placebo:
        placebo = placebo_stage(config, tables, exposures)
        draws = placebo["placebos"]
        io.write_csv(pd.DataFrame({"replication": np.arange(len(draws) + 1),
                                   "coef": np.concatenate([[placebo["actual"]], draws]),
                                   "actual": np.r_[1, np.zeros(len(draws), dtype=int)]}),
                     scratch / "placebo.csv")
        stats["placebo_p_value"] = placebo["p_value"]
    if "offset" in steps and config.offset and result.reports:
        offsets = offset_stage(config, result.reports)
    result.stats["offsets"] = offsets
    text = _summary(RunResult(tables, exposures, result.reports,
                              {k: v for k, v in stats.items() if k not in ("offsets",
                                                                            "placebo_p_value")}),
                    placebo, offsets, waldp)
    (scratch / "summary.txt").write_text(text)
    return result
