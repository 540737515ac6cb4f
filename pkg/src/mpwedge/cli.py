"""Command-line front end.

Exit codes: 0 success, 2 validation failure, 3 estimation failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import pandas as pd
import yaml

from mpwedge import io
from mpwedge.dgp import DgpConfig, generate_world
from mpwedge.errors import MpwedgeError, ValidationError
from mpwedge.exposure import offset_ratio
from mpwedge.pipeline import OUTPUT_ENV, RunConfig, StageError, load_inputs, run_pipeline

EXIT_OK, EXIT_VALIDATION, EXIT_ESTIMATION = 0, 2, 3

STEPS = {
    "wedge": ("exposure",),
    "estimate": ("exposure", "estimates", "event_study", "top_k"),
    "iv": ("exposure", "estimates"),
    "placebo": ("exposure", "placebo"),
    "report": ("exposure", "estimates", "event_study", "top_k", "placebo", "offset"),
}


def synthetic_run_config(permutations: int = 1000, master_seed: int = 0) -> dict:
    """Run config matching the files written by ``dgp generate``."""
    ctrl = ["ctrl1", "ctrl2"]
    twfe = {"fe": ["unit", "period"], "cluster": "cluster"}
    return {
        "inputs": {name: f"{name}.csv" for name in
                   ("loans", "flows", "crosswalk", "centroids", "panel", "soc_panel")},
        "post_start": 2022,
        "reference_year": 2019,
        "penalty": 1.0,
        "missing_origin_policy": "renormalize",
        "top_k": [1, 3, 5, 10, 20],
        "specs": [
            {"name": "baseline", "outcome": "college_inmig", "regressors": ["mpw:post", *ctrl],
             **twfe},
            {"name": "components", "outcome": "college_inmig",
             "regressors": ["p_new:post", "wop:post", *ctrl], "wald": ["p_new:post", "wop:post"],
             **twfe},
            {"name": "iv", "outcome": "college_inmig", "regressors": ["p_new:post", *ctrl],
             "estimator": "tsls", "endogenous": "wop:post", "instrument": "predicted_wop:post",
             **twfe},
            {"name": "h1b", "outcome": "h1b_new", "regressors": ["mpw:post", *ctrl], **twfe},
            {"name": "h1b_asinh", "outcome": "h1b_rate", "regressors": ["mpw:post", *ctrl],
             "transform": "asinh", **twfe},
            {"name": "h1b_negbin", "outcome": "h1b_count", "regressors": ["mpw:post"],
             "estimator": "negbin", "offset": "log_emp", "cluster": "cluster"},
            {"name": "long_difference", "outcome": "college_inmig", "regressors": ["mpw"],
             "estimator": "long_diff", "years": [2019, 2024]},
            {"name": "triple", "data": "soc_panel", "outcome": "h1b_soc",
             "regressors": ["mpw:post:b", "b", "post:b", "mpw:b"],
             "fe": ["unit:period", "unit:group", "group:period"], "cluster": "cluster"},
        ],
        "event_study": {"spec": "baseline", "exposure": "mpw", "reference": 2019},
        "placebo": {"spec": "baseline", "permutations": permutations, "master_seed": master_seed},
        "offset": {"beta": "baseline/mpw:post", "theta": {"h1b_new": "h1b/mpw:post"},
                   "e_bar": 0.45},
    }


def write_world(world, out: Path, permutations: int = 1000) -> list[Path]:
    """Write the synthetic CSV family, truth.csv and a matching config.yaml."""
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "loans.csv": world.loans,
        "flows.csv": world.flows,
        "centroids.csv": world.centroids,
        "crosswalk.csv": world.crosswalk,
        "panel.csv": world.panel,
        "soc_panel.csv": world.soc_panel,
        "bartik.csv": world.bartik,
        "exposure_true.csv": world.exposures,
    }
    written = []
    for name, frame in files.items():
        io.write_csv(frame, out / name)
        written.append(out / name)
    truth = pd.DataFrame({"parameter": list(world.truth),
                          "value": [io.FLOAT_FORMAT % v if isinstance(v, float) else str(v)
                                    for v in world.truth.values()]})
    io.write_csv(truth, out / "truth.csv")
    cfg = synthetic_run_config(permutations, world.config.master_seed)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=False))
    return written + [out / "truth.csv", out / "config.yaml"]


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_yaml(args.config)
    if getattr(args, "post_start", None) is not None:
        cfg.post_start = args.post_start
    if getattr(args, "penalty", None) is not None:
        cfg.penalty = args.penalty
    if getattr(args, "policy", None) is not None:
        cfg.missing_origin_policy = args.policy
    if getattr(args, "permutations", None) is not None or getattr(args, "seed", None) is not None:
        pl = dict(cfg.placebo or {})
        if args.permutations is not None:
            if args.permutations < 1:
                raise ValidationError("--permutations must be at least 1")
            pl["permutations"] = args.permutations
        if args.seed is not None:
            pl["master_seed"] = args.seed
        cfg.placebo = pl
    if getattr(args, "output_dir", None):
        cfg.output_dir = str(Path(args.output_dir).resolve())
    return cfg


def cmd_validate(args) -> int:
    cfg = _load_config(args)
    tables = load_inputs(cfg)
    print(io.describe(tables))
    print("validation passed")
    return EXIT_OK


def _run(args, steps, only_iv=False) -> int:
    cfg = _load_config(args)
    if only_iv:
        cfg.specs = [s for s in cfg.specs if s.get("estimator") == "tsls"]
        if not cfg.specs:
            raise ValidationError("config has no tsls spec", file=args.config)
        cfg.model_specs = {k: v for k, v in cfg.model_specs.items() if v.estimator == "tsls"}
    if steps is STEPS["placebo"] and not cfg.placebo:
        raise ValidationError("config has no placebo section", file=args.config)
    result = run_pipeline(cfg, steps)
    for name, path in result.outputs.items():
        print(f"wrote {path}")
    return EXIT_OK


def cmd_offset(args) -> int:
    print(io.FLOAT_FORMAT % offset_ratio(args.beta, args.theta, args.e_bar))
    return EXIT_OK


def cmd_dgp_generate(args) -> int:
    overrides = {}
    if args.config:
        overrides = yaml.safe_load(Path(args.config).read_text()) or {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    world = generate_world(DgpConfig.from_dict(overrides))
    out = Path(args.output_dir or os.environ.get(OUTPUT_ENV) or "synthetic")
    for path in write_world(world, out, args.permutations):
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpwedge", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name, help_, func, steps=None, iv=False):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", help="YAML run config")
        sp.add_argument("-o", "--output-dir",
                        help=f"output directory (default: config, then ${OUTPUT_ENV})")
        sp.add_argument("--post-start", type=int)
        sp.add_argument("--penalty", type=float, help="ridge penalty for the pricing model")
        sp.add_argument("--policy", choices=["renormalize", "missing"],
                        help="origins without a payment")
        sp.add_argument("--permutations", type=int, help="placebo replications R")
        sp.add_argument("--seed", type=int, help="placebo master seed")
        if steps is None:
            sp.set_defaults(func=func)
        else:
            sp.set_defaults(func=lambda a: func(a, steps, iv))
        return sp

    with_config("validate", "check input files against their schemas", cmd_validate)
    with_config("wedge", "build exposure.csv", _run, STEPS["wedge"])
    with_config("estimate", "fit every configured spec", _run, STEPS["estimate"])
    with_config("iv", "fit the configured 2SLS specs", _run, STEPS["iv"], True)
    with_config("placebo", "network permutation placebo", _run, STEPS["placebo"])
    with_config("report", "run the full pipeline", _run, STEPS["report"])

    off = sub.add_parser("offset", help="offset ratio e_bar * theta / |beta|")
    off.add_argument("--beta", type=float, required=True)
    off.add_argument("--theta", type=float, required=True)
    off.add_argument("--e-bar", type=float, default=0.45)
    off.set_defaults(func=cmd_offset)

    dgp = sub.add_parser("dgp", help="synthetic worlds")
    dsub = dgp.add_subparsers(dest="dgp_command", required=True)
    gen = dsub.add_parser("generate", help="write a synthetic CSV family with truth.csv")
    gen.add_argument("-o", "--output-dir")
    gen.add_argument("--config", help="YAML file of generator settings")
    gen.add_argument("--seed", type=int, help="master seed")
    gen.add_argument("--permutations", type=int, default=1000,
                     help="placebo R written into the generated config.yaml")
    gen.set_defaults(func=cmd_dgp_generate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except MpwedgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (OSError, yaml.YAMLError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
