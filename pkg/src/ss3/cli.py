"""Command-line front end.

Subcommands cover the artifact lifecycle: generate synthetic
observations with a truth sidecar, fit a single estimate, run the
stability selection pipeline, score an estimate against a truth matrix,
evaluate false-discovery certificates, and run the preset studies.

Exit codes: 0 success, 2 configuration or input error, 3 numeric
failure, 130 interrupt (after flushing partial experiment results).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .bounds import (
    dimT_bound,
    kappa_indiv_estimate,
    prop5_bound,
    prop6_bound,
    theorem4_terms,
)
from .estimators import (
    EstimatorConfig,
    estimate_column,
    estimate_tangent,
    extract_tangent,
    pca_column,
    point_estimate,
)
from .experiments import PRESET_NAMES, REPORT_SCHEMA, preset_config, run_experiment
from .linalg import TangentSpace
from .matio import (
    load_matrix,
    load_observations,
    load_truth,
    read_json,
    save_matrix,
    save_observations,
    save_truth,
    write_json,
)
from .metrics import discovery_metrics
from .sampling import (
    calibrate_snr,
    complementary_bags,
    gen_completion,
    gen_denoise,
    gen_linear,
    gen_low_rank,
)
from .stability import algorithm1, average_projectors, column_stability, run_pipeline

__all__ = ["main"]

_ESTIMATOR_CHOICES = ("svt", "als", "spectral", "pca")


def _parse_floats(values) -> tuple:
    return tuple(float(v) for v in values)


def _estimator_config(args) -> EstimatorConfig:
    kind = "pca_column" if args.estimator == "pca" else args.estimator
    kwargs = {"kind": kind, "lam": args.lam, "k": args.k}
    for flag, field_name in (
        ("max_iters", "max_iters"),
        ("conv_tol", "conv_tol"),
        ("rank_tol", "rank_tol"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            kwargs[field_name] = value
    return EstimatorConfig(**kwargs)


def _add_estimator_flags(sub, default="svt"):
    sub.add_argument(
        "--estimator", choices=_ESTIMATOR_CHOICES, default=default,
        help="base estimator run on each bag or on the full data",
    )
    sub.add_argument(
        "--lambda", dest="lam", type=float, default=0.0,
        help="regularization weight (nuclear-norm for svt, ridge for als)",
    )
    sub.add_argument(
        "--k", type=int, default=1,
        help="rank cap for als / spectral / pca",
    )
    sub.add_argument("--max-iters", type=int, default=None)
    sub.add_argument("--conv-tol", type=float, default=None)
    sub.add_argument(
        "--rank-tol", type=float, default=None,
        help="relative singular-value cutoff for tangent extraction",
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    """Draw a synthetic truth plus observations; write both to a directory."""
    p1, p2 = args.dims
    truth = gen_low_rank(p1, p2, np.array(_parse_floats(args.spectrum)), args.seed)
    if args.sigma is not None:
        scale = float(args.sigma)
    elif args.snr is not None:
        kwargs = {"m": args.n} if args.model == "completion" else {}
        if args.model == "denoise":
            kwargs["gamma"] = args.gamma
        scale = calibrate_snr(truth, args.model, args.snr, seed=args.seed, **kwargs)
    else:
        raise ValueError("one of --snr or --sigma is required")
    data_seed = args.seed + 1
    if args.model == "completion":
        obs = gen_completion(truth, args.n, scale, data_seed)
    elif args.model == "denoise":
        obs = gen_denoise(truth, args.n, scale, args.gamma, data_seed)
    else:
        obs = gen_linear(truth, args.n, scale, data_seed)
    meta = {
        "model": args.model,
        "n": args.n,
        "scale": scale,
        "seed": args.seed,
        "data_seed": data_seed,
    }
    if args.model == "denoise":
        meta["gamma"] = args.gamma
    if args.snr is not None:
        meta["snr"] = args.snr
    save_observations(args.out, obs, meta=meta)
    save_truth(args.out, truth)
    print(f"wrote {obs.n_obs} {args.model} observations and truth sidecar to {args.out}")
    return 0


def cmd_estimate(args) -> int:
    """Fit the configured estimator on stored observations; write the result."""
    obs, _ = load_observations(args.obs)
    cfg = _estimator_config(args)
    if cfg.kind == "pca_column":
        M = pca_column(obs, cfg.k).basis
        label = f"rank-{M.shape[1]} column basis"
    else:
        M = point_estimate(obs, cfg)
        label = "matrix estimate"
    save_matrix(M, args.out)
    print(f"wrote {label} to {args.out}")
    return 0


def _basis_paths(out_path: str, selected) -> dict:
    """Write the selected bases as CSV files beside the report."""
    stem = out_path[:-5] if out_path.endswith(".json") else out_path
    entry = {"col_basis": None, "row_basis": None}
    spaces = (
        [("col_basis", selected.col), ("row_basis", selected.row)]
        if isinstance(selected, TangentSpace)
        else [("col_basis", selected)]
    )
    for name, space in spaces:
        if space.rank == 0:
            continue
        path = f"{stem}_{name}.csv"
        save_matrix(space.basis, path)
        entry[name] = os.path.basename(path)
    return entry


def cmd_stabilize(args) -> int:
    """Run bagging, averaging, and selection on stored observations."""
    if args.alpha <= 0.5:
        print(
            f"warning: alpha={args.alpha:g} is at or below 0.5; the "
            "false-discovery guarantees need alpha > 0.5",
            file=sys.stderr,
        )
    obs, _ = load_observations(args.obs)
    report = run_pipeline(
        obs,
        _estimator_config(args),
        args.alpha,
        args.bags,
        args.seed,
        mode=args.mode,
        rescale_lambda=args.rescale_lambda,
        full_curve=args.full_curve,
    )
    payload = {
        "schema": REPORT_SCHEMA,
        "mode": args.mode,
        "alpha": report.alpha,
        "r_selected": report.r_selected,
        "membership_level": report.membership_level,
        "sigma_min_curve": [[int(r), float(s)] for r, s in report.sigma_min_curve],
        "diagnostics": report.diagnostics,
        "selected": _basis_paths(args.out, report.selected),
    }
    write_json(payload, args.out)
    print(f"selected rank {report.r_selected} at alpha={report.alpha:g}; "
          f"report in {args.out}")
    return 0


def cmd_metrics(args) -> int:
    """Score a stored estimate against a stored truth matrix."""
    tol = args.rank_tol if args.rank_tol is not None else EstimatorConfig().rank_tol
    T_hat = extract_tangent(load_matrix(args.estimate), tol)
    T_star = extract_tangent(load_matrix(args.truth), tol)
    payload = discovery_metrics(T_hat, T_star).to_json_dict()
    text = json.dumps(payload, sort_keys=True, indent=2)
    if args.out:
        write_json(payload, args.out)
    print(text)
    return 0


def _oracle_data_model(truth, meta):
    model = meta.get("model")
    scale = meta.get("scale")
    n_half = int(meta["n"]) // 2
    if scale is None or n_half < 1:
        raise ValueError(
            "observations lack generation metadata; oracle bounds need "
            "directories written by the generate subcommand"
        )
    if model == "completion":
        return lambda s: gen_completion(truth, n_half, scale, s)
    if model == "denoise":
        gamma = float(meta.get("gamma", 0.0))
        return lambda s: gen_denoise(truth, n_half, scale, gamma, s)
    if model == "linear":
        return lambda s: gen_linear(truth, n_half, scale, s)
    raise ValueError(f"unknown observation model {model!r}")


def cmd_bounds(args) -> int:
    """Evaluate false-discovery certificates for a selection on stored data."""
    obs, meta = load_observations(args.obs)
    cfg = _estimator_config(args)
    if obs.n_obs % 2:
        raise ValueError("bounds needs an even observation count for bagging")
    plan = complementary_bags(obs.n_obs, args.bags, args.seed)
    if args.mode == "column":
        estimates = [estimate_column(obs.subset(b), cfg) for b in plan.bags]
        selection = column_stability(estimates, args.alpha)
    else:
        estimates = [estimate_tangent(obs.subset(b), cfg) for b in plan.bags]
        selection = algorithm1(average_projectors(estimates), args.alpha)
    payload = {
        "schema": REPORT_SCHEMA,
        "alpha": args.alpha,
        "r_selected": selection.r_selected,
    }
    if args.truth:
        truth = load_truth(args.truth)
        breport = theorem4_terms(
            truth,
            cfg,
            _oracle_data_model(truth, meta),
            args.alpha,
            args.bags,
            args.basis_mode,
            args.mc_reps,
            args.seed + 1,
            T_selected=selection.selected,
            bag_tangents=estimates,
        )
        report_json = breport.to_json_dict()
        # the report's own mode key is the selection mode; the payload's
        # mode key says where the certificate came from
        report_json["selection_mode"] = report_json.pop("mode")
        payload.update(report_json)
        payload["mode"] = "oracle"
    else:
        if args.mode == "column":
            raise ValueError("data-driven bounds support tangent mode only")
        avg = average_projectors(estimates)
        q = avg.trace_avg()
        kappa, _ = kappa_indiv_estimate(avg)
        payload.update({
            "mode": "data-driven",
            "q": q,
            "kappa_indiv": kappa,
            "dimT_bound": dimT_bound(q, args.alpha),
            "prop5_penalty": prop5_bound(0.0, q, args.alpha),
            "prop6_total": prop6_bound(q, obs.p1, obs.p2, kappa, args.alpha),
        })
    if args.out:
        write_json(payload, args.out)
    print(json.dumps(payload, sort_keys=True, indent=2))
    return 0


def _option_pairs(items):
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ValueError(f"--option expects KEY=VALUE, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        yield key, value


def _estimator_from_dict(d: dict) -> EstimatorConfig:
    kwargs = dict(d)
    if kwargs.get("kind") == "pca":
        kwargs["kind"] = "pca_column"
    return EstimatorConfig(**kwargs)


def cmd_experiment(args) -> int:
    """Run one preset study; flags override any config-file values."""
    file_cfg = read_json(args.config) if args.config else {}
    name = args.preset or file_cfg.get("experiment")
    if not name:
        raise ValueError("an experiment is required via --preset or --config")
    overrides = {}
    for key in ("trials", "seed", "B", "snr_definition"):
        if key in file_cfg:
            overrides[key] = file_cfg[key]
    for key in ("alpha", "snr", "spectrum", "dims"):
        if key in file_cfg:
            overrides[key] = tuple(file_cfg[key])
    if "estimator" in file_cfg:
        overrides["estimator_cfg"] = _estimator_from_dict(file_cfg["estimator"])
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.bags is not None:
        overrides["B"] = args.bags
    if args.alpha is not None:
        overrides["alpha"] = tuple(args.alpha)
    if args.snr is not None:
        overrides["snr"] = tuple(args.snr)
    if args.dims is not None:
        overrides["dims"] = tuple(args.dims)
    if args.spectrum is not None:
        overrides["spectrum"] = _parse_floats(args.spectrum)
    options = dict(file_cfg.get("options", {}))
    options.update(_option_pairs(args.option))
    if args.no_figures:
        options["figures"] = False
    overrides["options"] = options
    cfg = preset_config(name, output_dir=args.output, **overrides)
    summary = run_experiment(cfg)
    n_settings = len(summary["settings"])
    print(
        f"{name}: {cfg.trials} trials over {n_settings} settings; "
        f"reports in {cfg.output_dir}"
    )
    return 0


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ss3",
        description="Subspace stability selection for low-rank estimation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="draw synthetic observations and truth")
    g.add_argument("--model", choices=("completion", "denoise", "linear"),
                   required=True)
    g.add_argument("--dims", type=int, nargs=2, required=True,
                   metavar=("P1", "P2"))
    g.add_argument("--spectrum", nargs="+", required=True,
                   help="positive non-increasing singular values")
    g.add_argument("--n", type=int, required=True,
                   help="observation / replicate count")
    g.add_argument("--snr", type=float, default=None,
                   help="target signal-to-noise ratio (calibrates the scale)")
    g.add_argument("--sigma", type=float, default=None,
                   help="noise scale, bypassing calibration")
    g.add_argument("--gamma", type=float, default=0.0,
                   help="diagonal perturbation strength (denoise only)")
    g.add_argument("--seed", type=int, default=0,
                   help="truth seed; observations use seed + 1")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("estimate", help="fit one estimator on stored observations")
    e.add_argument("--obs", required=True, help="observation directory")
    _add_estimator_flags(e)
    e.add_argument("--out", required=True,
                   help="output matrix path (.csv or binary)")
    e.set_defaults(func=cmd_estimate)

    s = sub.add_parser("stabilize", help="run the selection pipeline")
    s.add_argument("--alpha", type=float, default=0.7,
                   help="stability level in (0, 1); values <= 0.5 warn")
    s.add_argument("--bags", type=int, default=100,
                   help="number of bags (complementary pairs count double)")
    _add_estimator_flags(s)
    s.add_argument("--mode", choices=("tangent", "tangent-modified", "column"),
                   default="tangent")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--obs", required=True, help="observation directory")
    s.add_argument("--out", required=True, help="report JSON path")
    s.add_argument("--rescale-lambda", action="store_true",
                   help="halve the regularization weight on half-size bags")
    s.add_argument("--full-curve", action="store_true",
                   help="evaluate sigma_min at every candidate rank")
    s.set_defaults(func=cmd_stabilize)

    m = sub.add_parser("metrics", help="score an estimate against a truth matrix")
    m.add_argument("--estimate", required=True, help="estimate matrix path")
    m.add_argument("--truth", required=True, help="truth matrix path")
    m.add_argument("--rank-tol", type=float, default=None)
    m.add_argument("--out", default=None, help="also write the JSON here")
    m.set_defaults(func=cmd_metrics)

    b = sub.add_parser("bounds", help="evaluate false-discovery certificates")
    b.add_argument("--obs", required=True, help="observation directory")
    b.add_argument("--truth", default=None,
                   help="truth sidecar (directory or truth.json) for oracle mode")
    b.add_argument("--alpha", type=float, default=0.7)
    b.add_argument("--bags", type=int, default=100)
    _add_estimator_flags(b)
    b.add_argument("--mode", choices=("tangent", "column"), default="tangent")
    b.add_argument("--basis-mode",
                   choices=("basis_independent", "basis_dependent"),
                   default="basis_independent")
    b.add_argument("--mc-reps", type=int, default=100)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=None, help="also write the JSON here")
    b.set_defaults(func=cmd_bounds)

    x = sub.add_parser("experiment", help="run a preset study")
    x.add_argument("--preset", choices=PRESET_NAMES, default=None)
    x.add_argument("--config", default=None,
                   help="JSON config file; flags override its values")
    x.add_argument("--trials", type=int, default=None)
    x.add_argument("--seed", type=int, default=None)
    x.add_argument("--bags", type=int, default=None)
    x.add_argument("--alpha", type=float, nargs="+", default=None)
    x.add_argument("--snr", type=float, nargs="+", default=None)
    x.add_argument("--dims", type=int, nargs=2, default=None,
                   metavar=("P1", "P2"))
    x.add_argument("--spectrum", nargs="+", default=None)
    x.add_argument("--output", default=".", help="output directory")
    x.add_argument("--no-figures", action="store_true",
                   help="skip figure rendering")
    x.add_argument("--option", action="append", default=None,
                   metavar="KEY=VALUE",
                   help="preset-specific option override (JSON values)")
    x.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        print("ss3: interrupted; partial results flushed", file=sys.stderr)
        return 130
    except (np.linalg.LinAlgError, FloatingPointError, RuntimeError) as err:
        print(f"ss3: numeric failure: {err}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, OSError) as err:
        print(f"ss3: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
