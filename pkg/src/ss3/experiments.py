"""Preset studies: configuration, orchestration, and report emission.

Each preset draws synthetic data, runs the non-subsampled estimator and
the stability-selected variant across a grid of settings, and emits
three artifacts into the output directory: results.csv in long format
(one row per trial x setting x method), a canonical summary.json
(schema "ss3-report-1"), and rendered figures unless disabled.

Determinism contract: every random draw is seeded through a
SeedSequence keyed on (config seed, purpose salt, indices), and scalar
reductions run in fixed trial order, so identical configurations
produce byte-identical summary.json files.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .bounds import estimator_quality, theorem4_terms
from .estimators import (
    EstimatorConfig,
    ObservationSet,
    als_complete,
    estimate_tangent,
    extract_tangent,
    refit,
    spectral_denoise,
    svt_complete,
    with_lambda,
)
from .linalg import Subspace, TangentSpace
from .matio import write_json
from .metrics import discovery_metrics
from .sampling import (
    calibrate_snr,
    complementary_bags,
    gen_completion,
    gen_denoise,
    gen_linear,
    gen_low_rank,
    gen_low_rank_incoherent,
)
from .stability import algorithm1, average_projectors, candidate_tangent

__all__ = ["ExperimentConfig", "preset_config", "run_experiment", "PRESET_NAMES"]

PRESET_NAMES = (
    "table1",
    "table2",
    "fig_kappa",
    "fig_top3",
    "alpha_sweep",
    "denoise_bounds",
    "linear_vs_completion",
)

REPORT_SCHEMA = "ss3-report-1"

_ROW_FIELDS = ("trial", "setting", "method", "fd", "pw", "fdr", "rank", "mse")

# seed-derivation salts, one per purpose
_TRUTH, _DATA, _BAGS, _CV, _SPLIT, _MC = 1, 2, 3, 4, 5, 6


def _derive_seed(*parts) -> int:
    """Deterministic child seed from integer key parts."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    """One fully specified study; build through preset_config."""

    experiment: str
    dims: tuple
    spectrum: tuple
    snr: tuple
    snr_definition: str
    alpha: tuple
    B: int
    estimator_cfg: EstimatorConfig
    trials: int
    seed: int
    output_dir: str
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in PRESET_NAMES:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if len(self.snr) == 0 or len(self.alpha) == 0:
            raise ValueError("snr and alpha grids must be non-empty")
        if self.B < 2:
            raise ValueError("B must be at least 2")
        if len(self.dims) != 2 or min(self.dims) < 1:
            raise ValueError("dims must be two positive integers")


_COMPLETION_SPECTRUM = (1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.1, 0.1)

_BASE_PRESETS = {
    # stylized completion study: raw cross-validated estimate vs selection
    "table1": dict(
        dims=(70, 70),
        spectrum=_COMPLETION_SPECTRUM,
        snr=(1.5, 2.0, 2.5, 3.0),
        snr_definition="frobenius",
        alpha=(0.7,),
        B=100,
        estimator_cfg=EstimatorConfig(kind="svt", max_iters=300, conv_tol=1e-6),
        trials=100,
        options=dict(
            m=3186, cv_folds=5, lambda_points=20, lambda_min_ratio=1e-3,
            train_frac=0.7,
        ),
    ),
    # same data at low SNR, comparison pinned to each rank 1..5
    "table2": dict(
        dims=(70, 70),
        spectrum=_COMPLETION_SPECTRUM,
        snr=(0.8,),
        snr_definition="frobenius",
        alpha=(0.7,),
        B=100,
        estimator_cfg=EstimatorConfig(kind="svt", max_iters=300, conv_tol=1e-6),
        trials=100,
        options=dict(
            m=3186, cv_folds=5, lambda_points=20, lambda_min_ratio=1e-3,
            ranks=(1, 2, 3, 4, 5), train_frac=0.7, incoherence=0.8,
        ),
    ),
    # averaged-projector vs full-data false discovery across a lambda sweep
    "fig_kappa": dict(
        dims=(70, 70),
        spectrum=_COMPLETION_SPECTRUM,
        snr=(0.8, 1.6),
        snr_definition="frobenius",
        alpha=(0.7,),
        B=50,
        estimator_cfg=EstimatorConfig(kind="svt", max_iters=300, conv_tol=1e-6),
        trials=20,
        options=dict(
            m=3186, cv_folds=5, lambda_points=20, lambda_min_ratio=1e-3,
            lambda_fracs=(0.01, 0.02, 0.04, 0.08, 0.15, 0.3, 0.5, 0.8),
        ),
    ),
    # rank-3 truncation of the raw estimate vs the rank-3 candidate
    "fig_top3": dict(
        dims=(70, 70),
        spectrum=_COMPLETION_SPECTRUM,
        snr=(0.8, 1.6),
        snr_definition="frobenius",
        alpha=(0.7,),
        B=50,
        estimator_cfg=EstimatorConfig(kind="svt", max_iters=300, conv_tol=1e-6),
        trials=20,
        options=dict(
            m=3186, cv_folds=5, lambda_points=20, lambda_min_ratio=1e-3,
            lambda_fracs=(0.01, 0.02, 0.04, 0.08, 0.15, 0.3, 0.5, 0.8),
            pin_rank=3, incoherence=0.8,
        ),
    ),
    # sensitivity of the selection to the stability level
    "alpha_sweep": dict(
        dims=(100, 100),
        spectrum=(1.0,),
        snr=(0.5, 0.8, 2.0),
        snr_definition="frobenius",
        alpha=(0.6, 0.625, 0.65, 0.675, 0.7, 0.725, 0.75, 0.775, 0.8),
        B=50,
        estimator_cfg=EstimatorConfig(kind="als", k=10, max_iters=200, conv_tol=1e-5),
        trials=5,
        options=dict(
            m=7000, holdout=3500, lambda_points=20, lambda_min_ratio=1e-3,
            ranks=(1, 3, 5),
        ),
    ),
    # replicate denoising with oracle bound certificates
    "denoise_bounds": dict(
        dims=(200, 200),
        spectrum=(120.0, 100.0, 80.0, 30.0, 20.0, 10.0),
        snr=(0.15,),
        snr_definition="spectral",
        alpha=(0.8, 0.9),
        B=50,
        estimator_cfg=EstimatorConfig(kind="spectral", k=6),
        trials=20,
        options=dict(
            gammas=(10.0, 30.0), ranks=(6, 10), n_factor=2, mc_reps=100,
            basis_mode="basis_dependent",
        ),
    ),
    # normalized discovery/power across measurement models
    "linear_vs_completion": dict(
        dims=(30, 30),
        spectrum=(1.0,),
        snr=(0.5, 1.0, 1.25, 3.0),
        snr_definition="model_specific",
        alpha=(0.7,),
        B=10,
        estimator_cfg=EstimatorConfig(kind="als", k=6, max_iters=200, conv_tol=1e-5),
        trials=2,
        options=dict(
            models=("linear", "completion"), ranks=(1, 3),
            snr_linear=(1.0, 3.0), snr_completion=(0.5, 1.25),
            lambda_points=8, lambda_min_ratio=1e-3,
        ),
    ),
}


def preset_config(name: str, output_dir: str = ".", **overrides) -> ExperimentConfig:
    """Preset defaults with field overrides; None overrides are ignored.

    Paper-scale settings (more trials, more bags, larger dims) are
    reached by overriding; the defaults are sized to finish in minutes.
    options overrides merge key-by-key into the preset's option dict.
    """
    if name not in _BASE_PRESETS:
        raise ValueError(f"unknown preset {name!r}")
    base = dict(_BASE_PRESETS[name])
    base["seed"] = 0
    options = dict(base.pop("options"))
    options.update(overrides.pop("options", {}) or {})
    for key, value in overrides.items():
        if value is not None:
            base[key] = value
    return ExperimentConfig(
        experiment=name, output_dir=output_dir, options=options, **base
    )


# ---------------------------------------------------------------------------
# shared machinery


def _mean_sd(values):
    vals = [float(v) for v in values if v is not None]
    if not vals:
        return None, None
    mean = math.fsum(vals) / len(vals)
    if len(vals) < 2:
        return mean, None
    var = math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1)
    return mean, math.sqrt(var)


def _row(trial, setting, method, met=None, rank=None, mse=None):
    return {
        "trial": trial,
        "setting": setting,
        "method": method,
        "fd": None if met is None else met.fd,
        "pw": None if met is None else met.pw,
        "fdr": None if met is None else met.fdr,
        "rank": rank,
        "mse": mse,
    }


def _mse(L_hat, truth) -> float:
    diff = L_hat - truth.L_star
    return float(np.sum(diff * diff)) / (truth.p1 * truth.p2)


def _lambda_cap(obs: ObservationSet) -> float:
    """Spectral norm of the data adjoint, the natural regularization scale."""
    if obs.model == "entrywise":
        ii, jj, y = obs.index_arrays()
        Y = np.zeros((obs.p1, obs.p2))
        Y[ii, jj] = y
    elif obs.model == "linear":
        mats, y = obs.functionals
        Y = np.einsum("n,nij->ij", y, mats)
    else:
        Y = obs.replicates.mean(axis=0)
    return float(np.linalg.norm(Y, 2))


def _lambda_grid(obs, points: int, min_ratio: float) -> np.ndarray:
    cap = 2.0 * _lambda_cap(obs)
    if cap <= 0:
        cap = 1.0
    return cap * np.geomspace(1.0, min_ratio, points)


def _predict(obs: ObservationSet, L: np.ndarray) -> np.ndarray:
    if obs.model == "entrywise":
        ii, jj, _ = obs.index_arrays()
        return L[ii, jj]
    mats, _ = obs.functionals
    return np.einsum("nij,ij->n", mats, L)


def _observed_values(obs: ObservationSet) -> np.ndarray:
    if obs.model == "entrywise":
        return obs.index_arrays()[2]
    return obs.functionals[1]


def _train_subset(obs, frac, seed):
    """Seeded subset holding out the rest, as the single-fit baseline data.

    The non-subsampled arm is fit on this subset only, while the bags
    partition the full observation set; the held-out share exists purely
    to keep the baseline's sample budget at the conventional level for a
    procedure that needs validation data.
    """
    if not 0.0 < frac <= 1.0:
        raise ValueError("train fraction must be in (0, 1]")
    n = obs.n_obs
    k = int(round(frac * n))
    if k >= n:
        return obs
    perm = np.random.default_rng(seed).permutation(n)
    return obs.subset(np.sort(perm[:k]))


def _cv_lambda_svt(obs, cfg, folds, points, min_ratio, seed):
    """5-fold style cross-validation on held-out observed entries.

    Fits sweep the grid from largest to smallest weight with warm
    starts; ties resolve to the largest weight. Returns the chosen
    weight, a full-data fit at that weight (warmed down the same grid),
    and the grid.
    """
    grid = _lambda_grid(obs, points, min_ratio)
    n = obs.n_obs
    perm = np.random.default_rng(seed).permutation(n)
    scores = np.zeros(points)
    for chunk in np.array_split(perm, folds):
        mask = np.ones(n, dtype=bool)
        mask[chunk] = False
        train = obs.subset(np.flatnonzero(mask))
        val = obs.subset(np.sort(chunk))
        y_val = _observed_values(val)
        L = None
        for g, lam in enumerate(grid):
            L = svt_complete(train, with_lambda(cfg, lam), L0=L)
            resid = _predict(val, L) - y_val
            scores[g] += float(resid @ resid)
    best = int(np.argmin(scores))
    L = None
    for lam in grid[: best + 1]:
        L = svt_complete(obs, with_lambda(cfg, lam), L0=L)
    return float(grid[best]), L, grid


def _holdout_lambda_als(train, val, cfg, points, min_ratio):
    """Holdout validation over the grid; returns (weight, best estimate)."""
    grid = _lambda_grid(train, points, min_ratio)
    y_val = _observed_values(val)
    best_lam, best_L, best_score = None, None, math.inf
    for lam in grid:
        U, V = als_complete(train, with_lambda(cfg, lam))
        L = U @ V.T
        resid = _predict(val, L) - y_val
        score = float(resid @ resid)
        if score < best_score:
            best_lam, best_L, best_score = float(lam), L, score
    return best_lam, best_L


def _bag_tangents(obs, cfg, B, seed, warm=None):
    """Tangent estimates on complementary bags, in ascending bag order."""
    plan = complementary_bags(obs.n_obs, B, seed)
    out = []
    for bag in plan.bags:
        sub = obs.subset(bag)
        if cfg.kind == "svt":
            L = svt_complete(sub, cfg, L0=warm)
            out.append(extract_tangent(L, cfg.rank_tol))
        else:
            out.append(estimate_tangent(sub, cfg))
    return out


class _SigmaAgg:
    """Per-setting aggregation of sigma_min curves over trials."""

    def __init__(self):
        self.values = {}

    def add(self, curve):
        for r, s in curve:
            self.values.setdefault(int(r), []).append(float(s))

    def summary(self):
        out = {}
        for r in sorted(self.values):
            mean, sd = _mean_sd(self.values[r])
            out[str(r)] = {"mean": mean, "sd": sd, "n": len(self.values[r])}
        return out


def _setting_extra(extras, key) -> dict:
    return extras.setdefault(key, {})


# ---------------------------------------------------------------------------
# preset runners


def _run_table1(cfg, rows, extras):
    m = int(cfg.options["m"])
    folds = int(cfg.options["cv_folds"])
    points = int(cfg.options["lambda_points"])
    ratio = float(cfg.options["lambda_min_ratio"])
    frac = float(cfg.options.get("train_frac", 0.7))
    alpha = cfg.alpha[0]
    for trial in range(cfg.trials):
        truth = gen_low_rank(
            cfg.dims[0], cfg.dims[1], np.array(cfg.spectrum),
            _derive_seed(cfg.seed, _TRUTH, trial),
        )
        for si, snr in enumerate(cfg.snr):
            key = f"snr={snr:g}"
            sigma = calibrate_snr(
                truth, "completion", snr, mc_reps=100,
                seed=_derive_seed(cfg.seed, _MC, trial, si), m=m,
            )
            obs = gen_completion(
                truth, m, sigma, _derive_seed(cfg.seed, _DATA, trial, si)
            )
            train = _train_subset(
                obs, frac, _derive_seed(cfg.seed, _SPLIT, trial, si)
            )
            lam, L_base, _ = _cv_lambda_svt(
                train, cfg.estimator_cfg, folds, points, ratio,
                _derive_seed(cfg.seed, _CV, trial, si),
            )
            T_raw = extract_tangent(L_base, cfg.estimator_cfg.rank_tol)
            rows.append(_row(
                trial, key, "none", discovery_metrics(T_raw, truth.T_star),
                rank=T_raw.rank, mse=_mse(L_base, truth),
            ))
            tangents = _bag_tangents(
                obs, with_lambda(cfg.estimator_cfg, lam), cfg.B,
                _derive_seed(cfg.seed, _BAGS, trial, si), warm=L_base,
            )
            report = algorithm1(average_projectors(tangents), alpha)
            rows.append(_row(
                trial, key, "s3",
                discovery_metrics(report.selected, truth.T_star),
                rank=report.r_selected,
                mse=_mse(refit(report.selected, obs), truth),
            ))
            extra = _setting_extra(extras, key)
            extra.setdefault("lambda_chosen", []).append(lam)
            extra.setdefault("_sigma", _SigmaAgg()).add(report.sigma_min_curve)


def _run_table2(cfg, rows, extras):
    m = int(cfg.options["m"])
    folds = int(cfg.options["cv_folds"])
    points = int(cfg.options["lambda_points"])
    ratio = float(cfg.options["lambda_min_ratio"])
    ranks = tuple(cfg.options["ranks"])
    frac = float(cfg.options.get("train_frac", 0.7))
    inc_target = cfg.options.get("incoherence")
    snr = cfg.snr[0]
    lam_list = []
    for trial in range(cfg.trials):
        truth_seed = _derive_seed(cfg.seed, _TRUTH, trial)
        if inc_target:
            truth = gen_low_rank_incoherent(
                cfg.dims[0], cfg.dims[1], np.array(cfg.spectrum),
                float(inc_target), truth_seed,
            )
        else:
            truth = gen_low_rank(
                cfg.dims[0], cfg.dims[1], np.array(cfg.spectrum), truth_seed
            )
        sigma = calibrate_snr(
            truth, "completion", snr, mc_reps=100,
            seed=_derive_seed(cfg.seed, _MC, trial), m=m,
        )
        obs = gen_completion(truth, m, sigma, _derive_seed(cfg.seed, _DATA, trial))
        train = _train_subset(obs, frac, _derive_seed(cfg.seed, _SPLIT, trial))
        lam, L_base, _ = _cv_lambda_svt(
            train, cfg.estimator_cfg, folds, points, ratio,
            _derive_seed(cfg.seed, _CV, trial),
        )
        lam_list.append(lam)
        tangents = _bag_tangents(
            obs, with_lambda(cfg.estimator_cfg, lam), cfg.B,
            _derive_seed(cfg.seed, _BAGS, trial), warm=L_base,
        )
        avg = average_projectors(tangents)
        U, S, Vt = np.linalg.svd(L_base)
        detected = int(np.count_nonzero(
            S > cfg.estimator_cfg.rank_tol * (S[0] if S.size else 0.0)
        ))
        for r in ranks:
            key = f"rank={r}"
            r_eff = min(r, detected)
            T_raw = TangentSpace(Subspace(U[:, :r_eff]), Subspace(Vt[:r_eff].T))
            L_trunc = (U[:, :r_eff] * S[:r_eff]) @ Vt[:r_eff]
            rows.append(_row(
                trial, key, "none", discovery_metrics(T_raw, truth.T_star),
                rank=r_eff, mse=_mse(L_trunc, truth),
            ))
            T_pin = candidate_tangent(avg, r)
            rows.append(_row(
                trial, key, "s3", discovery_metrics(T_pin, truth.T_star),
                rank=r, mse=_mse(refit(T_pin, obs), truth),
            ))
    extras["_global"] = {"lambda_chosen": lam_list}


def _iter_lambda_sweep(cfg, extras):
    """Common scaffold for the lambda-sweep presets.

    Yields (trial, snr, frac, truth, obs, L_full, tangents) for every
    grid point, sweeping fractions of the data-adjoint cap from largest
    to smallest with warm starts; also records the cross-validated
    weight (as a fraction of the cap) for reference lines.
    """
    m = int(cfg.options["m"])
    folds = int(cfg.options["cv_folds"])
    points = int(cfg.options["lambda_points"])
    ratio = float(cfg.options["lambda_min_ratio"])
    fracs = sorted(cfg.options["lambda_fracs"], reverse=True)
    inc_target = cfg.options.get("incoherence")
    for trial in range(cfg.trials):
        truth_seed = _derive_seed(cfg.seed, _TRUTH, trial)
        if inc_target:
            truth = gen_low_rank_incoherent(
                cfg.dims[0], cfg.dims[1], np.array(cfg.spectrum),
                float(inc_target), truth_seed,
            )
        else:
            truth = gen_low_rank(
                cfg.dims[0], cfg.dims[1], np.array(cfg.spectrum), truth_seed
            )
        for si, snr in enumerate(cfg.snr):
            sigma = calibrate_snr(
                truth, "completion", snr, mc_reps=100,
                seed=_derive_seed(cfg.seed, _MC, trial, si), m=m,
            )
            obs = gen_completion(
                truth, m, sigma, _derive_seed(cfg.seed, _DATA, trial, si)
            )
            cap = 2.0 * _lambda_cap(obs)
            lam_cv, _, _ = _cv_lambda_svt(
                obs, cfg.estimator_cfg, folds, points, ratio,
                _derive_seed(cfg.seed, _CV, trial, si),
            )
            glob = extras.setdefault("_global", {})
            glob.setdefault(f"cv_lambda_frac/snr={snr:g}", []).append(lam_cv / cap)
            L_full = None
            for frac in fracs:
                lam = frac * cap
                cfg_l = with_lambda(cfg.estimator_cfg, lam)
                L_full = svt_complete(obs, cfg_l, L0=L_full)
                tangents = _bag_tangents(
                    obs, cfg_l, cfg.B,
                    _derive_seed(cfg.seed, _BAGS, trial, si), warm=L_full,
                )
                yield trial, snr, frac, truth, obs, L_full, tangents


def _run_fig_kappa(cfg, rows, extras):
    for trial, snr, frac, truth, _, L_full, tangents in _iter_lambda_sweep(
        cfg, extras
    ):
        key = f"snr={snr:g},frac={frac:g}"
        T_full = extract_tangent(L_full, cfg.estimator_cfg.rank_tol)
        rows.append(_row(
            trial, key, "full", discovery_metrics(T_full, truth.T_star),
            rank=T_full.rank,
        ))
        # trace of the averaged operator against the complement equals the
        # mean bag false discovery, by linearity of the trace
        bag_mets = [discovery_metrics(t, truth.T_star) for t in tangents]
        fd = math.fsum(bm.fd for bm in bag_mets) / len(bag_mets)
        pw = math.fsum(bm.pw for bm in bag_mets) / len(bag_mets)
        mean_rank = math.fsum(t.rank for t in tangents) / len(tangents)
        rows.append({
            "trial": trial, "setting": key, "method": "avg",
            "fd": fd, "pw": pw, "fdr": None, "rank": mean_rank, "mse": None,
        })


def _run_fig_top3(cfg, rows, extras):
    pin = int(cfg.options["pin_rank"])
    for trial, snr, frac, truth, obs, L_full, tangents in _iter_lambda_sweep(
        cfg, extras
    ):
        key = f"snr={snr:g},frac={frac:g}"
        U, S, Vt = np.linalg.svd(L_full)
        tol = cfg.estimator_cfg.rank_tol * (S[0] if S.size else 0.0)
        r_eff = min(pin, int(np.count_nonzero(S > tol)))
        T_raw = TangentSpace(Subspace(U[:, :r_eff]), Subspace(Vt[:r_eff].T))
        rows.append(_row(
            trial, key, "none", discovery_metrics(T_raw, truth.T_star), rank=r_eff,
        ))
        T_pin = candidate_tangent(average_projectors(tangents), pin)
        rows.append(_row(
            trial, key, "s3", discovery_metrics(T_pin, truth.T_star), rank=pin,
        ))


def _run_alpha_sweep(cfg, rows, extras):
    m = int(cfg.options["m"])
    holdout = int(cfg.options["holdout"])
    points = int(cfg.options["lambda_points"])
    ratio = float(cfg.options["lambda_min_ratio"])
    ranks = tuple(cfg.options["ranks"])
    p1, p2 = cfg.dims
    for trial in range(cfg.trials):
        for ri, r in enumerate(ranks):
            truth = gen_low_rank(
                p1, p2, np.ones(r), _derive_seed(cfg.seed, _TRUTH, trial, ri)
            )
            for si, snr in enumerate(cfg.snr):
                sigma = calibrate_snr(
                    truth, "completion", snr, mc_reps=100,
                    seed=_derive_seed(cfg.seed, _MC, trial, ri, si), m=m,
                )
                # the holdout is an independent draw: train plus holdout
                # can exceed the p1*p2 distinct entries a single draw allows
                train = gen_completion(
                    truth, m, sigma, _derive_seed(cfg.seed, _DATA, trial, ri, si)
                )
                val = gen_completion(
                    truth, holdout, sigma,
                    _derive_seed(cfg.seed, _SPLIT, trial, ri, si),
                )
                lam, L_full = _holdout_lambda_als(
                    train, val, cfg.estimator_cfg, points, ratio
                )
                T_raw = extract_tangent(L_full, cfg.estimator_cfg.rank_tol)
                met_raw = discovery_metrics(T_raw, truth.T_star)
                mse_raw = _mse(L_full, truth)
                tangents = _bag_tangents(
                    train, with_lambda(cfg.estimator_cfg, lam), cfg.B,
                    _derive_seed(cfg.seed, _BAGS, trial, ri, si),
                )
                avg = average_projectors(tangents)
                for alpha in cfg.alpha:
                    key = f"rank={r},snr={snr:g},alpha={alpha:g}"
                    rows.append(_row(
                        trial, key, "none", met_raw, rank=T_raw.rank, mse=mse_raw
                    ))
                    report = algorithm1(avg, alpha)
                    met = discovery_metrics(report.selected, truth.T_star)
                    rows.append(_row(
                        trial, key, "s3", met, rank=report.r_selected,
                        mse=_mse(refit(report.selected, train), truth),
                    ))
                    extra = _setting_extra(extras, key)
                    extra["normalizers"] = {
                        "dim_truth": met.dim_truth,
                        "dim_truth_complement": met.dim_truth_complement,
                    }
                    extra.setdefault("lambda_chosen", []).append(lam)
                    extra.setdefault("_sigma", _SigmaAgg()).add(
                        report.sigma_min_curve
                    )


def _run_denoise_bounds(cfg, rows, extras):
    p1, p2 = cfg.dims
    gammas = tuple(cfg.options["gammas"])
    ranks = tuple(cfg.options["ranks"])
    n = int(cfg.options["n_factor"]) * p1
    mc_reps = int(cfg.options["mc_reps"])
    basis_mode = str(cfg.options["basis_mode"])
    truth = gen_low_rank(
        p1, p2, np.array(cfg.spectrum), _derive_seed(cfg.seed, _TRUTH)
    )
    for gi, gamma in enumerate(gammas):
        delta = calibrate_snr(
            truth, "denoise", cfg.snr[0], mc_reps=100,
            seed=_derive_seed(cfg.seed, _MC, gi), gamma=gamma,
        )
        for ki, k in enumerate(ranks):
            est_cfg = replace(cfg.estimator_cfg, k=k)
            mc_seed = _derive_seed(cfg.seed, _MC, gi, ki)

            def data_model(s, delta=delta, gamma=gamma):
                return gen_denoise(truth, n // 2, delta, gamma, s)

            F, q = estimator_quality(
                truth, est_cfg, data_model, basis_mode, mc_reps, mc_seed
            )
            bound_lists = {}
            for trial in range(cfg.trials):
                obs = gen_denoise(
                    truth, n, delta, gamma,
                    _derive_seed(cfg.seed, _DATA, gi, trial),
                )
                L_full = spectral_denoise(obs, k)
                T_full = extract_tangent(L_full, est_cfg.rank_tol)
                met_full = discovery_metrics(T_full, truth.T_star)
                mse_full = _mse(L_full, truth)
                tangents = _bag_tangents(
                    obs, est_cfg, cfg.B,
                    _derive_seed(cfg.seed, _BAGS, gi, ki, trial),
                )
                avg = average_projectors(tangents)
                for alpha in cfg.alpha:
                    key = f"gamma={gamma:g},k={k},alpha={alpha:g}"
                    rows.append(_row(
                        trial, key, "full", met_full, rank=T_full.rank,
                        mse=mse_full,
                    ))
                    report = algorithm1(avg, alpha)
                    met = discovery_metrics(report.selected, truth.T_star)
                    rows.append(_row(
                        trial, key, "s3", met, rank=report.r_selected,
                        mse=_mse(refit(report.selected, obs), truth),
                    ))
                    breport = theorem4_terms(
                        truth, est_cfg, data_model, alpha, cfg.B,
                        basis_mode, mc_reps, mc_seed,
                        T_selected=report.selected, bag_tangents=tangents,
                        F_and_q=(F, q),
                    )
                    acc = bound_lists.setdefault(key, {
                        "theorem4_total": [], "prop5_total": [],
                        "prop6_total": [], "kappa_bag": [], "slack_term": [],
                        "kappa_indiv": [],
                    })
                    for name in acc:
                        acc[name].append(getattr(breport, name))
                    extra = _setting_extra(extras, key)
                    extra.setdefault("_sigma", _SigmaAgg()).add(
                        report.sigma_min_curve
                    )
            for key, acc in bound_lists.items():
                stats = {"F": F, "F_mode": basis_mode, "q": q, "mc_reps": mc_reps}
                for name, values in acc.items():
                    stats[f"{name}_mean"] = _mean_sd(values)[0]
                _setting_extra(extras, key)["bound"] = stats


def _run_linear_vs_completion(cfg, rows, extras):
    p1, p2 = cfg.dims
    models = tuple(cfg.options["models"])
    ranks = tuple(cfg.options["ranks"])
    points = int(cfg.options["lambda_points"])
    ratio = float(cfg.options["lambda_min_ratio"])
    alpha = cfg.alpha[0]
    for mi, model in enumerate(models):
        snrs = tuple(cfg.options[f"snr_{model}"])
        if model == "completion":
            n_train = round(0.7 * p1 * p2)
            n_val = round(0.35 * p1 * p2)
        else:
            n_train = round(0.6 * p1 * p2)
            n_val = round(0.15 * p1 * p2)
        for trial in range(cfg.trials):
            for ri, r in enumerate(ranks):
                truth = gen_low_rank(
                    p1, p2, np.ones(r),
                    _derive_seed(cfg.seed, _TRUTH, mi, trial, ri),
                )
                for si, snr in enumerate(snrs):
                    key = f"model={model},rank={r},snr={snr:g}"
                    data_seed = _derive_seed(cfg.seed, _DATA, mi, trial, ri, si)
                    if model == "completion":
                        sigma = calibrate_snr(
                            truth, "completion", snr, mc_reps=100,
                            seed=_derive_seed(cfg.seed, _MC, mi, trial, ri, si),
                            m=n_train,
                        )
                        train = gen_completion(truth, n_train, sigma, data_seed)
                        val = gen_completion(
                            truth, n_val, sigma,
                            _derive_seed(cfg.seed, _SPLIT, mi, trial, ri, si),
                        )
                    else:
                        sigma = calibrate_snr(truth, "linear", snr)
                        obs_all = gen_linear(truth, n_train + n_val, sigma, data_seed)
                        train = obs_all.subset(np.arange(n_train))
                        val = obs_all.subset(np.arange(n_train, n_train + n_val))
                    lam, L_full = _holdout_lambda_als(
                        train, val, cfg.estimator_cfg, points, ratio
                    )
                    T_raw = extract_tangent(L_full, cfg.estimator_cfg.rank_tol)
                    met_raw = discovery_metrics(T_raw, truth.T_star)
                    rows.append(_row(
                        trial, key, "none", met_raw, rank=T_raw.rank,
                        mse=_mse(L_full, truth),
                    ))
                    tangents = _bag_tangents(
                        train, with_lambda(cfg.estimator_cfg, lam), cfg.B,
                        _derive_seed(cfg.seed, _BAGS, mi, trial, ri, si),
                    )
                    report = algorithm1(average_projectors(tangents), alpha)
                    met = discovery_metrics(report.selected, truth.T_star)
                    rows.append(_row(
                        trial, key, "s3", met, rank=report.r_selected,
                        mse=_mse(refit(report.selected, train), truth),
                    ))
                    extra = _setting_extra(extras, key)
                    extra["normalizers"] = {
                        "dim_truth": met.dim_truth,
                        "dim_truth_complement": met.dim_truth_complement,
                    }
                    extra.setdefault("lambda_chosen", []).append(lam)
                    extra.setdefault("_sigma", _SigmaAgg()).add(
                        report.sigma_min_curve
                    )


_RUNNERS = {
    "table1": _run_table1,
    "table2": _run_table2,
    "fig_kappa": _run_fig_kappa,
    "fig_top3": _run_fig_top3,
    "alpha_sweep": _run_alpha_sweep,
    "denoise_bounds": _run_denoise_bounds,
    "linear_vs_completion": _run_linear_vs_completion,
}


# ---------------------------------------------------------------------------
# emission


def _write_results(cfg, rows) -> None:
    path = os.path.join(cfg.output_dir, "results.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_ROW_FIELDS)
        for row in rows:
            writer.writerow([
                "" if row[k] is None else row[k] for k in _ROW_FIELDS
            ])


def _aggregate_settings(rows, extras) -> dict:
    order = []
    grouped = {}
    for row in rows:
        pair = (row["setting"], row["method"])
        if pair not in grouped:
            grouped[pair] = []
            if row["setting"] not in order:
                order.append(row["setting"])
        grouped[pair].append(row)
    settings = {}
    for setting in order:
        methods = {}
        for (s, method), group in grouped.items():
            if s != setting:
                continue
            stats = {"n": len(group)}
            for metric in ("fd", "pw", "fdr", "rank", "mse"):
                mean, sd = _mean_sd(r[metric] for r in group)
                stats[f"{metric}_mean"] = mean
                stats[f"{metric}_sd"] = sd
            methods[method] = stats
        block = {"methods": methods}
        extra = extras.get(setting, {})
        norm = extra.get("normalizers")
        if norm:
            for method, stats in methods.items():
                if stats["fd_mean"] is not None and norm["dim_truth_complement"]:
                    stats["fd_normalized_mean"] = (
                        stats["fd_mean"] / norm["dim_truth_complement"]
                    )
                if stats["pw_mean"] is not None and norm["dim_truth"]:
                    stats["pw_normalized_mean"] = (
                        stats["pw_mean"] / norm["dim_truth"]
                    )
        for name, value in extra.items():
            if name == "_sigma":
                block["sigma_min"] = value.summary()
            elif name != "normalizers":
                block[name] = value
        settings[setting] = block
    return settings


def _config_dict(cfg) -> dict:
    est = cfg.estimator_cfg
    return {
        "experiment": cfg.experiment,
        "dims": list(cfg.dims),
        "spectrum": list(cfg.spectrum),
        "snr": list(cfg.snr),
        "snr_definition": cfg.snr_definition,
        "alpha": list(cfg.alpha),
        "B": cfg.B,
        "estimator": {
            "kind": est.kind, "lam": est.lam, "k": est.k,
            "max_iters": est.max_iters, "conv_tol": est.conv_tol,
            "rank_tol": est.rank_tol, "seed": est.seed,
        },
        "trials": cfg.trials,
        "seed": cfg.seed,
        "options": {k: v for k, v in cfg.options.items() if k != "figures"},
    }


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run one preset end to end; returns the summary dict.

    Writes results.csv and summary.json (plus figures unless
    options["figures"] is false) into cfg.output_dir. On interrupt the
    partial rows and a summary marked "interrupted" are flushed before
    the interrupt propagates. The summary excludes the output directory
    so identical configurations summarize byte-identically.
    """
    os.makedirs(cfg.output_dir, exist_ok=True)
    rows: list = []
    extras: dict = {}
    interrupted = False
    try:
        _RUNNERS[cfg.experiment](cfg, rows, extras)
    except KeyboardInterrupt:
        interrupted = True
    _write_results(cfg, rows)
    figures = []
    if not interrupted and cfg.options.get("figures", True):
        figures = _render_figures(cfg, rows, extras)
    summary = {
        "schema": REPORT_SCHEMA,
        "experiment": cfg.experiment,
        "config": _config_dict(cfg),
        "settings": _aggregate_settings(rows, extras),
        "details": extras.get("_global", {}),
        "interrupted": interrupted,
        "files": {"results": "results.csv", "figures": figures},
    }
    write_json(summary, os.path.join(cfg.output_dir, "summary.json"))
    if interrupted:
        raise KeyboardInterrupt
    return summary


# ---------------------------------------------------------------------------
# figures


def _setting_field(key: str, name: str) -> str:
    for part in key.split(","):
        if part.startswith(name + "="):
            return part.split("=", 1)[1]
    raise KeyError(f"setting {key!r} has no field {name!r}")


def _method_means(settings, method, metric="fd_mean"):
    out = {}
    for key, block in settings.items():
        stats = block["methods"].get(method)
        if stats is not None:
            out[key] = stats.get(metric)
    return out


def _render_figures(cfg, rows, extras) -> list:
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    settings = _aggregate_settings(rows, extras)
    name = cfg.experiment
    path = os.path.join(cfg.output_dir, f"{name}.png")
    if name in ("table1", "table2"):
        fig, ax = plt.subplots(figsize=(6, 4))
        keys = list(settings)
        x = np.arange(len(keys))
        for off, method in ((-0.2, "none"), (0.2, "s3")):
            vals = [settings[k]["methods"][method]["fd_mean"] for k in keys]
            ax.bar(x + off, vals, width=0.4, label=method)
        ax.set_xticks(x)
        ax.set_xticklabels(keys, rotation=30, ha="right")
        ax.set_ylabel("mean false discovery")
        ax.legend()
    elif name in ("fig_kappa", "fig_top3"):
        methods = ("full", "avg") if name == "fig_kappa" else ("none", "s3")
        fig, axes = plt.subplots(
            1, len(cfg.snr), figsize=(5 * len(cfg.snr), 4), squeeze=False
        )
        for ax, snr in zip(axes[0], cfg.snr):
            fracs = sorted(cfg.options["lambda_fracs"])
            for method in methods:
                vals = [
                    settings[f"snr={snr:g},frac={f:g}"]["methods"][method][
                        "fd_mean"
                    ]
                    for f in fracs
                ]
                ax.plot(fracs, vals, marker="o", label=method)
            cv = extras.get("_global", {}).get(f"cv_lambda_frac/snr={snr:g}")
            if cv:
                ax.axvline(
                    math.fsum(cv) / len(cv), linestyle=":", color="k",
                    label="cv weight",
                )
            ax.set_xscale("log")
            ax.set_xlabel("regularization fraction")
            ax.set_ylabel("mean false discovery")
            ax.set_title(f"snr={snr:g}")
            ax.legend()
    elif name == "alpha_sweep":
        ranks = tuple(cfg.options["ranks"])
        fig, axes = plt.subplots(
            len(ranks), 2, figsize=(10, 3.2 * len(ranks)), squeeze=False
        )
        for row_i, r in enumerate(ranks):
            for col_i, metric in enumerate(
                ("fd_normalized_mean", "pw_normalized_mean")
            ):
                ax = axes[row_i][col_i]
                for snr in cfg.snr:
                    vals = [
                        settings[f"rank={r},snr={snr:g},alpha={a:g}"]["methods"][
                            "s3"
                        ].get(metric)
                        for a in cfg.alpha
                    ]
                    ax.plot(cfg.alpha, vals, marker="o", label=f"snr={snr:g}")
                ax.set_xlabel("alpha")
                ax.set_ylabel(metric.replace("_", " "))
                ax.set_title(f"rank={r}")
                ax.legend()
    elif name == "denoise_bounds":
        gammas = tuple(cfg.options["gammas"])
        ranks = tuple(cfg.options["ranks"])
        fig, axes = plt.subplots(
            len(gammas), len(ranks), figsize=(5 * len(ranks), 4 * len(gammas)),
            squeeze=False,
        )
        for gi, gamma in enumerate(gammas):
            for ki, k in enumerate(ranks):
                ax = axes[gi][ki]
                fds, bounds, fulls = [], [], []
                for a in cfg.alpha:
                    block = settings[f"gamma={gamma:g},k={k},alpha={a:g}"]
                    fds.append(block["methods"]["s3"]["fd_mean"])
                    fulls.append(block["methods"]["full"]["fd_mean"])
                    bounds.append(block["bound"]["theorem4_total_mean"])
                ax.plot(cfg.alpha, fds, marker="o", label="selected fd")
                ax.plot(cfg.alpha, bounds, marker="s", label="certificate")
                ax.plot(cfg.alpha, fulls, linestyle="--", label="full-data fd")
                ax.set_yscale("log")
                ax.set_xlabel("alpha")
                ax.set_ylabel("false discovery")
                ax.set_title(f"gamma={gamma:g}, k={k}")
                ax.legend()
    else:
        fig, ax = plt.subplots(figsize=(6, 5))
        for method, marker in (("none", "x"), ("s3", "o")):
            xs, ys = [], []
            for key, block in settings.items():
                stats = block["methods"][method]
                if "fd_normalized_mean" in stats:
                    xs.append(stats["fd_normalized_mean"])
                    ys.append(stats["pw_normalized_mean"])
            ax.scatter(xs, ys, marker=marker, label=method)
        ax.set_xlabel("normalized false discovery")
        ax.set_ylabel("normalized power")
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [os.path.basename(path)]
