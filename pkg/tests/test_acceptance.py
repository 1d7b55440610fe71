"""Headline guarantees, end to end.

Fast property checks come first; the benchmark studies at full scale
(100 trials, 70x70 completion, 200x200 denoising) close the file and
dominate the suite's runtime. Their thresholds are deliberately loose:
they compare aggregate behavior of the selection against the raw
estimator, not exact values.
"""

import math
import time
import warnings

import numpy as np
import pytest

from conftest import dense_operator, random_subspace, random_tangent
from ss3.bounds import kappa_bag_term
from ss3.estimators import (
    EstimatorConfig,
    estimate_tangent,
    extract_tangent,
    svt_complete,
)
from ss3.experiments import preset_config, run_experiment
from ss3.linalg import (
    MatrixOperator,
    op_trace,
    principal_angles,
    span_operator,
    tangent_complement_operator,
    tangent_operator,
)
from ss3.metrics import (
    column_metrics,
    commutator_frobenius,
    coordinate_subspace,
    diagonal_tangent,
    discovery_metrics,
    misalignment_mu,
    tangent_overlap,
    tangent_span_commutator,
)
from ss3.sampling import (
    calibrate_snr,
    complementary_bags,
    gen_completion,
    gen_denoise,
    gen_low_rank,
)
from ss3.stability import (
    algorithm1,
    algorithm1_modified,
    average_projectors,
    run_pipeline,
    stable_membership,
)


def _derive(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


class TestOperatorAlgebra:
    def test_trace_products_match_dense(self, rng):
        """Symbolic traces of up to four composed projector operators."""
        start = time.time()
        cases = 0
        while cases < 500:
            p1 = int(rng.integers(1, 7))
            p2 = int(rng.integers(1, 7))
            ops = []
            for _ in range(int(rng.integers(1, 5))):
                kind = rng.integers(3)
                if kind == 0:
                    r = int(rng.integers(0, min(p1, p2) + 1))
                    ops.append(tangent_operator(random_tangent(rng, p1, p2, r)))
                elif kind == 1:
                    r = int(rng.integers(0, min(p1, p2) + 1))
                    ops.append(
                        tangent_complement_operator(random_tangent(rng, p1, p2, r))
                    )
                else:
                    ops.append(span_operator(
                        rng.standard_normal(p1), rng.standard_normal(p2)
                    ))
            comp = ops[0]
            dense = dense_operator(ops[0])
            for op in ops[1:]:
                comp = comp.compose(op)
                dense = dense @ dense_operator(op)
            assert abs(op_trace(comp) - float(np.trace(dense))) < 1e-9
            cases += 1
        assert time.time() - start < 60.0

    def test_fd_pw_identity(self, rng):
        """fd + pw accounts for every dimension of the estimate."""
        for _ in range(1000):
            p1 = int(rng.integers(1, 9))
            p2 = int(rng.integers(1, 9))
            r_hat = int(rng.integers(0, min(p1, p2) + 1))
            r_star = int(rng.integers(0, min(p1, p2) + 1))
            T_hat = random_tangent(rng, p1, p2, r_hat)
            T_star = random_tangent(rng, p1, p2, r_star)
            met = discovery_metrics(T_hat, T_star)
            assert abs(met.fd + met.pw - T_hat.dim) < 1e-8
            assert -1e-10 <= met.fd <= (p1 - r_star) * (p2 - r_star) + 1e-10

    def test_commutator_identities(self, rng):
        # subspace projectors lifted to operators on p x 1 matrices
        def lift(S):
            return MatrixOperator(
                S.ambient_dim, 1, [(S.projector, np.eye(1), 1.0)], []
            )

        for _ in range(200):
            p = int(rng.integers(2, 9))
            S1 = random_subspace(rng, p, int(rng.integers(1, p)))
            S2 = random_subspace(rng, p, int(rng.integers(1, p)))
            theta = principal_angles(S1, S2)
            want = 0.5 * float(np.sum(np.sin(2.0 * theta) ** 2))
            assert abs(commutator_frobenius(lift(S1), lift(S2)) ** 2 - want) < 1e-8
        for _ in range(100):
            p1 = int(rng.integers(2, 7))
            p2 = int(rng.integers(2, 7))
            T = random_tangent(rng, p1, p2, int(rng.integers(1, min(p1, p2) + 1)))
            u = rng.standard_normal(p1)
            v = rng.standard_normal(p2)
            got = tangent_span_commutator(T, u, v)
            D_T = dense_operator(tangent_operator(T))
            D_s = dense_operator(span_operator(u, v))
            want = float(np.linalg.norm(D_T @ D_s - D_s @ D_T))
            # sqrt(2t(1-t)) loses half the digits when t -> 1 (full tangent)
            assert abs(got - want) < 1e-7


class TestVariableSelectionSpecialization:
    def test_discovery_reduces_to_set_cardinality(self):
        p, S_star = 9, (2, 3)
        T_star = diagonal_tangent(S_star, p)
        for S_hat in ((0,), (2, 5, 7), (0, 1, 2, 3), tuple(range(p)), (3,)):
            k = len(set(S_hat) - set(S_star))
            r_star = len(S_star)
            expected_fd = float(2 * k * (p - r_star) - k * k)
            met = discovery_metrics(diagonal_tangent(S_hat, p), T_star)
            assert met.fd == expected_fd
            col = column_metrics(coordinate_subspace(S_hat, p),
                                 coordinate_subspace(S_star, p))
            assert col.fd == float(k)

    def test_algorithm1_reduces_to_fraction_threshold(self, rng):
        p, B, alpha = 8, 20, 0.715
        for trial in range(20):
            supports = [
                sorted(rng.choice(p, size=rng.integers(1, p), replace=False))
                for _ in range(B)
            ]
            counts = np.zeros(p)
            for s in supports:
                counts[list(s)] += 1
            keep = [i for i in range(p) if counts[i] / B >= alpha]
            rep = algorithm1(
                average_projectors([diagonal_tangent(s, p) for s in supports]),
                alpha,
            )
            assert rep.r_selected == len(keep)
            if keep:
                expected = diagonal_tangent(keep, p)
                assert abs(
                    tangent_overlap(rep.selected, expected) - expected.dim
                ) < 1e-9

    def test_commuting_bags_have_zero_penalty(self, rng):
        p = 7
        bags = [
            diagonal_tangent(sorted(rng.choice(p, size=3, replace=False)), p)
            for _ in range(6)
        ]
        T_sel = diagonal_tangent([0, 1], p)
        T_star = diagonal_tangent([1, 2], p)
        assert kappa_bag_term(T_sel, bags, T_star) == 0.0


class TestSelectionGuarantees:
    def test_modified_selection_membership_floor(self, rng):
        alphas = (0.6, 0.7, 0.8, 0.9)
        for trial in range(200):
            p1 = int(rng.integers(2, 13))
            p2 = int(rng.integers(2, 13))
            bags = [
                random_tangent(rng, p1, p2, int(rng.integers(0, min(p1, p2) + 1)))
                for _ in range(int(rng.integers(2, 7)))
            ]
            avg = average_projectors(bags)
            alpha = alphas[trial % len(alphas)]
            rep = algorithm1_modified(avg, alpha)
            _, smin = stable_membership(rep.selected, avg, alpha)
            assert smin >= 1.0 - 4.0 * (1.0 - alpha) - 1e-9

    def test_sigma_curves_non_increasing(self):
        runs = []
        for seed in range(5):
            truth = gen_low_rank(12, 12, (3.0, 2.0, 1.0), seed=seed)
            obs = gen_denoise(truth, n=8, delta=0.5, gamma=2.0, seed=seed + 50)
            runs.append(run_pipeline(
                obs, EstimatorConfig(kind="spectral", k=5), alpha=0.6, B=4,
                seed=seed, full_curve=True,
            ))
            m = 100
            truth_c = gen_low_rank(12, 12, (2.0, 1.0), seed=seed + 100)
            sigma = calibrate_snr(truth_c, "completion", 2.0, seed=seed, m=m)
            obs_c = gen_completion(truth_c, m, sigma, seed=seed + 150)
            cfg = EstimatorConfig(kind="svt", lam=0.2, max_iters=150,
                                  conv_tol=1e-5)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                runs.append(run_pipeline(
                    obs_c, cfg, alpha=0.6, B=4, seed=seed, full_curve=True,
                ))
        for rep in runs:
            vals = [s for _, s in rep.sigma_min_curve]
            assert all(b <= a + 1e-9 for a, b in zip(vals, vals[1:]))

    def test_noiseless_recovery_is_exact(self):
        truth = gen_low_rank(20, 20, (3.0, 2.0, 1.0), seed=42)
        obs = gen_denoise(truth, n=8, delta=0.0, gamma=0.0, seed=43)
        rep = run_pipeline(
            obs, EstimatorConfig(kind="spectral", k=3), alpha=0.7, B=4, seed=1
        )
        assert rep.r_selected == 3
        met = discovery_metrics(rep.selected, truth.T_star)
        assert abs(met.fd) <= 1e-8
        overlap = tangent_overlap(rep.selected, truth.T_star)
        assert truth.T_star.dim - overlap <= 1e-8


class TestBenchmarks:
    def test_completion_benchmark_snr2(self, tmp_path):
        start = time.time()
        cfg = preset_config(
            "table1", output_dir=str(tmp_path), snr=(2.0,),
            options={"figures": False},
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            summary = run_experiment(cfg)
        stats = summary["settings"]["snr=2"]["methods"]
        fd_s3 = stats["s3"]["fd_mean"]
        fd_raw = stats["none"]["fd_mean"]
        print(f"\ncompletion snr=2: s3 fd {fd_s3:.1f}, raw fd {fd_raw:.1f}, "
              f"{time.time() - start:.0f} s")
        assert stats["s3"]["n"] == 100
        assert fd_s3 < 250.0
        assert fd_raw > 4.0 * fd_s3
        assert time.time() - start < 3600.0

    def test_rank_sweep_benchmark(self, tmp_path):
        start = time.time()
        cfg = preset_config(
            "table2", output_dir=str(tmp_path), options={"figures": False}
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            summary = run_experiment(cfg)
        wins = 0
        for r in (1, 2, 3, 4, 5):
            stats = summary["settings"][f"rank={r}"]["methods"]
            if stats["s3"]["fd_mean"] < stats["none"]["fd_mean"]:
                wins += 1
            print(f"rank {r}: s3 fd {stats['s3']['fd_mean']:.1f} vs "
                  f"raw fd {stats['none']['fd_mean']:.1f}")
        print(f"rank sweep took {time.time() - start:.0f} s")
        assert wins >= 4
        assert time.time() - start < 3600.0

    def test_denoise_bound_validity(self, tmp_path):
        start = time.time()
        cfg = preset_config(
            "denoise_bounds", output_dir=str(tmp_path),
            options={"figures": False},
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            summary = run_experiment(cfg)
        assert len(summary["settings"]) == 8  # gammas x ranks x alphas
        for key, block in summary["settings"].items():
            fd_mean = block["methods"]["s3"]["fd_mean"]
            bound = block["bound"]["theorem4_total_mean"]
            print(f"{key}: s3 fd {fd_mean:.1f} <= bound {bound:.1f}")
            assert fd_mean <= bound
        anchor = summary["settings"]["gamma=10,k=6,alpha=0.9"]
        assert 10.0 <= anchor["methods"]["s3"]["fd_mean"] <= 100.0
        assert 150.0 <= anchor["bound"]["theorem4_total_mean"] <= 2200.0
        print(f"denoise bounds took {time.time() - start:.0f} s")
        assert time.time() - start < 7200.0

    def test_lambda_stability(self):
        """Selection varies less across nearby regularization weights."""
        start = time.time()
        spectrum = np.array(
            (1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.1, 0.1)
        )
        m, B, lams = 3186, 100, (0.05, 0.03)
        wins = 0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for trial in range(100):
                truth = gen_low_rank(70, 70, spectrum, _derive(11, 1, trial))
                sigma = calibrate_snr(
                    truth, "completion", 4.0, mc_reps=100,
                    seed=_derive(11, 6, trial), m=m,
                )
                obs = gen_completion(truth, m, sigma, _derive(11, 2, trial))
                plan = complementary_bags(m, B, _derive(11, 3, trial))
                raw, sel = {}, {}
                L_warm = None
                for lam in lams:
                    cfg = EstimatorConfig(
                        kind="svt", lam=lam, max_iters=300, conv_tol=1e-6
                    )
                    L_full = svt_complete(obs, cfg, L0=L_warm)
                    L_warm = L_full
                    raw[lam] = extract_tangent(L_full, cfg.rank_tol)
                    tangents = [
                        extract_tangent(
                            svt_complete(obs.subset(bag), cfg, L0=L_full),
                            cfg.rank_tol,
                        )
                        for bag in plan.bags
                    ]
                    sel[lam] = algorithm1(
                        average_projectors(tangents), 0.7
                    ).selected
                mu_raw = misalignment_mu(raw[lams[0]], raw[lams[1]])
                mu_s3 = misalignment_mu(sel[lams[0]], sel[lams[1]])
                if mu_s3 < mu_raw:
                    wins += 1
        print(f"\nstability wins: {wins}/100 in {time.time() - start:.0f} s")
        assert wins >= 90

    def test_preset_determinism(self, tmp_path):
        blobs = []
        for sub in ("first", "second"):
            out = tmp_path / sub
            cfg = preset_config(
                "table1", output_dir=str(out), trials=3, B=10, snr=(2.0,),
                options={"lambda_points": 6, "cv_folds": 3, "figures": False},
            )
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                run_experiment(cfg)
            blobs.append((out / "summary.json").read_bytes())
        assert blobs[0] == blobs[1]
