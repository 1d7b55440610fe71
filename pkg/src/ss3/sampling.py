"""Complementary-partition subsampling and synthetic data generators.

Bags come in complementary pairs: each pair is a uniformly random split
of the observation indices into two disjoint halves. Generators cover
the three observation models (entrywise completion, dense replicates
with a diagonal-aligned perturbation, Gaussian linear functionals) and
are deterministic given their seed; replicate-structured generators
derive the seed for replicate i as seed + i, so parallel and serial
generation agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimators import ObservationSet
from .linalg import Subspace, TangentSpace, haar_subspace

__all__ = [
    "BagPlan",
    "SyntheticTruth",
    "complementary_bags",
    "gen_low_rank",
    "gen_low_rank_incoherent",
    "incoherence",
    "gen_completion",
    "gen_denoise",
    "gen_linear",
    "calibrate_snr",
]


@dataclass(frozen=True)
class BagPlan:
    """B bags over n observation indices, in B/2 complementary pairs.

    bags[2j] and bags[2j+1] partition range(n) into sorted halves of
    size n/2 each.
    """

    n: int
    B: int
    bags: tuple
    seed: int

    def __post_init__(self):
        if self.n % 2 != 0 or self.n < 2:
            raise ValueError("n must be even and positive")
        if self.B % 2 != 0 or self.B < 2:
            raise ValueError("B must be even and at least 2")
        if len(self.bags) != self.B:
            raise ValueError(f"expected {self.B} bags, got {len(self.bags)}")
        half = self.n // 2
        full = np.arange(self.n)
        for j in range(self.B // 2):
            a, b = self.bags[2 * j], self.bags[2 * j + 1]
            if a.size != half or b.size != half:
                raise ValueError("bags must each contain n/2 indices")
            if not np.array_equal(np.sort(np.concatenate([a, b])), full):
                raise ValueError(f"bags {2 * j} and {2 * j + 1} do not partition")


def complementary_bags(n: int, B: int, seed: int) -> BagPlan:
    """B/2 independent uniformly random half-splits of range(n)."""
    if n % 2 != 0:
        raise ValueError(f"n must be even, got {n}")
    if B % 2 != 0 or B < 2:
        raise ValueError(f"B must be even and at least 2, got {B}")
    rng = np.random.default_rng(seed)
    half = n // 2
    bags = []
    for _ in range(B // 2):
        perm = rng.permutation(n)
        bags.append(np.sort(perm[:half]))
        bags.append(np.sort(perm[half:]))
    return BagPlan(n=n, B=B, bags=tuple(bags), seed=seed)


@dataclass(frozen=True)
class SyntheticTruth:
    """A known low-rank population matrix with its tangent space.

    U_full and V_full are full orthogonal factor matrices whose leading
    rank(spectrum) columns carry L_star; the trailing columns give the
    paired singular directions used by the diagonal-aligned replicate
    perturbation and by complement-basis constructions.
    """

    L_star: np.ndarray
    T_star: TangentSpace
    spectrum: np.ndarray
    seed: int
    U_full: np.ndarray
    V_full: np.ndarray

    @property
    def p1(self) -> int:
        return self.L_star.shape[0]

    @property
    def p2(self) -> int:
        return self.L_star.shape[1]

    @property
    def rank(self) -> int:
        return self.spectrum.size


def gen_low_rank(p1: int, p2: int, spectrum, seed: int) -> SyntheticTruth:
    """L = U diag(spectrum) V' with independent Haar row/column factors.

    spectrum must be positive and non-increasing, with at most
    min(p1, p2) values.
    """
    spectrum = np.asarray(spectrum, dtype=float)
    if spectrum.ndim != 1:
        raise ValueError("spectrum must be a 1-d sequence")
    r = spectrum.size
    if r > min(p1, p2):
        raise ValueError("spectrum longer than min(p1, p2)")
    if r > 0 and spectrum[-1] <= 0:
        raise ValueError("spectrum values must be positive")
    if np.any(np.diff(spectrum) > 0):
        raise ValueError("spectrum must be non-increasing")
    seed_u, seed_v = np.random.SeedSequence(seed).generate_state(2)
    U_full = haar_subspace(p1, p1, int(seed_u)).basis
    V_full = haar_subspace(p2, p2, int(seed_v)).basis
    L = (U_full[:, :r] * spectrum) @ V_full[:, :r].T
    T = TangentSpace(Subspace(U_full[:, :r]), Subspace(V_full[:, :r]))
    return SyntheticTruth(
        L_star=L,
        T_star=T,
        spectrum=spectrum,
        seed=seed,
        U_full=U_full,
        V_full=V_full,
    )


def incoherence(T: TangentSpace) -> float:
    """max_i max(|P_col(e_i)|^2, |P_row(e_i)|^2), the completion difficulty.

    Equals the largest squared row norm across the two orthonormal
    factors. Haar factors concentrate near rank/dim; values near 1 mean
    a standard basis direction is almost inside the space.
    """
    sides = []
    for space in (T.col, T.row):
        if space.rank > 0:
            sides.append(float(np.max(np.sum(space.basis**2, axis=1))))
    return max(sides) if sides else 0.0


def gen_low_rank_incoherent(
    p1: int,
    p2: int,
    spectrum,
    target: float,
    seed: int,
    tol: float = 0.05,
    max_draws: int = 500,
) -> SyntheticTruth:
    """Haar truth rejection-sampled to a target incoherence value.

    Proposal: draw a Haar truth, tilt its leading column-space direction
    toward the first standard basis vector by a uniform random amount,
    re-orthonormalize, and accept when the realized incoherence lands in
    [target - tol, target + tol]. Plain Haar draws concentrate near
    rank/dim, so the tilt is what makes large targets reachable;
    unreachable windows (for example target + tol below the rank/p1
    pigeonhole floor) exhaust max_draws and raise.

    Unlike gen_low_rank, the output is not reproducible from
    (spectrum, seed) alone through gen_low_rank, so these truths have no
    sidecar regeneration path.
    """
    if not 0.0 < target <= 1.0:
        raise ValueError("target incoherence must be in (0, 1]")
    if tol <= 0:
        raise ValueError("tol must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 73]))
    r = np.asarray(spectrum, dtype=float).size
    if r < 1:
        raise ValueError("spectrum must be non-empty")
    for _ in range(max_draws):
        base = gen_low_rank(p1, p2, spectrum, int(rng.integers(2**63)))
        t = rng.uniform(0.0, 1.0)
        U = base.U_full.copy()
        u0, e0 = U[:, 0], np.zeros(p1)
        e0[0] = 1.0
        w = u0 - u0[0] * e0
        norm = np.linalg.norm(w)
        if norm < 1e-12:
            continue
        U[:, 0] = math.sqrt(t) * e0 + math.sqrt(1.0 - t) * (w / norm)
        Q, R = np.linalg.qr(U)
        U = Q * np.sign(np.diag(R))
        L = (U[:, :r] * base.spectrum) @ base.V_full[:, :r].T
        T = TangentSpace(Subspace(U[:, :r]), Subspace(base.V_full[:, :r]))
        if abs(incoherence(T) - target) <= tol:
            return SyntheticTruth(
                L_star=L,
                T_star=T,
                spectrum=base.spectrum,
                seed=seed,
                U_full=U,
                V_full=base.V_full,
            )
    raise RuntimeError(
        f"no draw within {tol} of incoherence {target} after {max_draws} tries"
    )


def gen_completion(
    truth: SyntheticTruth, m: int, sigma: float, seed: int
) -> ObservationSet:
    """m uniform-without-replacement entries of L_star plus N(0, sigma^2) noise."""
    p1, p2 = truth.p1, truth.p2
    if not 1 <= m <= p1 * p2:
        raise ValueError(f"need 1 <= m <= {p1 * p2}, got {m}")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    rng = np.random.default_rng(seed)
    flat = np.sort(rng.permutation(p1 * p2)[:m])
    ii, jj = np.divmod(flat, p2)
    y = truth.L_star[ii, jj] + sigma * rng.standard_normal(m)
    return ObservationSet.entrywise(p1, p2, ii, jj, y)


def _denoise_perturbation(truth: SyntheticTruth, rng) -> np.ndarray:
    """U diag(d) V' over all min(p1, p2) paired singular directions."""
    q = min(truth.p1, truth.p2)
    d = rng.standard_normal(q)
    return (truth.U_full[:, :q] * d) @ truth.V_full[:, :q].T


def gen_denoise(
    truth: SyntheticTruth, n: int, delta: float, gamma: float, seed: int
) -> ObservationSet:
    """n replicates Y_i = L_star + delta (gamma U D_i V' + noise_i).

    D_i is a full diagonal of i.i.d. standard normals over the paired
    singular directions of (U_full, V_full), so for gamma > 0 part of
    the perturbation always lies beyond the tangent space of L_star
    whenever min(p1, p2) exceeds its rank.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if delta < 0 or gamma < 0:
        raise ValueError("delta and gamma must be nonnegative")
    reps = np.empty((n, truth.p1, truth.p2))
    for i in range(n):
        rng = np.random.default_rng(seed + i)
        pert = gamma * _denoise_perturbation(truth, rng)
        noise = rng.standard_normal((truth.p1, truth.p2))
        reps[i] = truth.L_star + delta * (pert + noise)
    return ObservationSet.replicate(reps)


def gen_linear(
    truth: SyntheticTruth, n: int, sigma: float, seed: int
) -> ObservationSet:
    """n measurements y_i = <A_i, L_star> + N(0, sigma^2), A_i i.i.d. Gaussian."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    mats = np.empty((n, truth.p1, truth.p2))
    y = np.empty(n)
    for i in range(n):
        rng = np.random.default_rng(seed + i)
        mats[i] = rng.standard_normal((truth.p1, truth.p2))
        y[i] = float(np.tensordot(mats[i], truth.L_star)) + sigma * float(
            rng.standard_normal()
        )
    return ObservationSet.linear(mats, y)


def _unit_scale_norms(truth, model, mc_reps, seed, m, gamma):
    """Monte-Carlo noise norms at unit scale, fixed across the bisection."""
    if model == "completion":
        if m is None:
            raise ValueError("completion calibration requires m")
        rng = np.random.default_rng(seed)
        return np.array(
            [np.linalg.norm(rng.standard_normal(m)) for _ in range(mc_reps)]
        )
    # denoise: spectral norms of gamma-perturbed unit-scale replicates
    norms = np.empty(mc_reps)
    for t in range(mc_reps):
        rng = np.random.default_rng(seed + t)
        M = gamma * _denoise_perturbation(truth, rng)
        M += rng.standard_normal((truth.p1, truth.p2))
        norms[t] = np.linalg.norm(M, 2)
    return norms


def calibrate_snr(
    truth: SyntheticTruth,
    model: str,
    target_snr: float,
    mc_reps: int = 100,
    seed: int = 0,
    m: int | None = None,
    gamma: float = 0.0,
) -> float:
    """Noise scale achieving the model's signal-to-noise definition.

    completion: E[ ||L||_F / ||noise vector||_2 ] over the m observed
    entries. denoise: E[ ||L||_2 / ||scale (gamma U D V' + noise)||_2 ].
    linear: ||L||_F / scale; the entrywise ratio of two independent
    Gaussians has no finite mean, so the scalar definition compares
    signal energy against the noise standard deviation.

    Monte-Carlo bisection with common random numbers, run until the
    achieved SNR is within 1% of the target.
    """
    if model not in ("completion", "denoise", "linear"):
        raise ValueError(f"unknown model {model!r}")
    if target_snr <= 0:
        raise ValueError("target_snr must be positive")
    if mc_reps < 1:
        raise ValueError("mc_reps must be at least 1")

    if model == "denoise":
        signal = float(np.linalg.norm(truth.L_star, 2))
    else:
        signal = float(np.linalg.norm(truth.L_star))

    if model == "linear":
        # noise norm at unit scale is the unit standard deviation itself
        norms = np.array([1.0])
    else:
        norms = _unit_scale_norms(truth, model, mc_reps, seed, m, gamma)

    def achieved(scale: float) -> float:
        return float(np.mean(signal / (scale * norms)))

    # bracket: achieved is continuous and decreasing in the scale
    lo = hi = 1.0
    for _ in range(100):
        if achieved(hi) < target_snr:
            break
        hi *= 2.0
    else:
        raise RuntimeError("calibrate_snr: failed to bracket from above")
    for _ in range(100):
        if achieved(lo) > target_snr:
            break
        lo /= 2.0
    else:
        raise RuntimeError("calibrate_snr: failed to bracket from below")

    for _ in range(100):
        mid = 0.5 * (lo + hi)
        val = achieved(mid)
        if abs(val - target_snr) <= 0.01 * target_snr:
            return mid
        if val > target_snr:
            lo = mid
        else:
            hi = mid
    raise RuntimeError("calibrate_snr: bisection did not converge in 100 steps")
