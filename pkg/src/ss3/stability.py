"""Averaged bag projectors, the stable tangent-space criterion, and selection.

The average projection operator of B bag estimates acts on matrices; it
is never materialized as a (p1 p2) x (p1 p2) matrix. Membership of a
candidate tangent space T is decided from the spectrum of the operator
compressed onto T, computed in the canonical orthonormal basis
{x_i y_j'} of T: the compression splits into two rotated averages that
act on rows and columns separately plus a product term that must be
averaged bag by bag (it does not factorize across bags).

Selection (the main algorithm) eigendecomposes the averaged column and
row projectors and searches over nested leading-eigenvector tangent
spaces; nestedness makes the restricted smallest eigenvalue
non-increasing in the rank, so the largest stable rank is found by
binary search, pruned by the cheap diagonal upper bound on sigma_min.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .estimators import (
    EstimatorConfig,
    ObservationSet,
    estimate_column,
    estimate_tangent,
)
from .linalg import Subspace, TangentSpace
from .sampling import complementary_bags

__all__ = [
    "AveragedProjectors",
    "StabilityReport",
    "average_projectors",
    "stable_membership",
    "candidate_tangent",
    "algorithm1",
    "algorithm1_modified",
    "column_stability",
    "run_pipeline",
]

_MODES = ("tangent", "tangent-modified", "column")

# Restricted Gram matrices up to this dimension are built densely and
# passed to a direct eigensolver; larger ones use matrix-free Lanczos.
_DENSE_CUTOFF = 2600

# Cap on the entry count of any dense factor block in the Gram build.
_BLOCK_ENTRIES = 40_000_000


def _kahan_mean(mats) -> np.ndarray:
    """Compensated elementwise mean, accumulated in the given order."""
    total = None
    comp = None
    count = 0
    for M in mats:
        count += 1
        if total is None:
            total = np.array(M, dtype=float)
            comp = np.zeros_like(total)
            continue
        y = M - comp
        t = total + y
        comp = (t - total) - y
        total = t
    if total is None:
        raise ValueError("cannot average an empty collection")
    return total / count


@dataclass(frozen=True)
class AveragedProjectors:
    """Bag tangent estimates with their averaged column/row projectors.

    The bag list is retained so the averaged operator on matrices can
    be applied symbolically; P_avg_col and P_avg_row are its dense
    one-sided compressions.
    """

    tangents: tuple
    P_avg_col: np.ndarray
    P_avg_row: np.ndarray
    B: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.B != len(self.tangents) or self.B < 1:
            raise ValueError("B must equal the number of bag estimates")
        p1, p2 = self.tangents[0].p1, self.tangents[0].p2
        for t in self.tangents:
            if (t.p1, t.p2) != (p1, p2):
                raise ValueError("bag estimates have inconsistent shapes")
        if self.P_avg_col.shape != (p1, p1) or self.P_avg_row.shape != (p2, p2):
            raise ValueError("averaged projectors have inconsistent shapes")
        for P in (self.P_avg_col, self.P_avg_row):
            w = np.linalg.eigvalsh(P)
            if w[0] < -1e-9 or w[-1] > 1 + 1e-9:
                raise ValueError("averaged projector eigenvalues must lie in [0, 1]")

    @property
    def p1(self) -> int:
        return self.tangents[0].p1

    @property
    def p2(self) -> int:
        return self.tangents[0].p2

    def trace_avg(self) -> float:
        """Trace of the averaged operator = mean bag tangent dimension."""
        return math.fsum(t.dim for t in self.tangents) / self.B


@dataclass(frozen=True)
class StabilityReport:
    """Outcome of a stability-selection run.

    selected is a TangentSpace, or a Subspace in column mode. The curve
    holds the evaluated (rank, sigma_min) pairs in ascending rank
    order; membership_level is the level the output is guaranteed to
    satisfy (alpha, or 1 - 4(1 - alpha) for the modified algorithm).
    """

    selected: object
    alpha: float
    r_selected: int
    sigma_min_curve: tuple
    membership_level: float
    diagnostics: dict

    def __post_init__(self):
        ranks = [r for r, _ in self.sigma_min_curve]
        if ranks != sorted(ranks) or len(set(ranks)) != len(ranks):
            raise ValueError("sigma_min curve must be strictly ascending in rank")
        vals = [v for _, v in self.sigma_min_curve]
        for lo, hi in zip(vals[1:], vals[:-1]):
            if lo > hi + 1e-9:
                raise ValueError("sigma_min curve must be non-increasing in rank")


def average_projectors(tangents) -> AveragedProjectors:
    """Average the bag projectors, in ascending bag order.

    The one-sided averages are accumulated with compensated summation
    so results do not depend on how bag estimation was scheduled.
    """
    tangents = tuple(tangents)
    if not tangents:
        raise ValueError("average_projectors needs at least one bag estimate")
    Pc = _kahan_mean(t.col.projector for t in tangents)
    Pr = _kahan_mean(t.row.projector for t in tangents)
    Pc = (Pc + Pc.T) / 2.0
    Pr = (Pr + Pr.T) / 2.0
    return AveragedProjectors(
        tangents=tangents, P_avg_col=Pc, P_avg_row=Pr, B=len(tangents)
    )


def _lshape_indices(p1: int, p2: int, r: int):
    """Basis index pairs (i, j) with i < r or j < r, i-major order."""
    top_i = np.repeat(np.arange(r), p2)
    top_j = np.tile(np.arange(p2), r)
    bot_i = np.repeat(np.arange(r, p1), r)
    bot_j = np.tile(np.arange(r), p1 - r)
    return np.concatenate([top_i, bot_i]), np.concatenate([top_j, bot_j])


def _rotated_factors(avg: AveragedProjectors, Qx: np.ndarray, Qy: np.ndarray):
    Ws = [Qx.T @ t.col.basis for t in avg.tangents]
    Zs = [Qy.T @ t.row.basis for t in avg.tangents]
    Kbar = Qx.T @ avg.P_avg_col @ Qx
    Lbar = Qy.T @ avg.P_avg_row @ Qy
    return Ws, Zs, Kbar, Lbar


def _dense_sigma_min(Kbar, Lbar, Ws, Zs, I, J, B) -> float:
    d = I.size
    G = Kbar[I[:, None], I[None, :]] * (J[:, None] == J[None, :])
    G += (I[:, None] == I[None, :]) * Lbar[J[:, None], J[None, :]]
    prod = np.zeros_like(G)
    blocks = []
    width = 0
    max_width = max(1, _BLOCK_ENTRIES // d)
    for W, Z in zip(Ws, Zs):
        r = W.shape[1]
        if r == 0:
            continue
        blocks.append((W[I][:, :, None] * Z[J][:, None, :]).reshape(d, r * r))
        width += r * r
        if width >= max_width:
            F = np.concatenate(blocks, axis=1)
            prod += F @ F.T
            blocks, width = [], 0
    if blocks:
        F = np.concatenate(blocks, axis=1)
        prod += F @ F.T
    G -= prod / B
    return float(np.linalg.eigvalsh(G)[0])


def _stack_factors(Ws, Zs):
    """Zero-pad bag factors to a common rank for batched matmuls."""
    rmax = max(W.shape[1] for W in Ws)
    p1, p2 = Ws[0].shape[0], Zs[0].shape[0]
    Wst = np.zeros((len(Ws), p1, rmax))
    Zst = np.zeros((len(Zs), p2, rmax))
    for l, (W, Z) in enumerate(zip(Ws, Zs)):
        Wst[l, :, : W.shape[1]] = W
        Zst[l, :, : Z.shape[1]] = Z
    return Wst, Zst


def _lanczos_sigma_min(matvec, d: int, tol: float = 1e-11, max_iters: int = 500):
    """sigma_min(G) = 1 - lambda_max(I - G) for symmetric G, spectrum in [0, 1].

    Lanczos with full reorthogonalization and a deterministic start
    vector; converged when the residual bound beta * |last eigenvector
    component| falls below tol.
    """
    rng = np.random.default_rng(1729)
    q = rng.standard_normal(d)
    q /= np.linalg.norm(q)
    max_iters = min(max_iters, d)
    Q = np.empty((max_iters + 1, d))
    Q[0] = q
    alphas, betas = [], []
    lam = 0.0
    for j in range(max_iters):
        w = Q[j] - matvec(Q[j])
        alphas.append(float(Q[j] @ w))
        w -= alphas[-1] * Q[j]
        if j > 0:
            w -= betas[-1] * Q[j - 1]
        # full reorthogonalization, twice for stability
        for _ in range(2):
            w -= Q[: j + 1].T @ (Q[: j + 1] @ w)
        beta = float(np.linalg.norm(w))
        if beta < 1e-14 or j == max_iters - 1 or (j + 1) % 8 == 0:
            k = j + 1
            Tmat = np.diag(alphas) + np.diag(betas, 1) + np.diag(betas, -1)
            evals, evecs = np.linalg.eigh(Tmat[:k, :k])
            lam = float(evals[-1])
            resid = beta * abs(float(evecs[-1, -1]))
            if beta < 1e-14 or resid <= tol:
                return lam
        betas.append(beta)
        Q[j + 1] = w / beta
    warnings.warn("lanczos: residual tolerance not reached; returning best estimate")
    return lam


def _restricted_sigma_min(Kbar, Lbar, Ws, Zs, I, J, B) -> float:
    """Smallest eigenvalue of the averaged operator compressed onto the
    tangent directions indexed by (I, J)."""
    d = I.size
    if d == 0:
        return 1.0
    if d <= _DENSE_CUTOFF:
        smin = _dense_sigma_min(Kbar, Lbar, Ws, Zs, I, J, B)
    else:
        p1, p2 = Kbar.shape[0], Lbar.shape[0]
        Wst, Zst = _stack_factors(Ws, Zs)
        ZstT = Zst.transpose(0, 2, 1)
        WstT = Wst.transpose(0, 2, 1)

        def matvec(x):
            X = np.zeros((p1, p2))
            X[I, J] = x
            Y = Kbar @ X + X @ Lbar
            inner = (WstT @ X) @ Zst
            Y -= np.einsum("bpr,brs,bqs->pq", Wst, inner, Zst) / B
            return Y[I, J]

        lam_max_complement = _lanczos_sigma_min(matvec, d)
        smin = 1.0 - lam_max_complement
    return float(np.clip(smin, 0.0, 1.0))


def stable_membership(
    T: TangentSpace, avg: AveragedProjectors, alpha: float
) -> tuple[bool, float]:
    """Whether every unit direction of T holds at least alpha average energy.

    Returns (member, sigma_min) where sigma_min is the smallest
    eigenvalue of the averaged operator compressed onto T. The
    zero-dimensional tangent space is a member with sigma_min 1 by
    convention.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if (T.p1, T.p2) != (avg.p1, avg.p2):
        raise ValueError("tangent space and averages have different shapes")
    if T.dim == 0:
        return True, 1.0
    Qx = np.hstack([T.col.basis, T.col.complement().basis])
    Qy = np.hstack([T.row.basis, T.row.complement().basis])
    Ws, Zs, Kbar, Lbar = _rotated_factors(avg, Qx, Qy)
    I, J = _lshape_indices(T.p1, T.p2, T.rank)
    smin = _restricted_sigma_min(Kbar, Lbar, Ws, Zs, I, J, avg.B)
    return smin >= alpha, smin


def _eig_bases(avg: AveragedProjectors):
    """Eigenvectors of the averaged projectors, eigenvalues descending.

    Ties are broken by original eigenvector index (stable sort), so the
    candidate bases are deterministic for identical inputs.
    """
    if "eig" not in avg._cache:
        out = []
        for P in (avg.P_avg_col, avg.P_avg_row):
            w, U = np.linalg.eigh(P)
            order = np.argsort(-w, kind="stable")
            out.append((np.clip(w[order], 0.0, 1.0), U[:, order]))
        (wc, Uc), (wr, Ur) = out
        avg._cache["eig"] = (wc, Uc, wr, Ur)
    return avg._cache["eig"]


def _candidate_factors(avg: AveragedProjectors):
    if "factors" not in avg._cache:
        _, Uc, _, Ur = _eig_bases(avg)
        avg._cache["factors"] = _rotated_factors(avg, Uc, Ur)
    return avg._cache["factors"]


def candidate_tangent(avg: AveragedProjectors, r: int) -> TangentSpace:
    """Rank-r candidate from the top eigenvectors of the averaged projectors."""
    _, Uc, _, Ur = _eig_bases(avg)
    return TangentSpace(Subspace(Uc[:, :r]), Subspace(Ur[:, :r]))


def _min_diag_curve(avg: AveragedProjectors) -> np.ndarray:
    """Upper bound on sigma_min at each candidate rank, from the Gram diagonal.

    Entry r bounds the rank-r candidate: the diagonal Gram entry of the
    direction (i, j) is mean_l(a_il + b_jl - a_il b_jl) with per-bag
    energies a, b, and sigma_min never exceeds the smallest diagonal
    entry over the rank-r index set. Non-increasing in r.
    """
    if "mindiag" not in avg._cache:
        Ws, Zs, _, _ = _candidate_factors(avg)
        A = np.stack([np.sum(W * W, axis=1) for W in Ws], axis=1)
        Bm = np.stack([np.sum(Z * Z, axis=1) for Z in Zs], axis=1)
        D = A.mean(axis=1)[:, None] + Bm.mean(axis=1)[None, :]
        D -= A @ Bm.T / avg.B
        m_rows = np.minimum.accumulate(D.min(axis=1))
        m_cols = np.minimum.accumulate(D.min(axis=0))
        rmax = min(avg.p1, avg.p2)
        md = np.empty(rmax + 1)
        md[0] = 1.0
        md[1:] = np.minimum(m_rows[:rmax], m_cols[:rmax])
        avg._cache["mindiag"] = md
    return avg._cache["mindiag"]


def _sigma_min_rank(avg: AveragedProjectors, r: int) -> float:
    """sigma_min of the rank-r leading-eigenvector candidate; memoized."""
    memo = avg._cache.setdefault("sigma", {})
    if r not in memo:
        if r == 0:
            memo[r] = 1.0
        else:
            Ws, Zs, Kbar, Lbar = _candidate_factors(avg)
            I, J = _lshape_indices(avg.p1, avg.p2, r)
            memo[r] = _restricted_sigma_min(Kbar, Lbar, Ws, Zs, I, J, avg.B)
    return memo[r]


def _base_diagnostics(avg: AveragedProjectors, mode: str) -> dict:
    return {"trace_avg": avg.trace_avg(), "mode": mode}


def algorithm1(
    avg: AveragedProjectors, alpha: float, full_curve: bool = False
) -> StabilityReport:
    """Largest-rank stable tangent space over leading-eigenvector candidates.

    Candidates are nested, so sigma_min is non-increasing in rank and
    the largest stable rank is located by binary search; ranks whose
    diagonal bound already falls below alpha are never evaluated. With
    full_curve, every rank up to the pruning bound is evaluated.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    md = _min_diag_curve(avg)
    above = np.flatnonzero(md >= alpha)
    r_ub = int(above[-1]) if above.size else 0
    evaluated = {0: 1.0}
    lo, hi = 0, r_ub
    while lo < hi:
        mid = (lo + hi + 1) // 2
        s = _sigma_min_rank(avg, mid)
        evaluated[mid] = s
        if s >= alpha:
            lo = mid
        else:
            hi = mid - 1
    r_sel = lo
    if full_curve:
        for r in range(r_ub + 1):
            evaluated[r] = _sigma_min_rank(avg, r)
    diagnostics = _base_diagnostics(avg, "tangent")
    diagnostics["r_upper_bound"] = r_ub
    return StabilityReport(
        selected=candidate_tangent(avg, r_sel),
        alpha=alpha,
        r_selected=r_sel,
        sigma_min_curve=tuple(sorted(evaluated.items())),
        membership_level=alpha,
        diagnostics=diagnostics,
    )


def algorithm1_modified(avg: AveragedProjectors, alpha: float) -> StabilityReport:
    """Largest rank whose eigenvalue clears alpha on both one-sided averages.

    Cheaper than the full criterion; the output is guaranteed stable
    only at the weaker level 1 - 4(1 - alpha).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    wc, _, wr, _ = _eig_bases(avg)
    r_sel = int(min(np.count_nonzero(wc >= alpha), np.count_nonzero(wr >= alpha)))
    evaluated = {0: 1.0, r_sel: _sigma_min_rank(avg, r_sel)}
    return StabilityReport(
        selected=candidate_tangent(avg, r_sel),
        alpha=alpha,
        r_selected=r_sel,
        sigma_min_curve=tuple(sorted(evaluated.items())),
        membership_level=1.0 - 4.0 * (1.0 - alpha),
        diagnostics=_base_diagnostics(avg, "tangent-modified"),
    )


def column_stability(col_spaces, alpha: float) -> StabilityReport:
    """Column-space stability selection: keep eigenvectors of the averaged
    column projector whose eigenvalue is at least alpha."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    col_spaces = list(col_spaces)
    if not col_spaces:
        raise ValueError("column_stability needs at least one estimate")
    p = col_spaces[0].ambient_dim
    if any(s.ambient_dim != p for s in col_spaces):
        raise ValueError("column estimates have inconsistent ambient dimensions")
    P = _kahan_mean(s.projector for s in col_spaces)
    P = (P + P.T) / 2.0
    w, U = np.linalg.eigh(P)
    order = np.argsort(-w, kind="stable")
    w, U = np.clip(w[order], 0.0, 1.0), U[:, order]
    keep = int(np.count_nonzero(w >= alpha))
    curve = [(0, 1.0)] + [(r, float(w[r - 1])) for r in range(1, keep + 1)]
    return StabilityReport(
        selected=Subspace(U[:, :keep]),
        alpha=alpha,
        r_selected=keep,
        sigma_min_curve=tuple(curve),
        membership_level=alpha,
        diagnostics={
            "trace_avg": math.fsum(s.rank for s in col_spaces) / len(col_spaces),
            "mode": "column",
        },
    )


def run_pipeline(
    obs: ObservationSet,
    estimator_cfg: EstimatorConfig,
    alpha: float,
    B: int,
    seed: int,
    mode: str = "tangent",
    rescale_lambda: bool = False,
    full_curve: bool = False,
) -> StabilityReport:
    """Bag the observations, estimate per bag, average, and select.

    Bags are complementary half-splits of the observation indices (an
    odd count drops one observation at random, with a warning). A bag
    whose estimator fails numerically is dropped with a warning as long
    as at least B/2 bags survive. rescale_lambda scales the estimator's
    regularization weight by the bag fraction instead of reusing the
    full-data weight unchanged. full_curve evaluates sigma_min at every
    candidate rank instead of only the ranks the search visits.
    """
    if mode not in _MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    n = obs.n_obs
    work = obs
    if n % 2 == 1:
        drop = int(np.random.default_rng(seed).integers(n))
        keep = np.delete(np.arange(n), drop)
        warnings.warn("odd number of observations; dropping one at random")
        work = obs.subset(keep)
        n -= 1
    plan = complementary_bags(n, B, seed)
    cfg = estimator_cfg
    if rescale_lambda:
        cfg = replace(cfg, lam=cfg.lam * 0.5)
    estimates = []
    dropped = 0
    for bag in plan.bags:
        sub = work.subset(bag)
        try:
            if mode == "column":
                estimates.append(estimate_column(sub, cfg))
            else:
                estimates.append(estimate_tangent(sub, cfg))
        except (np.linalg.LinAlgError, FloatingPointError, RuntimeError):
            dropped += 1
    if len(estimates) < B // 2:
        raise RuntimeError(
            f"estimator failed on {dropped} of {B} bags; not enough survivors"
        )
    if dropped:
        warnings.warn(f"dropped {dropped} of {B} bags after estimator failures")
    if mode == "column":
        report = column_stability(estimates, alpha)
    else:
        avg = average_projectors(estimates)
        if mode == "tangent":
            report = algorithm1(avg, alpha, full_curve=full_curve)
        else:
            report = algorithm1_modified(avg, alpha)
    diagnostics = dict(report.diagnostics)
    diagnostics.update(
        {
            "dropped_bags": dropped,
            "bags_used": len(estimates),
            "n_obs_used": n,
            "estimator": cfg.kind,
            "lam": cfg.lam,
        }
    )
    return replace(report, diagnostics=diagnostics)
