"""Computable false-discovery bounds for stable tangent-space selections.

Every bound is evaluated, never proven: the three-term certificate
(estimator quality F, the bagging commutator penalty, and the slack
from the stability level), its bag-independent relaxation, the refined
form driven by a single rank-one commutator, the variable-selection
specialization, and the alignment diagnostic that justifies the
data-driven choice of the least-stable rank-one direction.

F is a property of the estimator on half-size datasets and is paid for
by Monte Carlo. The commutator penalty is computed exactly from the
realized bag estimates through the operator algebra, so no projector on
matrix space is ever materialized.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .estimators import estimate_column, estimate_tangent
from .linalg import (
    MatrixOperator,
    Subspace,
    TangentSpace,
    op_add,
    op_compose,
    op_scale,
    tangent_complement_operator,
    tangent_operator,
)
from .metrics import column_metrics, discovery_metrics
from .stability import AveragedProjectors, _kahan_mean, average_projectors

__all__ = [
    "BoundReport",
    "theorem4_terms",
    "estimator_quality",
    "kappa_bag_term",
    "prop5_bound",
    "dimT_bound",
    "prop6_bound",
    "kappa_indiv_estimate",
    "heuristic_alignment_diag",
    "variable_selection_bound",
]

_BASIS_MODES = ("basis_independent", "basis_dependent")


@dataclass(frozen=True)
class BoundReport:
    """All computable false-discovery certificates for one selection.

    theorem4_total = F + kappa_bag + slack_term bounds the expected
    false discovery of the selection; prop5_total replaces the bag
    terms by their alpha-only relaxation and prop6_total additionally
    replaces F using the single-direction commutator kappa_indiv.
    """

    F: float
    F_mode: str
    kappa_bag: float
    slack_term: float
    theorem4_total: float
    prop5_total: float
    q: float
    kappa_indiv: float
    prop6_total: float
    mc_reps: int
    mode: str

    def __post_init__(self):
        if self.F_mode not in _BASIS_MODES:
            raise ValueError(f"unknown F mode {self.F_mode!r}")
        if self.mode not in ("tangent", "column"):
            raise ValueError(f"unknown mode {self.mode!r}")
        terms = {
            "F": self.F,
            "kappa_bag": self.kappa_bag,
            "slack_term": self.slack_term,
            "theorem4_total": self.theorem4_total,
            "prop5_total": self.prop5_total,
            "q": self.q,
            "kappa_indiv": self.kappa_indiv,
            "prop6_total": self.prop6_total,
        }
        for name, value in terms.items():
            if not value >= 0.0:
                raise ValueError(f"{name} must be nonnegative, got {value}")
        if self.prop5_total < self.F - 1e-12:
            raise ValueError("prop5_total cannot fall below F")

    def to_json_dict(self) -> dict:
        return {
            "F": self.F,
            "F_mode": self.F_mode,
            "kappa_bag": self.kappa_bag,
            "slack_term": self.slack_term,
            "theorem4_total": self.theorem4_total,
            "prop5_total": self.prop5_total,
            "q": self.q,
            "kappa_indiv": self.kappa_indiv,
            "prop6_total": self.prop6_total,
            "mc_reps": self.mc_reps,
            "mode": self.mode,
        }


def _check_alpha_half_open(alpha: float) -> None:
    if not 0.5 < alpha < 1.0:
        raise ValueError("alpha must lie in (1/2, 1)")


def _check_alpha_unit(alpha: float) -> None:
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")


def _op_commutator(A: MatrixOperator, B: MatrixOperator) -> MatrixOperator:
    return op_add(op_compose(A, B), op_scale(op_compose(B, A), -1.0))


def _mat_commutator(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    return P @ Q - Q @ P


def _rank_one_energy(T: TangentSpace, u: np.ndarray, v: np.ndarray) -> float:
    """Squared tangent energy of the unit rank-one direction u v'."""
    a = float(np.sum((T.col.basis.T @ u) ** 2))
    b = float(np.sum((T.row.basis.T @ v) ** 2))
    return a + b - a * b


def _pair_indices(count: int):
    """Consecutive complementary pairs; an unpaired trailing bag is dropped."""
    if count % 2 == 1:
        warnings.warn("odd number of bag estimates; dropping the unpaired one")
        count -= 1
    return range(0, count, 2)


def _kappa_bag_tangent(T_sel, bag_tangents, T_star, basis):
    P_sel = tangent_operator(T_sel)
    P_star_perp = tangent_complement_operator(T_star)
    if basis is not None:
        Up, Vp = basis
    values = []
    for start in _pair_indices(len(bag_tangents)):
        pair = bag_tangents[start : start + 2]
        if basis is None:
            best = -math.inf
            for t_hat in pair:
                comm1 = _op_commutator(P_sel, tangent_complement_operator(t_hat))
                comm2 = _op_commutator(P_star_perp, tangent_operator(t_hat))
                best = max(best, comm1.trace_product(comm2))
            values.append(best)
        else:
            # per-direction pair maxima, summed over the product basis
            per_dir = []
            for t_hat in pair:
                per_dir.append(_rank_one_pair_values(T_sel, t_hat, Up, Vp))
            values.append(float(np.maximum(per_dir[0], per_dir[1]).sum()))
    return values


def _rank_one_pair_values(T_sel, t_hat, Up, Vp):
    """trace([P_sel, P_hat_perp] [P_span(uv'), P_hat]) for every basis pair.

    With a rank-one middle projector the trace collapses to
    <M, P_hat P_sel P_hat_perp (M)> + <M, P_hat_perp P_sel P_hat (M)>
    for M = u v'; the cross terms vanish because P_hat P_hat_perp = 0.
    """
    out = np.empty((Up.shape[1], Vp.shape[1]))
    for a, u in enumerate(Up.T):
        for b, v in enumerate(Vp.T):
            M = np.outer(u, v)
            X = t_hat.apply_complement(M)
            X = T_sel.apply(X)
            X = t_hat.apply(X)
            first = float(np.sum(M * X))
            Y = t_hat.apply(M)
            Y = T_sel.apply(Y)
            Y = t_hat.apply_complement(Y)
            out[a, b] = first + float(np.sum(M * Y))
    return out


def _kappa_bag_column(C_sel, bag_cols, C_star):
    P_sel = C_sel.projector
    P_star_perp = np.eye(C_star.ambient_dim) - C_star.projector
    eye = np.eye(C_sel.ambient_dim)
    values = []
    for start in _pair_indices(len(bag_cols)):
        best = -math.inf
        for c_hat in bag_cols[start : start + 2]:
            P_hat = c_hat.projector
            M1 = _mat_commutator(P_sel, eye - P_hat)
            M2 = _mat_commutator(P_star_perp, P_hat)
            best = max(best, float(np.einsum("ij,ji->", M1, M2)))
        values.append(best)
    return values


def kappa_bag_term(T_selected, bag_estimates, T_star, basis=None) -> float:
    """Bagging commutator penalty from realized complementary-pair bags.

    Per pair, the larger of the commutator traces of the two bags;
    averaged over pairs and clamped at zero (the population quantity is
    nonnegative; a realized average can dip below by noise). basis=None
    gives the basis-independent form; a (U_perp, V_perp) factor pair
    switches to the basis-dependent form over the product basis, where
    the pair maximum is taken separately for every basis direction.
    Column-space inputs (Subspace) are accepted with basis=None.
    """
    if isinstance(T_selected, TangentSpace):
        values = _kappa_bag_tangent(T_selected, list(bag_estimates), T_star, basis)
    else:
        if basis is not None:
            raise ValueError("basis-dependent form is not defined for column mode")
        C_star = T_star.col if isinstance(T_star, TangentSpace) else T_star
        values = _kappa_bag_column(T_selected, list(bag_estimates), C_star)
    if not values:
        return 0.0
    return max(0.0, math.fsum(values) / len(values))


def prop5_bound(F: float, q: float, alpha: float) -> float:
    """Bag-count-independent certificate: F plus the alpha-only penalty."""
    _check_alpha_unit(alpha)
    if F < 0 or q < 0:
        raise ValueError("F and q must be nonnegative")
    return F + (2.0 * q / alpha) * (1.0 - alpha + math.sqrt(1.0 - alpha))


def dimT_bound(q: float, alpha: float) -> float:
    """Upper bound on the expected selected dimension."""
    _check_alpha_unit(alpha)
    if q < 0:
        raise ValueError("q must be nonnegative")
    return q / alpha


def prop6_bound(
    q: float, p1: int, p2: int, kappa_indiv: float, alpha: float, column: bool = False
) -> float:
    """Refined certificate from a single rank-one commutator.

    q^2 over the ambient tangent dimension, plus the commutator penalty
    f(kappa) and the alpha-only penalty; column=True switches the
    ambient count from p1*p2 to p1 for the column-space analogue.
    """
    _check_alpha_unit(alpha)
    if q < 0 or kappa_indiv < 0 or p1 <= 0 or p2 <= 0:
        raise ValueError("q, kappa_indiv must be nonnegative; dims positive")
    denom = float(p1) if column else float(p1) * float(p2)
    f_kappa = denom * kappa_indiv**2 + 2.0 * q * kappa_indiv
    return q**2 / denom + f_kappa + (2.0 * q / alpha) * (
        1.0 - alpha + math.sqrt(1.0 - alpha)
    )


def _min_eigvec(P: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh(P)
    u = U[:, 0]
    pivot = int(np.argmax(np.abs(u)))
    if u[pivot] < 0:
        u = -u
    return u


def kappa_indiv_estimate(avg: AveragedProjectors):
    """Data-driven single-direction commutator size.

    The probe direction u v' uses the eigenvectors with the smallest
    eigenvalues of the averaged column and row projectors (the least
    stable rank-one direction); returns the mean over bags of the
    commutator Frobenius norm against that direction, via the rank-one
    closed form sqrt(2 t (1 - t)) with t the bag tangent energy.
    """
    u = _min_eigvec(avg.P_avg_col)
    v = _min_eigvec(avg.P_avg_row)
    norms = []
    for t_hat in avg.tangents:
        t = _rank_one_energy(t_hat, u, v)
        t = min(max(t, 0.0), 1.0)
        norms.append(math.sqrt(2.0 * t * (1.0 - t)))
    return math.fsum(norms) / avg.B, (u, v)


def _kappa_indiv_column(col_spaces):
    P = _kahan_mean(s.projector for s in col_spaces)
    u = _min_eigvec((P + P.T) / 2.0)
    norms = []
    for c_hat in col_spaces:
        t = float(np.sum((c_hat.basis.T @ u) ** 2))
        t = min(max(t, 0.0), 1.0)
        norms.append(math.sqrt(2.0 * t * (1.0 - t)))
    return math.fsum(norms) / len(col_spaces), u


def _monte_carlo_F(
    truth, estimator_cfg, data_model, basis_mode, mc_reps, seed, mode, basis
):
    """Estimator quality F and mean half-size dimension q by Monte Carlo."""
    sqrt_fds = []
    dims = []
    sums = None
    if basis_mode == "basis_dependent":
        Up, Vp = basis
        sums = np.zeros((Up.shape[1], Vp.shape[1]))
    for rep in range(mc_reps):
        obs = data_model(seed + rep)
        if mode == "column":
            est = estimate_column(obs, estimator_cfg)
            dims.append(float(est.rank))
            if basis_mode == "basis_independent":
                fd = column_metrics(est, truth.T_star.col).fd
                sqrt_fds.append(math.sqrt(max(fd, 0.0)))
        else:
            est = estimate_tangent(obs, estimator_cfg)
            dims.append(float(est.dim))
            if basis_mode == "basis_independent":
                fd = discovery_metrics(est, truth.T_star).fd
                sqrt_fds.append(math.sqrt(max(fd, 0.0)))
            else:
                a = np.sum((est.col.basis.T @ Up) ** 2, axis=0)
                b = np.sum((est.row.basis.T @ Vp) ** 2, axis=0)
                t = a[:, None] + b[None, :] - np.outer(a, b)
                sums += np.sqrt(np.clip(t, 0.0, 1.0))
    q = math.fsum(dims) / mc_reps
    if basis_mode == "basis_independent":
        F = (math.fsum(sqrt_fds) / mc_reps) ** 2
    else:
        F = float(((sums / mc_reps) ** 2).sum())
    return F, q


def estimator_quality(
    truth,
    estimator_cfg,
    data_model,
    basis_mode: str = "basis_independent",
    mc_reps: int = 100,
    seed: int = 0,
    mode: str = "tangent",
    basis=None,
):
    """Monte Carlo (F, q) alone, for reuse across many theorem4_terms calls.

    F and q depend only on the truth, the estimator, and the half-size
    data model, so callers sweeping selections or stability levels pay
    for the replications once and pass the pair through F_and_q.
    """
    if basis_mode not in _BASIS_MODES:
        raise ValueError(f"unknown basis mode {basis_mode!r}")
    if mode not in ("tangent", "column"):
        raise ValueError(f"unknown mode {mode!r}")
    if mc_reps < 2:
        raise ValueError("mc_reps must be at least 2")
    if mode == "column" and basis_mode == "basis_dependent":
        raise ValueError("basis-dependent forms are not defined for column mode")
    if basis is None and basis_mode == "basis_dependent":
        r = truth.rank
        basis = (truth.U_full[:, r:], truth.V_full[:, r:])
    return _monte_carlo_F(
        truth, estimator_cfg, data_model, basis_mode, mc_reps, seed, mode, basis
    )


def theorem4_terms(
    truth,
    estimator_cfg,
    data_model,
    alpha: float,
    B: int,
    basis_mode: str = "basis_independent",
    mc_reps: int = 100,
    seed: int = 0,
    T_selected=None,
    bag_tangents=(),
    *,
    basis=None,
    kappa_basis_dependent: bool = False,
    F_and_q=None,
) -> BoundReport:
    """Assemble every computable certificate for one realized selection.

    data_model is a callable seed -> ObservationSet producing an
    independent half-size dataset; F and q are Monte Carlo means over
    mc_reps such datasets with per-replicate seeds seed + rep (or taken
    from F_and_q when the caller has already paid for them). The
    commutator penalty uses the realized bag estimates, pairing
    consecutive bags; the slack term uses the realized selected
    dimension in place of its expectation. Requires oracle truth, so
    synthetic data only. T_selected may be a TangentSpace or, for the
    column-space analogue, a Subspace (basis-independent forms only).
    """
    _check_alpha_half_open(alpha)
    if basis_mode not in _BASIS_MODES:
        raise ValueError(f"unknown basis mode {basis_mode!r}")
    if F_and_q is None and mc_reps < 2:
        raise ValueError("mc_reps must be at least 2")
    if T_selected is None:
        raise ValueError("T_selected is required")
    bag_tangents = list(bag_tangents)
    if B != len(bag_tangents):
        warnings.warn(
            f"B={B} but {len(bag_tangents)} bag estimates were supplied; "
            "using the supplied estimates"
        )
    mode = "tangent" if isinstance(T_selected, TangentSpace) else "column"
    if mode == "column" and (basis_mode == "basis_dependent" or kappa_basis_dependent):
        raise ValueError("basis-dependent forms are not defined for column mode")
    r = truth.rank
    if basis is None and (basis_mode == "basis_dependent" or kappa_basis_dependent):
        basis = (truth.U_full[:, r:], truth.V_full[:, r:])
    if F_and_q is not None:
        F, q = float(F_and_q[0]), float(F_and_q[1])
    else:
        F, q = _monte_carlo_F(
            truth, estimator_cfg, data_model, basis_mode, mc_reps, seed, mode, basis
        )
    kappa_bag = kappa_bag_term(
        T_selected,
        bag_tangents,
        truth.T_star if mode == "tangent" else truth.T_star.col,
        basis=basis if kappa_basis_dependent else None,
    )
    dim_sel = T_selected.dim if mode == "tangent" else T_selected.rank
    slack = 2.0 * (1.0 - alpha) * float(dim_sel)
    if mode == "tangent":
        kappa_indiv, _ = kappa_indiv_estimate(average_projectors(bag_tangents))
    else:
        kappa_indiv, _ = _kappa_indiv_column(bag_tangents)
    return BoundReport(
        F=F,
        F_mode=basis_mode,
        kappa_bag=kappa_bag,
        slack_term=slack,
        theorem4_total=F + kappa_bag + slack,
        prop5_total=prop5_bound(F, q, alpha),
        q=q,
        kappa_indiv=kappa_indiv,
        prop6_total=prop6_bound(
            q, truth.p1, truth.p2, kappa_indiv, alpha, column=(mode == "column")
        ),
        mc_reps=mc_reps,
        mode=mode,
    )


def heuristic_alignment_diag(col_estimates, row_estimates, truth):
    """Diagnostic supporting the least-stable rank-one probe direction.

    tau is the mean over estimates of the worst-aligned side (smallest
    eigenvalue of the true-space compression of the estimated
    projector); delta is the larger of the smallest eigenvalues of the
    two averaged projectors. Returns (tau, delta, 2 tau - 1 -
    2 (delta + sqrt(delta))), a lower bound on the squared complement
    energy of the probe direction; nonpositive values are vacuous.
    """
    col_estimates = list(col_estimates)
    row_estimates = list(row_estimates)
    if len(col_estimates) != len(row_estimates) or not col_estimates:
        raise ValueError("need matching, nonempty column and row estimate lists")
    r = truth.rank
    U_star = truth.U_full[:, :r]
    V_star = truth.V_full[:, :r]
    mins = []
    for C_hat, R_hat in zip(col_estimates, row_estimates):
        wc = np.linalg.eigvalsh(U_star.T @ C_hat.projector @ U_star)
        wr = np.linalg.eigvalsh(V_star.T @ R_hat.projector @ V_star)
        mins.append(min(float(wc[0]), float(wr[0])))
    tau = math.fsum(mins) / len(mins)
    P_col = _kahan_mean(s.projector for s in col_estimates)
    P_row = _kahan_mean(s.projector for s in row_estimates)
    delta = max(
        float(np.linalg.eigvalsh((P_col + P_col.T) / 2.0)[0]),
        float(np.linalg.eigvalsh((P_row + P_row.T) / 2.0)[0]),
        0.0,  # eigvalsh can dip below zero by roundoff on exact projectors
    )
    bound = 2.0 * tau - 1.0 - 2.0 * (delta + math.sqrt(delta))
    return tau, delta, bound


def variable_selection_bound(null_selection_probs, alpha: float) -> float:
    """Expected false discovery bound for commuting (diagonal) selections:
    the summed null selection probabilities scaled by 1/(2 alpha - 1)."""
    if not alpha > 0.5:
        raise ValueError("alpha must exceed 1/2")
    probs = np.asarray(null_selection_probs, dtype=float)
    if probs.size and (probs.min() < 0.0 or probs.max() > 1.0):
        raise ValueError("selection probabilities must lie in [0, 1]")
    return math.fsum(probs.tolist()) / (2.0 * alpha - 1.0)
