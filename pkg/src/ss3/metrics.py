"""False discovery, power, FDR, misalignment, and commutator magnitudes.

Every quantity is a convention-independent trace and is computed in
closed form from small Gram matrices; the dense vectorized projector
computation exists only in the test suite as an oracle.

For a tangent-space estimate T-hat and population tangent space T-star,

    fd = trace(P_That P_Tstar_perp)   (energy landing outside the truth),
    pw = trace(P_That P_Tstar)        (energy recovering the truth),

and fd + pw = dim(T-hat) holds per realization. The variable-selection
specialization (coordinate subspaces, diagonal tangent spaces) makes
these the usual discrete false-discovery counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ss3.linalg import (
    MatrixOperator,
    Subspace,
    TangentSpace,
    span_operator,
)

__all__ = [
    "DiscoveryMetrics",
    "tangent_overlap",
    "discovery_metrics",
    "column_metrics",
    "misalignment_mu",
    "commutator_frobenius",
    "tangent_span_commutator",
    "coordinate_subspace",
    "diagonal_tangent",
]


@dataclass(frozen=True)
class DiscoveryMetrics:
    """Per-realization discovery counts for one estimate against a truth."""

    fd: float
    pw: float
    fdr: float
    dim_estimate: int
    dim_truth: int
    dim_truth_complement: int

    def to_json_dict(self) -> dict:
        return {
            "fd": float(self.fd),
            "pw": float(self.pw),
            "fdr": float(self.fdr),
            "dim_estimate": int(self.dim_estimate),
            "dim_truth": int(self.dim_truth),
            "dim_truth_complement": int(self.dim_truth_complement),
        }


def _projector_overlap(S1: Subspace, S2: Subspace) -> float:
    # trace(P_S1 P_S2) = ||Q1' Q2||_F^2
    if min(S1.rank, S2.rank) == 0:
        return 0.0
    g = S1.basis.T @ S2.basis
    return float(np.sum(g * g))


def tangent_overlap(T1: TangentSpace, T2: TangentSpace) -> float:
    """trace(P_T1 P_T2) via the nine-term Kronecker expansion.

    With c = trace(Pc1 Pc2), r = trace(Pr1 Pr2) and subspace dimensions
    c1, c2, r1, r2, the expansion of (Pc x I + I x Pr - Pc x Pr) on both
    sides collapses to

        c p2 + c1 r2 - c r2 + c2 r1 + p1 r - c2 r - c r1 - c1 r + c r.
    """
    if (T1.p1, T1.p2) != (T2.p1, T2.p2):
        raise ValueError("tangent spaces live on different matrix spaces")
    p1, p2 = T1.p1, T1.p2
    c = _projector_overlap(T1.col, T2.col)
    r = _projector_overlap(T1.row, T2.row)
    c1, r1 = T1.col.rank, T1.row.rank
    c2, r2 = T2.col.rank, T2.row.rank
    return (
        c * p2
        + c1 * r2
        - c * r2
        + c2 * r1
        + p1 * r
        - c2 * r
        - c * r1
        - c1 * r
        + c * r
    )


def discovery_metrics(T_hat: TangentSpace, T_star: TangentSpace) -> DiscoveryMetrics:
    """False discovery and power of T_hat against the population T_star.

    fd expands trace(P_That P_Tstar_perp) using the single-Kronecker-term
    form of the complement projector: with chat = trace(P_Chat P_Cstar_perp)
    and rhat = trace(P_Rhat P_Rstar_perp),

        fd = chat (p2 - r*) + (p1 - r*) rhat - chat rhat.

    pw is the tangent overlap; fdr = fd / dim(T_hat), taken to be 0 for a
    zero-dimensional estimate.
    """
    if (T_hat.p1, T_hat.p2) != (T_star.p1, T_star.p2):
        raise ValueError("tangent spaces live on different matrix spaces")
    p1, p2 = T_hat.p1, T_hat.p2
    r_star = T_star.rank
    # trace(P_Chat P_Cstar_perp) = rank(Chat) - trace(P_Chat P_Cstar)
    chat = T_hat.col.rank - _projector_overlap(T_hat.col, T_star.col)
    rhat = T_hat.row.rank - _projector_overlap(T_hat.row, T_star.row)
    fd = chat * (p2 - r_star) + (p1 - r_star) * rhat - chat * rhat
    pw = tangent_overlap(T_hat, T_star)
    dim_est = T_hat.dim
    fdr = fd / dim_est if dim_est > 0 else 0.0
    return DiscoveryMetrics(
        fd=float(fd),
        pw=float(pw),
        fdr=float(min(max(fdr, 0.0), 1.0)),
        dim_estimate=dim_est,
        dim_truth=T_star.dim,
        dim_truth_complement=T_star.dim_complement,
    )


def column_metrics(C_hat: Subspace, C_star: Subspace) -> DiscoveryMetrics:
    """Column-space discovery counts, in subspace units (no p2 scaling)."""
    if C_hat.ambient_dim != C_star.ambient_dim:
        raise ValueError("subspaces live in different ambient spaces")
    pw = _projector_overlap(C_hat, C_star)
    fd = C_hat.rank - pw
    fdr = fd / C_hat.rank if C_hat.rank > 0 else 0.0
    return DiscoveryMetrics(
        fd=float(fd),
        pw=float(pw),
        fdr=float(min(max(fdr, 0.0), 1.0)),
        dim_estimate=C_hat.rank,
        dim_truth=C_star.rank,
        dim_truth_complement=C_star.ambient_dim - C_star.rank,
    )


def misalignment_mu(T1: TangentSpace, T2: TangentSpace) -> float:
    """mu(T1, T2) = 1 - trace(P_T1 P_T2) / max(dim T1, dim T2).

    Zero iff the spaces coincide (when dims are equal); 1 when they are
    orthogonal. Undefined when both spaces are zero-dimensional.
    """
    d = max(T1.dim, T2.dim)
    if d == 0:
        raise ValueError("mu is undefined for two zero-dimensional spaces")
    return float(min(max(1.0 - tangent_overlap(T1, T2) / d, 0.0), 1.0))


def commutator_frobenius(op1: MatrixOperator, op2: MatrixOperator) -> float:
    """Frobenius norm of [op1, op2] for projector operators.

    For orthogonal projectors A, B idempotence gives
    ||AB - BA||_F^2 = 2 trace(AB) - 2 trace(ABAB); non-projector inputs
    are not detected.
    """
    t_ab = op1.trace_product(op2)
    ab = op1.compose(op2)
    t_abab = ab.trace_product(ab)
    return float(np.sqrt(max(2.0 * t_ab - 2.0 * t_abab, 0.0)))


def tangent_span_commutator(T: TangentSpace, u: np.ndarray, v: np.ndarray) -> float:
    """|| [P_T, P_span(uv')] ||_F via the rank-one fast path.

    With t = ||P_T(uv')||_F^2 for unit u, v the norm is sqrt(2 t (1-t)).
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("u and v must be nonzero")
    u = u / nu
    v = v / nv
    # ||P_T(uv')||_F^2 = a + b - a b with a = u'Pc u, b = v'Pr v
    a = float(np.sum((T.col.basis.T @ u) ** 2))
    b = float(np.sum((T.row.basis.T @ v) ** 2))
    t = min(max(a + b - a * b, 0.0), 1.0)
    return float(np.sqrt(2.0 * t * (1.0 - t)))


def coordinate_subspace(indices, p: int) -> Subspace:
    """Span of the standard basis vectors e_i for i in indices."""
    idx = sorted(set(int(i) for i in indices))
    if any(i < 0 or i >= p for i in idx):
        raise ValueError("indices out of range")
    basis = np.zeros((p, len(idx)))
    for k, i in enumerate(idx):
        basis[i, k] = 1.0
    return Subspace(basis)


def diagonal_tangent(indices, p: int) -> TangentSpace:
    """Tangent space of the diagonal (variable-selection) embedding.

    A support set S of diagonal entries maps to T(C, R) with
    C = R = span{e_i : i in S}, the matrix-variety tangent space at the
    diagonal point with support S.
    """
    s = coordinate_subspace(indices, p)
    return TangentSpace(col=s, row=s)
