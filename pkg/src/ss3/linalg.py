"""Subspace and tangent-space algebra on p1 x p2 matrices.

A :class:`Subspace` stores an orthonormal basis Q; its projector is
Q @ Q.T. A :class:`TangentSpace` is the pair (column space, row space)
attached to a rank-r point of the bounded-rank matrix variety; it acts
on matrices as

    P_T(M)     = Pc M + M Pr - Pc M Pr,
    P_Tperp(M) = (I - Pc) M (I - Pr),

which is the canonical action form. :class:`MatrixOperator` represents
linear maps on matrices exactly as a sum of Kronecker-form terms
M -> coeff * A M B plus rank-one terms M -> coeff * <G, M> H, so
compositions and traces of projector products are available in closed
form without ever materializing a (p1 p2) x (p1 p2) matrix.

No fixed vectorization convention is baked in; every public quantity is
either a matrix action or a convention-independent scalar trace.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "Subspace",
    "TangentSpace",
    "MatrixOperator",
    "orthonormalize",
    "haar_subspace",
    "tangent_apply",
    "tangent_apply_complement",
    "tangent_operator",
    "tangent_complement_operator",
    "span_operator",
    "op_compose",
    "op_add",
    "op_scale",
    "op_trace",
    "principal_angles",
]

# Relative singular-value cutoff used whenever a numerical basis or a
# numerical rank has to be extracted.
DEFAULT_RANK_TOL = 1e-8

_ORTHO_TOL = 1e-10


def _as_2d_float(A, name="matrix"):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite entries")
    return A


@dataclass(frozen=True)
class Subspace:
    """A linear subspace of R^ambient_dim given by an orthonormal basis.

    The zero subspace is legal and is represented by an (ambient, 0)
    basis.
    """

    basis: np.ndarray

    def __post_init__(self):
        basis = _as_2d_float(self.basis, "basis")
        object.__setattr__(self, "basis", basis)
        p, r = basis.shape
        if r > p:
            raise ValueError(f"rank {r} exceeds ambient dimension {p}")
        if r > 0:
            gram = basis.T @ basis
            if not np.allclose(gram, np.eye(r), atol=1e-8):
                raise ValueError("basis columns are not orthonormal")

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @cached_property
    def projector(self) -> np.ndarray:
        """Dense ambient x ambient orthogonal projector Q Q'."""
        return self.basis @ self.basis.T

    def project(self, x: np.ndarray) -> np.ndarray:
        """Project vectors (columns of x, or a 1-d vector) onto the space."""
        return self.basis @ (self.basis.T @ x)

    def complement(self) -> "Subspace":
        """Orthogonal complement, via the full SVD of the basis."""
        p, r = self.basis.shape
        if r == 0:
            return Subspace(np.eye(p))
        if r == p:
            return Subspace(np.empty((p, 0)))
        u, _, _ = np.linalg.svd(self.basis, full_matrices=True)
        return Subspace(u[:, r:])


def orthonormalize(A, tol: float = DEFAULT_RANK_TOL) -> Subspace:
    """Orthonormal basis for the span of the columns of A.

    Columns whose singular values fall at or below tol * sigma_max are
    discarded, so a zero matrix yields the zero subspace.
    """
    A = _as_2d_float(A, "A")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if A.shape[1] == 0:
        return Subspace(np.empty((A.shape[0], 0)))
    u, s, _ = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return Subspace(np.empty((A.shape[0], 0)))
    keep = int(np.count_nonzero(s > tol * s[0]))
    return Subspace(u[:, :keep])


def haar_subspace(ambient: int, rank: int, seed: int) -> Subspace:
    """Haar-distributed rank-dimensional subspace of R^ambient.

    Gaussian matrix, thin QR, R-diagonal signs folded into Q so the
    distribution is exactly Haar on the Stiefel manifold. Deterministic
    given the seed.
    """
    if not 0 <= rank <= ambient:
        raise ValueError(f"need 0 <= rank <= ambient, got {rank}, {ambient}")
    if rank == 0:
        return Subspace(np.empty((ambient, 0)))
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((ambient, rank))
    q, r = np.linalg.qr(g)
    # sign-correct so the implied R has positive diagonal
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return Subspace(q * signs)


@dataclass(frozen=True)
class TangentSpace:
    """Tangent space T(C, R) to the rank-r matrix variety at p1 x p2.

    col and row must have equal rank r; dim(T) = r (p1 + p2) - r^2.
    """

    col: Subspace
    row: Subspace

    def __post_init__(self):
        if self.col.rank != self.row.rank:
            raise ValueError(
                f"column rank {self.col.rank} != row rank {self.row.rank}"
            )
        r = self.col.rank
        if r > min(self.col.ambient_dim, self.row.ambient_dim):
            raise ValueError("rank exceeds min(p1, p2)")

    @property
    def p1(self) -> int:
        return self.col.ambient_dim

    @property
    def p2(self) -> int:
        return self.row.ambient_dim

    @property
    def rank(self) -> int:
        return self.col.rank

    @property
    def dim(self) -> int:
        r = self.rank
        return r * (self.p1 + self.p2) - r * r

    @property
    def dim_complement(self) -> int:
        return (self.p1 - self.rank) * (self.p2 - self.rank)

    def apply(self, M: np.ndarray) -> np.ndarray:
        """P_T(M) = Pc M + M Pr - Pc M Pr, evaluated in factored form."""
        M = self._check(M)
        qc, qr = self.col.basis, self.row.basis
        cm = qc @ (qc.T @ M)
        mr = (M @ qr) @ qr.T
        cmr = qc @ ((qc.T @ M @ qr) @ qr.T)
        return cm + mr - cmr

    def apply_complement(self, M: np.ndarray) -> np.ndarray:
        """P_Tperp(M) = (I - Pc) M (I - Pr), evaluated in factored form."""
        M = self._check(M)
        qc, qr = self.col.basis, self.row.basis
        left = M - qc @ (qc.T @ M)
        return left - (left @ qr) @ qr.T

    def _check(self, M: np.ndarray) -> np.ndarray:
        M = np.asarray(M, dtype=float)
        if M.shape != (self.p1, self.p2):
            raise ValueError(
                f"matrix shape {M.shape} does not match ({self.p1}, {self.p2})"
            )
        return M


def tangent_apply(T: TangentSpace, M: np.ndarray) -> np.ndarray:
    return T.apply(M)


def tangent_apply_complement(T: TangentSpace, M: np.ndarray) -> np.ndarray:
    return T.apply_complement(M)


@dataclass
class MatrixOperator:
    """Linear map on p1 x p2 matrices in exact Kronecker-plus-rank-one form.

    kron_terms: list of (A, B, coeff) meaning M -> coeff * A @ M @ B.
    rank1_terms: list of (G, H, coeff) meaning M -> coeff * <G, M> * H.

    The term lists are never reordered, so compositions and traces are
    bit-reproducible.
    """

    p1: int
    p2: int
    kron_terms: list = field(default_factory=list)
    rank1_terms: list = field(default_factory=list)

    @staticmethod
    def identity(p1: int, p2: int) -> "MatrixOperator":
        return MatrixOperator(p1, p2, [(np.eye(p1), np.eye(p2), 1.0)], [])

    @staticmethod
    def zero(p1: int, p2: int) -> "MatrixOperator":
        return MatrixOperator(p1, p2, [], [])

    def apply(self, M: np.ndarray) -> np.ndarray:
        M = np.asarray(M, dtype=float)
        if M.shape != (self.p1, self.p2):
            raise ValueError(
                f"matrix shape {M.shape} does not match ({self.p1}, {self.p2})"
            )
        out = np.zeros((self.p1, self.p2))
        for A, B, c in self.kron_terms:
            out += c * (A @ M @ B)
        for G, H, c in self.rank1_terms:
            out += (c * float(np.tensordot(G, M))) * H
        return out

    def _check_dims(self, other: "MatrixOperator"):
        if (self.p1, self.p2) != (other.p1, other.p2):
            raise ValueError(
                f"operator dims ({self.p1},{self.p2}) != ({other.p1},{other.p2})"
            )

    def compose(self, other: "MatrixOperator") -> "MatrixOperator":
        """Operator self o other (apply other first)."""
        self._check_dims(other)
        kron = []
        rank1 = []
        for A1, B1, c1 in self.kron_terms:
            for A2, B2, c2 in other.kron_terms:
                kron.append((A1 @ A2, B2 @ B1, c1 * c2))
            for G2, H2, c2 in other.rank1_terms:
                rank1.append((G2, A1 @ H2 @ B1, c1 * c2))
        for G1, H1, c1 in self.rank1_terms:
            for A2, B2, c2 in other.kron_terms:
                rank1.append((A2.T @ G1 @ B2.T, H1, c1 * c2))
            for G2, H2, c2 in other.rank1_terms:
                rank1.append((G2, H1, c1 * c2 * float(np.tensordot(G1, H2))))
        return MatrixOperator(self.p1, self.p2, kron, rank1)

    def add(self, other: "MatrixOperator") -> "MatrixOperator":
        self._check_dims(other)
        return MatrixOperator(
            self.p1,
            self.p2,
            list(self.kron_terms) + list(other.kron_terms),
            list(self.rank1_terms) + list(other.rank1_terms),
        )

    def scale(self, c: float) -> "MatrixOperator":
        return MatrixOperator(
            self.p1,
            self.p2,
            [(A, B, c * c0) for A, B, c0 in self.kron_terms],
            [(G, H, c * c0) for G, H, c0 in self.rank1_terms],
        )

    def trace(self) -> float:
        """Trace of the operator, as a map on the p1 p2 dimensional space."""
        total = 0.0
        for A, B, c in self.kron_terms:
            total += c * float(np.trace(A)) * float(np.trace(B))
        for G, H, c in self.rank1_terms:
            total += c * float(np.tensordot(G, H))
        return total

    def trace_product(self, other: "MatrixOperator") -> float:
        """trace(self o other) without materializing composed products."""
        self._check_dims(other)
        total = 0.0
        for A1, B1, c1 in self.kron_terms:
            for A2, B2, c2 in other.kron_terms:
                total += (
                    c1
                    * c2
                    * float(np.einsum("ij,ji->", A1, A2))
                    * float(np.einsum("ij,ji->", B2, B1))
                )
            for G2, H2, c2 in other.rank1_terms:
                total += c1 * c2 * float(np.tensordot(G2, A1 @ H2 @ B1))
        for G1, H1, c1 in self.rank1_terms:
            for A2, B2, c2 in other.kron_terms:
                total += c1 * c2 * float(np.tensordot(G1, A2 @ H1 @ B2))
            for G2, H2, c2 in other.rank1_terms:
                total += (
                    c1
                    * c2
                    * float(np.tensordot(G1, H2))
                    * float(np.tensordot(G2, H1))
                )
        return total


def tangent_operator(T: TangentSpace) -> MatrixOperator:
    """P_T as a three-term Kronecker-form operator."""
    pc = T.col.projector
    pr = T.row.projector
    i1 = np.eye(T.p1)
    i2 = np.eye(T.p2)
    return MatrixOperator(
        T.p1, T.p2, [(pc, i2, 1.0), (i1, pr, 1.0), (pc, pr, -1.0)], []
    )


def tangent_complement_operator(T: TangentSpace) -> MatrixOperator:
    """P_Tperp as a single Kronecker-form term (I - Pc, I - Pr)."""
    pc_perp = np.eye(T.p1) - T.col.projector
    pr_perp = np.eye(T.p2) - T.row.projector
    return MatrixOperator(T.p1, T.p2, [(pc_perp, pr_perp, 1.0)], [])


def span_operator(u: np.ndarray, v: np.ndarray) -> MatrixOperator:
    """Projector onto span(u v'), with u and v normalized internally."""
    u = np.asarray(u, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("span_operator needs nonzero u and v")
    u = u / nu
    v = v / nv
    return MatrixOperator(
        u.size, v.size, [(np.outer(u, u), np.outer(v, v), 1.0)], []
    )


def op_compose(a: MatrixOperator, b: MatrixOperator) -> MatrixOperator:
    return a.compose(b)


def op_add(a: MatrixOperator, b: MatrixOperator) -> MatrixOperator:
    return a.add(b)


def op_scale(a: MatrixOperator, c: float) -> MatrixOperator:
    return a.scale(c)


def op_trace(a: MatrixOperator) -> float:
    return a.trace()


def principal_angles(S1: Subspace, S2: Subspace) -> np.ndarray:
    """Principal angles between two subspaces, in [0, pi/2].

    Cosines are the singular values of basis1' @ basis2, clamped into
    [0, 1] to absorb roundoff before acos.
    """
    if S1.ambient_dim != S2.ambient_dim:
        raise ValueError(
            f"ambient dims differ: {S1.ambient_dim} vs {S2.ambient_dim}"
        )
    if min(S1.rank, S2.rank) == 0:
        return np.empty(0)
    cos = np.linalg.svd(S1.basis.T @ S2.basis, compute_uv=False)
    return np.arccos(np.clip(cos, 0.0, 1.0))
