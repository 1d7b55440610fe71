"""Shared fixtures and dense oracles.

The library computes every trace and sigma_min symbolically from small
Gram matrices. The oracles here take the opposite route: materialize
each operator on matrix space as a dense (p1*p2) x (p1*p2) array by
applying it to every standard basis matrix, then use plain dense linear
algebra. Agreement between the two routes is what most tests assert.
The flattening convention is C-order ravel throughout; it cancels out
because both sides of every comparison use the same convention.
"""

import numpy as np
import pytest

from ss3.linalg import (
    MatrixOperator,
    Subspace,
    TangentSpace,
    haar_subspace,
    tangent_complement_operator,
    tangent_operator,
)


def dense_operator(op: MatrixOperator) -> np.ndarray:
    """Materialize a MatrixOperator as a dense matrix acting on vec(M)."""
    n = op.p1 * op.p2
    D = np.empty((n, n))
    E = np.zeros((op.p1, op.p2))
    for j in range(n):
        E.flat[j] = 1.0
        D[:, j] = op.apply(E).ravel()
        E.flat[j] = 0.0
    return D


def dense_tangent_projector(T: TangentSpace) -> np.ndarray:
    return dense_operator(tangent_operator(T))


def dense_tangent_complement(T: TangentSpace) -> np.ndarray:
    return dense_operator(tangent_complement_operator(T))


def rank1_projector(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Dense projector onto span(u v') in the raveled convention."""
    u = np.asarray(u, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    m = np.outer(u, v).ravel()
    m = m / np.linalg.norm(m)
    return np.outer(m, m)


def random_subspace(rng: np.random.Generator, p: int, r: int) -> Subspace:
    if r == 0:
        return Subspace(np.zeros((p, 0)))
    return haar_subspace(p, r, int(rng.integers(2**31)))


def random_tangent(rng: np.random.Generator, p1: int, p2: int, r: int) -> TangentSpace:
    return TangentSpace(random_subspace(rng, p1, r), random_subspace(rng, p2, r))


def random_operator(rng: np.random.Generator, p1: int, p2: int) -> MatrixOperator:
    """Random mixed kron/rank-one operator for algebra tests."""
    kron = [
        (
            rng.standard_normal((p1, p1)),
            rng.standard_normal((p2, p2)),
            float(rng.standard_normal()),
        )
        for _ in range(int(rng.integers(0, 3)))
    ]
    rank1 = [
        (
            rng.standard_normal((p1, p2)),
            rng.standard_normal((p1, p2)),
            float(rng.standard_normal()),
        )
        for _ in range(int(rng.integers(0, 3)))
    ]
    if not kron and not rank1:
        kron = [(np.eye(p1), np.eye(p2), 1.0)]
    return MatrixOperator(p1=p1, p2=p2, kron_terms=kron, rank1_terms=rank1)


@pytest.fixture
def rng():
    return np.random.default_rng(20260814)
