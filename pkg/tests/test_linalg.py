"""Subspaces, tangent spaces, and the symbolic operator algebra vs dense oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import (
    dense_operator,
    dense_tangent_complement,
    dense_tangent_projector,
    random_operator,
    random_subspace,
    random_tangent,
)
from ss3.linalg import (
    MatrixOperator,
    Subspace,
    TangentSpace,
    haar_subspace,
    op_add,
    op_compose,
    op_scale,
    op_trace,
    orthonormalize,
    principal_angles,
    span_operator,
    tangent_apply,
    tangent_apply_complement,
    tangent_complement_operator,
    tangent_operator,
)


class TestSubspace:
    def test_identity_is_full_space(self):
        s = Subspace(np.eye(3))
        assert s.rank == 3 and s.ambient_dim == 3
        assert np.allclose(s.projector, np.eye(3))

    def test_zero_columns(self):
        s = Subspace(np.zeros((4, 0)))
        assert s.rank == 0
        assert np.allclose(s.projector, np.zeros((4, 4)))

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            Subspace(np.array([[1.0, 1.0], [0.0, 1.0]]))

    def test_rejects_too_many_columns(self):
        with pytest.raises(ValueError):
            Subspace(np.ones((2, 3)) / np.sqrt(2))

    def test_rejects_non_finite(self):
        b = np.eye(3)[:, :2]
        b[0, 0] = np.nan
        with pytest.raises(ValueError):
            Subspace(b)

    def test_projector_idempotent_symmetric(self, rng):
        s = random_subspace(rng, 7, 3)
        P = s.projector
        assert np.allclose(P @ P, P, atol=1e-12)
        assert np.allclose(P, P.T, atol=1e-12)
        assert abs(np.trace(P) - 3) < 1e-10

    def test_project_matches_projector(self, rng):
        s = random_subspace(rng, 6, 2)
        x = rng.standard_normal(6)
        assert np.allclose(s.project(x), s.projector @ x, atol=1e-12)

    def test_complement(self, rng):
        s = random_subspace(rng, 5, 2)
        c = s.complement()
        assert c.rank == 3
        assert np.allclose(s.basis.T @ c.basis, 0.0, atol=1e-10)
        assert np.allclose(s.projector + c.projector, np.eye(5), atol=1e-10)


class TestOrthonormalize:
    def test_rank_one_example(self):
        # [[1,2],[2,4]] spans (1,2)/sqrt(5)
        s = orthonormalize(np.array([[1.0, 2.0], [2.0, 4.0]]))
        assert s.rank == 1
        target = np.array([1.0, 2.0]) / np.sqrt(5.0)
        assert abs(abs(s.basis[:, 0] @ target) - 1.0) < 1e-12

    def test_zero_matrix(self):
        assert orthonormalize(np.zeros((4, 2))).rank == 0

    def test_span_preserved(self, rng):
        A = rng.standard_normal((8, 3)) @ rng.standard_normal((3, 5))
        s = orthonormalize(A)
        assert s.rank == 3
        # every column of A is fixed by the projector
        assert np.allclose(s.projector @ A, A, atol=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
    def test_output_is_orthonormal(self, p, k, seed):
        A = np.random.default_rng(seed).standard_normal((p, k))
        s = orthonormalize(A)
        gram = s.basis.T @ s.basis
        assert np.allclose(gram, np.eye(s.rank), atol=1e-10)
        assert np.allclose(s.projector @ A, A, atol=1e-8)


class TestHaarSubspace:
    def test_deterministic(self):
        a = haar_subspace(9, 4, seed=5)
        b = haar_subspace(9, 4, seed=5)
        assert np.array_equal(a.basis, b.basis)
        c = haar_subspace(9, 4, seed=6)
        assert not np.allclose(a.basis, c.basis)

    def test_zero_rank(self):
        assert haar_subspace(5, 0, seed=1).rank == 0

    def test_full_rank_is_identity_projector(self):
        s = haar_subspace(5, 5, seed=1)
        assert np.max(np.abs(s.projector - np.eye(5))) < 1e-10

    def test_uniform_direction_monte_carlo(self):
        # E[trace(P_S P_e1)] = 1/p for a Haar rank-1 subspace
        p, reps = 200, 10_000
        vals = np.empty(reps)
        for i in range(reps):
            vals[i] = haar_subspace(p, 1, seed=i).basis[0, 0] ** 2
        se = vals.std(ddof=1) / np.sqrt(reps)
        assert abs(vals.mean() - 1.0 / p) <= 3.0 * se


class TestTangentSpace:
    def test_dimension_formulas(self, rng):
        T = random_tangent(rng, 7, 5, 3)
        assert T.dim == 3 * (7 + 5) - 9
        assert T.dim_complement == (7 - 3) * (5 - 3)

    def test_rank_mismatch_rejected(self, rng):
        with pytest.raises(ValueError):
            TangentSpace(random_subspace(rng, 5, 2), random_subspace(rng, 4, 1))

    def test_apply_full_rank_is_identity(self, rng):
        T = random_tangent(rng, 4, 4, 4)
        M = rng.standard_normal((4, 4))
        assert np.allclose(tangent_apply(T, M), M, atol=1e-10)

    def test_apply_zero_rank_is_zero(self, rng):
        T = random_tangent(rng, 4, 3, 0)
        M = rng.standard_normal((4, 3))
        assert np.allclose(tangent_apply(T, M), 0.0)
        assert np.allclose(tangent_apply_complement(T, M), M, atol=1e-12)

    def test_apply_matches_dense_projector(self, rng):
        T = random_tangent(rng, 4, 4, 1)
        D = dense_tangent_projector(T)
        M = rng.standard_normal((4, 4))
        assert np.allclose(tangent_apply(T, M).ravel(), D @ M.ravel(), atol=1e-10)

    def test_projector_and_complement_partition(self, rng):
        T = random_tangent(rng, 5, 4, 2)
        D = dense_tangent_projector(T)
        Dc = dense_tangent_complement(T)
        n = 20
        assert np.allclose(D @ D, D, atol=1e-10)
        assert np.allclose(D, D.T, atol=1e-10)
        assert np.allclose(D + Dc, np.eye(n), atol=1e-10)
        assert abs(np.trace(D) - T.dim) < 1e-9
        assert abs(np.trace(Dc) - T.dim_complement) < 1e-9

    def test_wrong_shape_rejected(self, rng):
        T = random_tangent(rng, 4, 3, 1)
        with pytest.raises(ValueError):
            tangent_apply(T, np.zeros((3, 4)))


class TestMatrixOperator:
    def test_identity_and_zero(self, rng):
        ident = MatrixOperator.identity(3, 4)
        zero = MatrixOperator.zero(3, 4)
        M = rng.standard_normal((3, 4))
        assert np.allclose(ident.apply(M), M)
        assert np.allclose(zero.apply(M), 0.0)
        assert abs(ident.trace() - 12.0) < 1e-12
        assert abs(zero.trace()) == 0.0

    def test_trace_formulas(self, rng):
        T = random_tangent(rng, 6, 5, 2)
        assert abs(op_trace(tangent_operator(T)) - T.dim) < 1e-9
        assert abs(op_trace(tangent_complement_operator(T)) - T.dim_complement) < 1e-9

    def test_idempotence_and_orthogonality_traces(self, rng):
        T = random_tangent(rng, 5, 4, 2)
        P = tangent_operator(T)
        Pc = tangent_complement_operator(T)
        assert abs(op_trace(op_compose(P, P)) - T.dim) < 1e-9
        assert abs(op_trace(op_compose(P, Pc))) < 1e-9

    def test_compose_matches_sequential_apply(self, rng):
        a = random_operator(rng, 4, 3)
        b = random_operator(rng, 4, 3)
        M = rng.standard_normal((4, 3))
        assert np.allclose(
            a.compose(b).apply(M), a.apply(b.apply(M)), atol=1e-9
        )

    def test_algebra_matches_dense(self, rng):
        for _ in range(25):
            p1 = int(rng.integers(1, 5))
            p2 = int(rng.integers(1, 5))
            a = random_operator(rng, p1, p2)
            b = random_operator(rng, p1, p2)
            Da, Db = dense_operator(a), dense_operator(b)
            assert np.allclose(dense_operator(a.compose(b)), Da @ Db, atol=1e-8)
            assert np.allclose(dense_operator(op_add(a, b)), Da + Db, atol=1e-10)
            assert np.allclose(dense_operator(op_scale(a, -2.5)), -2.5 * Da, atol=1e-10)
            assert abs(op_trace(a) - np.trace(Da)) < 1e-8
            assert abs(a.trace_product(b) - np.trace(Da @ Db)) < 1e-7

    def test_random_tangent_pair_trace(self, rng):
        T1 = random_tangent(rng, 5, 4, 2)
        T2 = random_tangent(rng, 5, 4, 1)
        sym = op_trace(op_compose(tangent_operator(T1), tangent_operator(T2)))
        dense = np.trace(dense_tangent_projector(T1) @ dense_tangent_projector(T2))
        assert abs(sym - dense) < 1e-9

    def test_dim_mismatch_rejected(self, rng):
        a = random_operator(rng, 3, 3)
        b = random_operator(rng, 3, 4)
        with pytest.raises(ValueError):
            op_compose(a, b)


class TestSpanOperator:
    def test_e1_e1(self):
        op = span_operator(np.eye(3)[:, 0], np.eye(3)[:, 0])
        M = np.arange(9.0).reshape(3, 3)
        expected = np.zeros((3, 3))
        expected[0, 0] = M[0, 0]
        assert np.allclose(op.apply(M), expected)

    def test_is_rank_one_projector(self, rng):
        u = rng.standard_normal(4)
        v = rng.standard_normal(3)
        D = dense_operator(span_operator(u, v))
        assert np.allclose(D @ D, D, atol=1e-10)
        assert np.allclose(D, D.T, atol=1e-10)
        assert abs(np.trace(D) - 1.0) < 1e-10

    def test_scale_invariance(self, rng):
        u = rng.standard_normal(4)
        v = rng.standard_normal(3)
        D1 = dense_operator(span_operator(u, v))
        D2 = dense_operator(span_operator(3.0 * u, -2.0 * v))
        assert np.allclose(D1, D2, atol=1e-12)

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            span_operator(np.zeros(3), np.ones(3))


class TestPrincipalAngles:
    def test_equal_spaces(self, rng):
        s = random_subspace(rng, 6, 3)
        assert np.allclose(principal_angles(s, s), 0.0, atol=1e-7)

    def test_orthogonal_spans(self):
        s1 = Subspace(np.eye(4)[:, :2])
        s2 = Subspace(np.eye(4)[:, 2:])
        assert np.allclose(principal_angles(s1, s2), np.pi / 2, atol=1e-12)

    def test_known_plane_angle(self):
        theta = 0.3
        s1 = Subspace(np.eye(3)[:, :2])
        b2 = np.column_stack(
            [np.eye(3)[:, 0], np.array([0.0, np.cos(theta), np.sin(theta)])]
        )
        angles = np.sort(principal_angles(s1, Subspace(b2)))
        assert np.allclose(angles, [0.0, theta], atol=1e-10)

    def test_cos2_sums_to_projector_trace(self, rng):
        for _ in range(20):
            s1 = random_subspace(rng, 8, int(rng.integers(1, 5)))
            s2 = random_subspace(rng, 8, int(rng.integers(1, 5)))
            angles = principal_angles(s1, s2)
            assert np.all(angles >= -1e-12) and np.all(angles <= np.pi / 2 + 1e-12)
            tr = np.trace(s1.projector @ s2.projector)
            assert abs(np.sum(np.cos(angles) ** 2) - tr) < 1e-10

    def test_zero_rank_gives_empty(self, rng):
        s1 = random_subspace(rng, 5, 0)
        s2 = random_subspace(rng, 5, 2)
        assert principal_angles(s1, s2).size == 0

    def test_ambient_mismatch_rejected(self, rng):
        with pytest.raises(ValueError):
            principal_angles(random_subspace(rng, 4, 1), random_subspace(rng, 5, 1))
