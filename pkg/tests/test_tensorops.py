"""Tensor kernel tests: canonical layout, reshaping, and linear algebra."""
import numpy as np
import pytest

from cpfactor.exceptions import DataError, RankDeficientError
from cpfactor.tensorops import (
    dematricize,
    dual_mode_product,
    fold_square,
    gram_inverse_dual,
    kron_chain,
    matricize,
    mode_product,
    outer,
    sign_fix,
    sin_angle,
    tensorize,
    top_eigs,
    top_left_singular,
    unfold_square,
    vec,
)


def canonical_tensor(shape):
    """Tensor whose entry at (i_1..i_K) is its 1-based canonical position."""
    d = int(np.prod(shape))
    return tensorize(np.arange(1.0, d + 1.0), shape)


class TestMatricize:
    def test_matrix_mode0_is_identity_case(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(matricize(m, 0), m)

    def test_2x2x2_mode1_by_enumeration(self):
        t = canonical_tensor((2, 2, 2))
        # oracle: enumerate the index map for all 8 entries
        expected = np.empty((2, 4))
        for i2 in range(2):
            for col, (i1, i3) in enumerate([(0, 0), (1, 0), (0, 1), (1, 1)]):
                expected[i2, col] = t[i1, i2, i3]
        assert np.array_equal(matricize(t, 1), expected)
        assert np.array_equal(expected, np.array([[1, 2, 5, 6], [3, 4, 7, 8.0]]))

    def test_roundtrip_all_modes(self):
        rng = np.random.default_rng(0)
        for shape in [(3, 4, 5), (2, 3), (2, 3, 2, 4)]:
            t = rng.standard_normal(shape)
            for k in range(len(shape)):
                assert np.array_equal(dematricize(matricize(t, k), k, shape), t)

    def test_mode_out_of_range(self):
        with pytest.raises(DataError):
            matricize(np.zeros((2, 2)), 2)

    def test_vec_tensorize_roundtrip(self):
        rng = np.random.default_rng(1)
        t = rng.standard_normal((3, 4, 5))
        assert np.array_equal(tensorize(vec(t), (3, 4, 5)), t)
        # canonical layout: first index fastest
        t2 = canonical_tensor((2, 3))
        assert np.array_equal(vec(t2), np.arange(1.0, 7.0))


class TestUnfoldSquare:
    def test_rank_one(self):
        rng = np.random.default_rng(2)
        base = rng.standard_normal((2, 3))
        v = vec(base)
        t = np.multiply.outer(base, base)  # order-4 tensor, shape (2,3,2,3)
        assert np.allclose(unfold_square(t), np.outer(v, v))

    def test_fold_roundtrip(self):
        rng = np.random.default_rng(3)
        t = rng.standard_normal((2, 3, 2, 3))
        assert np.array_equal(fold_square(unfold_square(t), (2, 3)), t)

    def test_odd_order_rejected(self):
        with pytest.raises(DataError):
            unfold_square(np.zeros((2, 2, 2)))

    def test_half_shape_mismatch_rejected(self):
        with pytest.raises(DataError):
            unfold_square(np.zeros((2, 3, 3, 2)))


class TestModeProduct:
    def test_identity_leaves_tensor(self):
        rng = np.random.default_rng(4)
        t = rng.standard_normal((3, 4, 2))
        for k, dk in enumerate(t.shape):
            assert np.allclose(mode_product(t, np.eye(dk), k), t)

    def test_hand_contraction(self):
        t = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.allclose(mode_product(t, np.array([1.0, 1.0]), 1), [3.0, 7.0])

    def test_distinct_modes_commute(self):
        rng = np.random.default_rng(5)
        t = rng.standard_normal((3, 4, 5))
        u = rng.standard_normal((2, 3))
        v = rng.standard_normal((6, 4))
        a = mode_product(mode_product(t, u, 0), v, 1)
        b = mode_product(mode_product(t, v, 1), u, 0)
        assert np.allclose(a, b)

    def test_multilinear(self):
        rng = np.random.default_rng(6)
        t = rng.standard_normal((3, 4))
        v = rng.standard_normal(4)
        assert np.allclose(mode_product(2.5 * t, v, 1), 2.5 * mode_product(t, v, 1))
        assert np.allclose(mode_product(t, 2.5 * v, 1), 2.5 * mode_product(t, v, 1))

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            mode_product(np.zeros((3, 4)), np.zeros(5), 1)


class TestDualModeProduct:
    def test_order2_rank_one(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal(4)
        t = np.outer(a, a)
        assert np.allclose(dual_mode_product(t, np.eye(4), 0), a @ a)

    def test_order4_rank_one_expansion(self):
        rng = np.random.default_rng(8)
        a1 = rng.standard_normal(3)
        a1 /= np.linalg.norm(a1)
        a2 = rng.standard_normal(4)
        a2 /= np.linalg.norm(a2)
        t = outer([a1, a2, a1, a2])
        theta = rng.standard_normal((3, 3))
        got = dual_mode_product(t, theta, 0)
        assert np.allclose(got, (a1 @ theta @ a1) * np.outer(a2, a2))

    def test_linearity(self):
        rng = np.random.default_rng(9)
        t = rng.standard_normal((3, 4, 3, 4))
        m1 = rng.standard_normal((4, 4))
        m2 = rng.standard_normal((4, 4))
        assert np.allclose(
            dual_mode_product(t, m1 + m2, 1),
            dual_mode_product(t, m1, 1) + dual_mode_product(t, m2, 1),
        )


class TestOuter:
    def test_single_vector(self):
        v = np.array([1.0, 0.0])
        assert np.array_equal(outer([v]), v)

    def test_hand_product(self):
        got = outer([np.array([1.0, 2.0]), np.array([3.0, 4.0])])
        assert np.array_equal(got, [[3.0, 4.0], [6.0, 8.0]])

    def test_norm_multiplicative(self):
        rng = np.random.default_rng(10)
        vs = [rng.standard_normal(d) for d in (3, 4, 5)]
        want = np.prod([np.linalg.norm(v) for v in vs])
        assert np.isclose(np.linalg.norm(outer(vs)), want)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            outer([])

    def test_kron_chain_matches_vec_of_outer(self):
        rng = np.random.default_rng(11)
        vs = [rng.standard_normal(d) for d in (2, 3, 4)]
        assert np.allclose(kron_chain(vs), vec(outer(vs)))


class TestTopEigs:
    def test_diagonal(self):
        got = top_eigs(np.diag([3.0, 2.0, 1.0]), 2)
        assert np.allclose(got.values, [3.0, 2.0])
        assert np.allclose(np.abs(got.vectors), np.eye(3)[:, :2])

    def test_rank_one(self):
        rng = np.random.default_rng(12)
        v = rng.standard_normal(5)
        v /= np.linalg.norm(v)
        got = top_eigs(np.outer(v, v), 1)
        assert np.isclose(got.values[0], 1.0)
        assert sin_angle(got.vectors[:, 0], v) < 1e-7

    def test_against_full_decomposition(self):
        rng = np.random.default_rng(13)
        a = rng.standard_normal((6, 6))
        m = (a + a.T) / 2
        got = top_eigs(m, 3)
        full = np.linalg.eigh(m)
        assert np.allclose(got.values, full[0][::-1][:3])
        for j in range(3):
            assert sin_angle(got.vectors[:, j], full[1][:, ::-1][:, j]) < 1e-7

    def test_known_spectrum_recovery(self):
        rng = np.random.default_rng(14)
        q, _ = np.linalg.qr(rng.standard_normal((12, 12)))
        lam = np.sort(rng.uniform(0.5, 10.0, 12))[::-1]
        lam[1:] -= np.cumsum(np.full(11, 1e-3))  # eigengaps above 1e-4
        got = top_eigs(q @ np.diag(lam) @ q.T, 5)
        assert np.max(np.abs(got.values - lam[:5])) < 1e-8
        for j in range(5):
            assert sin_angle(got.vectors[:, j], q[:, j]) < 1e-6

    def test_arpack_path_matches_dense(self):
        rng = np.random.default_rng(15)
        a = rng.standard_normal((700, 30))
        m = a @ a.T / 30 + np.eye(700)
        got = top_eigs(m, 3)
        vals = np.linalg.eigvalsh(m)[::-1][:3]
        assert np.max(np.abs(got.values - vals)) < 1e-8 * vals[0]
        res = m @ got.vectors - got.vectors * got.values
        assert np.max(np.linalg.norm(res, axis=0)) < 1e-8 * np.linalg.norm(m, 2)

    def test_asymmetric_rejected(self):
        with pytest.raises(DataError):
            top_eigs(np.array([[0.0, 1.0], [0.0, 0.0]]), 1)

    def test_k_out_of_range(self):
        with pytest.raises(DataError):
            top_eigs(np.eye(3), 4)

    def test_spectral_sin_angle_identity(self):
        rng = np.random.default_rng(16)
        for _ in range(10):
            a = rng.standard_normal(7)
            a /= np.linalg.norm(a)
            b = rng.standard_normal(7)
            b /= np.linalg.norm(b)
            m = np.outer(b, b) - np.outer(a, a)
            spectral = top_eigs(m, 1).values[0]
            assert abs(spectral - sin_angle(a, b)) < 1e-10


class TestTopLeftSingular:
    def test_rank_one(self):
        rng = np.random.default_rng(17)
        a = rng.standard_normal(4)
        b = rng.standard_normal(6)
        s, u = top_left_singular(np.outer(a, b))
        assert np.isclose(s, np.linalg.norm(a) * np.linalg.norm(b))
        assert sin_angle(u, a / np.linalg.norm(a)) < 1e-10

    def test_degenerate_spectrum_deterministic(self):
        first = top_left_singular(np.eye(3))
        second = top_left_singular(np.eye(3))
        assert np.isclose(first[0], 1.0)
        assert np.array_equal(first[1], second[1])

    def test_value_matches_eig_oracle(self):
        rng = np.random.default_rng(18)
        m = rng.standard_normal((4, 7))
        s, _ = top_left_singular(m)
        assert np.isclose(s**2, top_eigs(m @ m.T, 1).values[0])

    def test_zero_matrix_rejected(self):
        with pytest.raises(DataError):
            top_left_singular(np.zeros((3, 3)))

    def test_sign_rule(self):
        v = np.array([0.1, -0.9, 0.3])
        assert np.array_equal(sign_fix(v), -v)
        assert np.array_equal(sign_fix(-v), -v)


class TestGramInverseDual:
    def test_orthonormal_returns_same(self):
        rng = np.random.default_rng(19)
        q, _ = np.linalg.qr(rng.standard_normal((8, 3)))
        assert np.allclose(gram_inverse_dual(q), q, atol=1e-12)

    def test_hand_2x2(self):
        a = np.array([[1.0, 1.0], [0.0, 1.0]])  # columns (1,0) and (1,1)
        b = gram_inverse_dual(a)
        assert np.allclose(b, np.array([[1.0, 0.0], [-1.0, 1.0]]))

    def test_defining_identity(self):
        rng = np.random.default_rng(20)
        a = rng.standard_normal((10, 3))
        b = gram_inverse_dual(a)
        assert np.max(np.abs(b.T @ a - np.eye(3))) < 1e-10

    def test_high_condition_number(self):
        rng = np.random.default_rng(21)
        q, _ = np.linalg.qr(rng.standard_normal((10, 2)))
        a = q @ np.diag([1.0, 1e-6])  # condition number 1e6
        b = gram_inverse_dual(a)
        assert np.max(np.abs(b.T @ a - np.eye(2))) < 1e-10

    def test_rank_deficient_reports_singular_value(self):
        a = np.ones((5, 2))
        with pytest.raises(RankDeficientError) as exc:
            gram_inverse_dual(a)
        assert exc.value.smallest_singular_value < 1e-10
