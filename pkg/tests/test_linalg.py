import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spanprobe.linalg import (
    RankDeficientWarning,
    Subspace,
    kernel_basis,
    least_squares,
    max_projection_defect,
    numerical_rank,
    orthonormalize,
    project,
    row_space,
)


class TestNumericalRank:
    def test_identity(self):
        est = numerical_rank(np.eye(3), 1e-5)
        assert est.rank == 3
        np.testing.assert_allclose(est.singular_values, np.ones(3))

    def test_constructed_diagonal_cutoff(self):
        # cutoff is 1e-5 * sigma_max = 1e-5, so 2e-5 counts and 5e-6 does not
        est = numerical_rank(np.diag([1.0, 2e-5, 5e-6]), 1e-5)
        assert est.rank == 2
        assert est.threshold_used == 1e-5

    def test_gradient_stack_of_wide_relu_net(self):
        # 100 gradient samples of a wide random ReLU net expose the full
        # inner rank of 80 under the 1e-5 rule
        import spanprobe as sp

        net = sp.random_network(784, 80, [40, 30, 20, 10], seed=0)
        rng = np.random.default_rng(0)
        rows = []
        while len(rows) < 100:
            try:
                rows.append(sp.analytic_gradient(net, rng.standard_normal(784)))
            except Exception:
                continue
        assert numerical_rank(np.array(rows)).rank == 80

    def test_zero_matrix(self):
        assert numerical_rank(np.zeros((2, 3))).rank == 0

    def test_singular_values_descending(self):
        rng = np.random.default_rng(3)
        est = numerical_rank(rng.standard_normal((6, 9)))
        assert np.all(np.diff(est.singular_values) <= 0)

    def test_errors(self):
        with pytest.raises(ValueError):
            numerical_rank(np.zeros((0, 3)))
        with pytest.raises(ValueError):
            numerical_rank(np.array([[np.nan, 1.0]]))
        with pytest.raises(ValueError):
            numerical_rank(np.eye(2), rel_threshold=1.5)


class TestOrthonormalize:
    def test_two_independent_vectors(self):
        s = orthonormalize([np.array([1.0, 0.0]), np.array([1.0, 1.0])])
        assert s.dim == 2
        np.testing.assert_allclose(s.basis @ s.basis.T, np.eye(2), atol=1e-12)

    def test_dependent_vector_dropped(self):
        s = orthonormalize([np.array([1.0, 0.0]), np.array([2.0, 0.0])])
        assert s.dim == 1

    def test_random_gaussians_gram_identity(self):
        rng = np.random.default_rng(0)
        s = orthonormalize([rng.standard_normal(20) for _ in range(10)])
        assert s.dim == 10
        np.testing.assert_allclose(s.basis @ s.basis.T, np.eye(10), atol=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            orthonormalize([np.ones(3), np.ones(4)])


class TestProject:
    def test_axis_projection(self):
        s = Subspace(2, np.array([[1.0, 0.0]]))
        np.testing.assert_allclose(project(s, [3.0, 4.0]), [3.0, 0.0])

    def test_idempotent_on_members(self):
        rng = np.random.default_rng(1)
        s = orthonormalize([rng.standard_normal(8) for _ in range(3)])
        x = s.basis.T @ rng.standard_normal(3)
        np.testing.assert_allclose(project(s, x), x, atol=1e-10)

    def test_residual_orthogonal_to_projection(self):
        rng = np.random.default_rng(2)
        s = orthonormalize([rng.standard_normal(12) for _ in range(5)])
        x = rng.standard_normal(12)
        p = project(s, x)
        assert abs((x - p) @ p) < 1e-9

    def test_dimension_mismatch(self):
        s = Subspace(2, np.array([[1.0, 0.0]]))
        with pytest.raises(ValueError):
            project(s, [1.0, 2.0, 3.0])


class TestKernelBasis:
    def test_single_row(self):
        ker = kernel_basis(np.array([[1.0, 0.0, 0.0]]))
        assert ker.dim == 2
        np.testing.assert_allclose(ker.basis[:, 0], 0.0, atol=1e-12)

    def test_full_rank_square(self):
        assert kernel_basis(np.eye(4)).dim == 0

    def test_random_wide_matrix_residual(self):
        rng = np.random.default_rng(4)
        m = rng.standard_normal((5, 20))
        ker = kernel_basis(m)
        assert ker.dim == 15
        fro = np.linalg.norm(m)
        for z in ker.basis:
            assert np.linalg.norm(m @ z) <= 1e-8 * fro


class TestLeastSquares:
    def test_identity_system(self):
        np.testing.assert_allclose(least_squares(np.eye(2), [1.0, 2.0]), [1.0, 2.0])

    def test_diagonal_hand_solved(self):
        # y^T diag(2, 4) = (2, 2)  =>  y = (1, 0.5)
        y = least_squares(np.diag([2.0, 4.0]), [2.0, 2.0])
        np.testing.assert_allclose(y, [1.0, 0.5])

    def test_matches_normal_equations(self):
        # oracle: minimizing ||y^T B - b^T|| solves (B B^T) y = B b
        rng = np.random.default_rng(5)
        b_mat = rng.standard_normal((8, 8)) + 4.0 * np.eye(8)
        b_vec = rng.standard_normal(8)
        expected = np.linalg.solve(b_mat @ b_mat.T, b_mat @ b_vec)
        got = least_squares(b_mat, b_vec)
        np.testing.assert_allclose(got, expected, rtol=1e-8)

    def test_rank_deficient_warns_and_minimizes_norm(self):
        b_mat = np.array([[1.0, 0.0], [0.0, 0.0]])
        with pytest.warns(RankDeficientWarning):
            y = least_squares(b_mat, [2.0, 0.0])
        np.testing.assert_allclose(y, [2.0, 0.0], atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            least_squares(np.eye(2), [1.0, 2.0, 3.0])


class TestMaxProjectionDefect:
    def test_same_subspace(self):
        rng = np.random.default_rng(6)
        s = orthonormalize([rng.standard_normal(9) for _ in range(4)])
        assert max_projection_defect(s, s) < 1e-12

    def test_orthogonal_lines(self):
        e1 = Subspace(2, np.array([[1.0, 0.0]]))
        e2 = Subspace(2, np.array([[0.0, 1.0]]))
        assert max_projection_defect(e1, e2) == pytest.approx(1.0)

    def test_analytic_angle(self):
        theta = 0.3
        v = Subspace(2, np.array([[np.cos(theta), np.sin(theta)]]))
        target = Subspace(2, np.array([[1.0, 0.0]]))
        assert max_projection_defect(v, target) == pytest.approx(np.sin(theta), abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            max_projection_defect(Subspace.empty(2), Subspace.empty(3))


class TestSubspaceType:
    def test_rejects_non_orthonormal_basis(self):
        with pytest.raises(ValueError):
            Subspace(2, np.array([[1.0, 1.0]]))

    def test_rejects_overfull_basis(self):
        with pytest.raises(ValueError):
            Subspace(1, np.eye(2))

    def test_empty(self):
        s = Subspace.empty(5)
        assert s.dim == 0
        np.testing.assert_allclose(project(s, np.ones(5)), np.zeros(5))


@st.composite
def subspace_and_vector(draw):
    n = draw(st.integers(min_value=2, max_value=12))
    dim = draw(st.integers(min_value=1, max_value=n))
    seed = draw(st.integers(min_value=0, max_value=2**31))
    rng = np.random.default_rng(seed)
    s = orthonormalize([rng.standard_normal(n) for _ in range(dim)])
    return s, rng.standard_normal(n)


@given(subspace_and_vector())
@settings(max_examples=60, deadline=None)
def test_pythagorean_identity(sv):
    s, x = sv
    p = project(s, x)
    lhs = np.linalg.norm(p) ** 2 + np.linalg.norm(x - p) ** 2
    assert lhs == pytest.approx(np.linalg.norm(x) ** 2, rel=1e-9)


@given(st.integers(min_value=0, max_value=2**31),
       st.floats(min_value=0.01, max_value=100.0))
@settings(max_examples=40, deadline=None)
def test_rank_invariant_under_permutation_and_scaling(seed, scale):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((6, 10))
    m[3] = 2.0 * m[1] - m[0]  # force a dependency so the rank is interesting
    base = numerical_rank(m).rank
    perm = rng.permutation(6)
    assert numerical_rank(m[perm]).rank == base
    assert numerical_rank(scale * m).rank == base


@given(st.integers(min_value=0, max_value=2**31))
@settings(max_examples=40, deadline=None)
def test_kernel_dim_plus_rank_is_ambient_dim(seed):
    rng = np.random.default_rng(seed)
    rows = int(rng.integers(1, 8))
    cols = int(rng.integers(rows, 16))
    m = rng.standard_normal((rows, cols))
    assert kernel_basis(m).dim + numerical_rank(m).rank == cols


@given(st.integers(min_value=0, max_value=2**31))
@settings(max_examples=40, deadline=None)
def test_consistent_square_system_reproduced(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    b_mat = rng.standard_normal((n, n)) + n * np.eye(n)
    y_true = rng.standard_normal(n)
    b_vec = b_mat.T @ y_true
    np.testing.assert_allclose(least_squares(b_mat, b_vec), y_true, rtol=1e-8)


def test_row_space_spans_rows():
    rng = np.random.default_rng(7)
    m = rng.standard_normal((4, 11))
    rs = row_space(m)
    assert rs.dim == 4
    for r in m:
        np.testing.assert_allclose(project(rs, r), r, atol=1e-9)
