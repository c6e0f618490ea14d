import numpy as np
import pytest

from conftest import random_corpus
from sdiff.data import interactions_from_rows
from sdiff.errors import ArtifactError, ConvergenceError
from sdiff.graph import (
    apply_item_gram,
    build_normalized_bipartite,
    heat_kernel_reference,
    lanczos_eigsh,
    load_basis,
    save_basis,
    truncated_eigendecomposition,
)


def dense_gram(b):
    x = b.matrix.toarray()
    return x.T @ x


class TestNormalizedBipartite:
    def test_hand_computed_normalization(self):
        # X = [[1,1],[0,1]]: user degrees (2,1), item degrees (1,2)
        m = interactions_from_rows([[0, 1], [1]], n_items=2)
        b = build_normalized_bipartite(m)
        expected = np.array([[1 / np.sqrt(2), 0.5], [0.0, 1 / np.sqrt(2)]])
        assert np.allclose(b.matrix.toarray(), expected, atol=1e-12)

    def test_identity_interactions(self):
        m = interactions_from_rows([[0], [1], [2]], n_items=3)
        b = build_normalized_bipartite(m)
        assert np.allclose(b.matrix.toarray(), np.eye(3))

    def test_zero_degree_item_column(self):
        m = interactions_from_rows([[0], [0, 2]], n_items=3)
        b = build_normalized_bipartite(m)
        assert not b.matrix.toarray()[:, 1].any()

    def test_empty_matrix_rejected(self):
        m = interactions_from_rows([[]], n_items=2)
        with pytest.raises(ValueError):
            build_normalized_bipartite(m)


class TestApplyItemGram:
    def test_zero_vector(self, toy_corpus):
        b = build_normalized_bipartite(toy_corpus)
        assert not apply_item_gram(b, np.zeros(4)).any()

    def test_identity_bipartite(self):
        m = interactions_from_rows([[0], [1], [2]], n_items=3)
        b = build_normalized_bipartite(m)
        v = np.array([1.0, -2.0, 0.5])
        assert np.allclose(apply_item_gram(b, v), v, atol=1e-14)

    def test_matches_dense_gram(self, rng):
        m = random_corpus(12, 9, seed=4)
        b = build_normalized_bipartite(m)
        a = dense_gram(b)
        v = rng.standard_normal(9)
        assert np.abs(apply_item_gram(b, v) - a @ v).max() < 1e-12

    def test_matrix_argument(self, rng):
        m = random_corpus(10, 7, seed=5)
        b = build_normalized_bipartite(m)
        a = dense_gram(b)
        v = rng.standard_normal((7, 3))
        assert np.abs(apply_item_gram(b, v) - a @ v).max() < 1e-12

    def test_dimension_mismatch(self, toy_corpus):
        b = build_normalized_bipartite(toy_corpus)
        with pytest.raises(ValueError):
            apply_item_gram(b, np.zeros(5))


class TestEigendecomposition:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_dense_all_ranks(self, seed):
        m = random_corpus(15, 24, seed=seed)
        b = build_normalized_bipartite(m)
        reference = np.linalg.eigvalsh(dense_gram(b))[::-1]
        for k in (1, 5, 24):
            basis = truncated_eigendecomposition(b, k, seed=seed)
            mu = np.sort(1.0 - basis.d)[::-1]
            assert np.abs(mu - reference[:k]).max() < 1e-8
            assert basis.residuals.max() <= 1e-8
            assert np.abs(basis.U.T @ basis.U - np.eye(k)).max() <= 1e-6

    def test_four_item_toy_full_rank(self, toy_corpus):
        b = build_normalized_bipartite(toy_corpus)
        basis = truncated_eigendecomposition(b, 4, seed=0)
        reference = np.linalg.eigvalsh(dense_gram(b))[::-1]
        assert np.abs(np.sort(1 - basis.d)[::-1] - reference).max() < 1e-8

    def test_identity_gram_all_zero_frequency(self):
        m = interactions_from_rows([[0], [1], [2], [3]], n_items=4)
        b = build_normalized_bipartite(m)
        basis = truncated_eigendecomposition(b, 4, seed=0)
        assert np.abs(basis.d).max() < 1e-10

    def test_rank_deficient_gram(self):
        # 5 users x 32 items: gram rank <= 5, many exact zero eigenvalues
        m = random_corpus(5, 32, density=0.4, seed=8)
        b = build_normalized_bipartite(m)
        basis = truncated_eigendecomposition(b, 32, seed=1)
        reference = np.linalg.eigvalsh(dense_gram(b))[::-1]
        assert np.abs(np.sort(1 - basis.d)[::-1] - reference).max() < 1e-8

    def test_frequency_range_and_order(self):
        m = random_corpus(20, 30, seed=3)
        b = build_normalized_bipartite(m)
        basis = truncated_eigendecomposition(b, 20, seed=0)
        assert np.all(basis.d >= 0.0)
        assert np.all(basis.d <= 1.0 + 1e-8)  # gram construction bound
        assert np.all(np.diff(basis.d) >= -1e-12)  # ascending frequencies

    def test_deterministic_per_seed(self):
        m = random_corpus(14, 18, seed=6)
        b = build_normalized_bipartite(m)
        b1 = truncated_eigendecomposition(b, 6, seed=11)
        b2 = truncated_eigendecomposition(b, 6, seed=11)
        assert np.array_equal(b1.U, b2.U)
        assert np.array_equal(b1.d, b2.d)

    def test_rank_too_large(self, toy_corpus):
        b = build_normalized_bipartite(toy_corpus)
        with pytest.raises(ValueError):
            truncated_eigendecomposition(b, 5)

    def test_nonconvergence_reports_residuals(self):
        m = random_corpus(10, 12, seed=0)
        b = build_normalized_bipartite(m)
        with pytest.raises(ConvergenceError) as err:
            truncated_eigendecomposition(b, 4, m=1, tol=1e-300)
        assert err.value.residuals is not None
        assert np.all(err.value.residuals >= 0)

    def test_lanczos_on_generic_operator(self, rng):
        a = rng.standard_normal((20, 20))
        a = a @ a.T  # symmetric PSD
        vals, vecs, resid = lanczos_eigsh(lambda v: a @ v, 20, 7, seed=2)
        ref = np.linalg.eigvalsh(a)[::-1][:7]
        assert np.abs(vals - ref).max() < 1e-8 * max(1, ref.max())
        assert resid.max() <= 1e-8 * max(1.0, ref.max())


class TestSpectralTransforms:
    def test_full_rank_roundtrip(self, rng):
        m = random_corpus(10, 16, seed=2)
        b = build_normalized_bipartite(m)
        basis = truncated_eigendecomposition(b, 16, seed=0)
        x = rng.standard_normal(16)
        assert np.abs(basis.igft(basis.gft(x)) - x).max() < 1e-10

    def test_eigenvector_maps_to_unit_coefficient(self):
        m = random_corpus(10, 12, seed=9)
        b = build_normalized_bipartite(m)
        basis = truncated_eigendecomposition(b, 5, seed=0)
        for j in (0, 3):
            v = basis.gft(basis.U[:, j])
            expected = np.zeros(5)
            expected[j] = 1.0
            assert np.abs(v - expected).max() < 1e-10

    def test_truncated_projection_contracts(self, rng):
        m = random_corpus(12, 20, seed=1)
        b = build_normalized_bipartite(m)
        basis = truncated_eigendecomposition(b, 6, seed=0)
        for _ in range(10):
            x = rng.standard_normal(20)
            assert np.linalg.norm(basis.igft(basis.gft(x))) <= np.linalg.norm(x) + 1e-12

    def test_batch_shapes(self, rng):
        m = random_corpus(8, 10, seed=0)
        basis = truncated_eigendecomposition(build_normalized_bipartite(m), 4, seed=0)
        xs = rng.standard_normal((3, 10))
        assert basis.gft(xs).shape == (3, 4)
        assert basis.igft(basis.gft(xs)).shape == (3, 10)

    def test_dimension_errors(self):
        m = random_corpus(8, 10, seed=0)
        basis = truncated_eigendecomposition(build_normalized_bipartite(m), 4, seed=0)
        with pytest.raises(ValueError):
            basis.gft(np.zeros(11))
        with pytest.raises(ValueError):
            basis.igft(np.zeros(5))


class TestHeatKernel:
    def test_t_zero_is_identity(self, toy_corpus, rng):
        b = build_normalized_bipartite(toy_corpus)
        x = rng.standard_normal(4)
        assert np.abs(heat_kernel_reference(b, 0.0, x) - x).max() < 1e-12

    def test_matches_spectral_path(self, toy_corpus, rng):
        b = build_normalized_bipartite(toy_corpus)
        basis = truncated_eigendecomposition(b, 4, seed=0)
        x = rng.standard_normal(4)
        for t in (0.1, 1.0):
            ref = heat_kernel_reference(b, t, x)
            spec = basis.igft(np.exp(-t * basis.d) * basis.gft(x))
            assert np.abs(ref - spec).max() < 1e-8

    def test_long_time_limit_is_zero_frequency_projection(self, toy_corpus, rng):
        b = build_normalized_bipartite(toy_corpus)
        lap = np.eye(4) - dense_gram(b)
        w, v = np.linalg.eigh(lap)
        zero_modes = v[:, w < 1e-9]
        gap = w[w >= 1e-9].min()
        t = max(50.0, 25.0 / gap)
        x = rng.standard_normal(4)
        projected = zero_modes @ (zero_modes.T @ x)
        assert np.abs(heat_kernel_reference(b, t, x) - projected).max() < 1e-8

    def test_dense_guard(self):
        m = interactions_from_rows([[0, 513]], n_items=600)
        b = build_normalized_bipartite(m)
        with pytest.raises(ValueError, match="dense"):
            heat_kernel_reference(b, 1.0, np.zeros(600))


class TestBasisIO:
    def test_roundtrip_and_hash(self, tmp_path):
        m = random_corpus(12, 14, seed=5)
        b = build_normalized_bipartite(m)
        basis = truncated_eigendecomposition(b, 6, seed=7)
        path = tmp_path / "basis.bin"
        save_basis(basis, path)
        loaded = load_basis(path)
        assert loaded.k == 6 and loaded.n_items == 14
        assert loaded.seed == 7
        assert loaded.matrix_hash == basis.matrix_hash
        assert np.array_equal(loaded.d, basis.d)
        assert np.array_equal(loaded.residuals, basis.residuals)
        assert np.allclose(loaded.U, basis.U, atol=1e-6)  # f32 storage
        assert loaded.content_hash() == basis.content_hash()

    def test_resave_byte_identical(self, tmp_path):
        m = random_corpus(6, 8, seed=1)
        basis = truncated_eigendecomposition(build_normalized_bipartite(m), 3, seed=0)
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_basis(basis, p1)
        save_basis(load_basis(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"NOTABASIS" + b"\0" * 64)
        with pytest.raises(ArtifactError):
            load_basis(p)
