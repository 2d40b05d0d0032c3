import numpy as np
import pytest

from vlalign.affinity import SparseMatrix, build_topk_affinity, normalize_symmetric
from vlalign.containers import EmbeddingSet
from vlalign.errors import SolverError, ValidationError
from vlalign.labelprop import (
    DiffusionResult,
    LabelSource,
    PseudoLabelSet,
    extract_pseudo_labels,
    knn_pseudo_labels,
    propagate,
    propagate_union,
)


def unit_rows(data, prefix="r"):
    data = np.asarray(data, dtype=np.float64)
    data = data / np.linalg.norm(data, axis=1, keepdims=True)
    return EmbeddingSet(data, [f"{prefix}{i}" for i in range(len(data))], unit_norm=True)


def random_W(seed, max_nodes=50):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, max_nodes + 1))
    d = int(rng.integers(3, 8))
    k = int(rng.integers(1, min(6, n - 1) + 1))
    L = unit_rows(rng.standard_normal((n, d)))
    return normalize_symmetric(build_topk_affinity(L, k)), n


def dense_solve(W: SparseMatrix, m: int, alpha: float) -> np.ndarray:
    """Independent oracle: materialize (I - alpha W) and invert densely."""
    n = W.size
    Y = np.zeros((n, m))
    Y[:m, :m] = np.eye(m)
    return np.linalg.solve(np.eye(n) - alpha * W.to_dense(), Y)


class TestPropagate:
    def test_alpha_zero_identity(self):
        W, n = random_W(0)
        m = 3
        Z = propagate(W, m, alpha=0.0)
        expected = np.zeros((n, m))
        expected[:m, :m] = np.eye(m)
        assert (Z.scores == expected).all()

    def test_two_node_closed_form(self):
        # W = [[0,1],[1,0]], m=1, alpha=0.5: z = (I - W/2)^-1 e1 = (4/3, 2/3)
        W = SparseMatrix(2, [0, 1, 2], [1, 0], [1.0, 1.0], symmetric=True)
        Z = propagate(W, 1, alpha=0.5, cg_tol=1e-12)
        np.testing.assert_allclose(Z.scores[:, 0], [4 / 3, 2 / 3], atol=1e-10)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_dense_oracle(self, seed):
        W, n = random_W(seed)
        m = min(3, n - 1)
        alpha = 0.9
        Z = propagate(W, m, alpha, cg_tol=1e-10, cg_max_iter=3000)
        expected = dense_solve(W, m, alpha)
        np.testing.assert_allclose(Z.scores, expected, atol=1e-5, rtol=0)

    def test_nonconvergence_raises(self):
        W, n = random_W(1)
        with pytest.raises(SolverError) as err:
            propagate(W, 2, alpha=0.9, cg_tol=1e-12, cg_max_iter=1)
        assert err.value.worst_residual is not None
        assert err.value.worst_residual > 1e-12

    def test_alpha_range_validated(self):
        W, _ = random_W(2)
        with pytest.raises(ValidationError):
            propagate(W, 2, alpha=1.0)
        with pytest.raises(ValidationError):
            propagate(W, 2, alpha=-0.1)

    def test_requires_symmetric(self):
        A = SparseMatrix(3, [0, 1, 2, 2], [1, 2], [1.0, 1.0], symmetric=False)
        with pytest.raises(ValidationError):
            propagate(A, 1, alpha=0.5)

    def test_nonnegative_scores(self):
        for seed in range(5):
            W, n = random_W(seed + 100, max_nodes=30)
            m = min(4, n - 1)
            Z = propagate(W, m, alpha=0.95, cg_tol=1e-8, cg_max_iter=2000)
            assert Z.scores.min() >= -1e-9

    def test_monotone_in_evidence(self):
        # adding a second labeled column of the same class never decreases
        # any entry: the resolvent is entrywise nonnegative
        for seed in range(5):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(4, 10))
            L = unit_rows(rng.standard_normal((n, 3)))
            W = normalize_symmetric(build_topk_affinity(L, k=2))
            dense = W.to_dense()
            M = np.linalg.inv(np.eye(n) - 0.9 * dense)
            y1 = np.zeros(n)
            y1[0] = 1.0
            y2 = y1.copy()
            y2[1] = 1.0
            z1 = M @ y1
            z2 = M @ y2
            assert (z2 - z1).min() >= -1e-12

    def test_permutation_invariance(self):
        W, n = random_W(7, max_nodes=20)
        m = 2
        alpha = 0.9
        tol = 1e-8
        Z = propagate(W, m, alpha, cg_tol=tol, cg_max_iter=2000)
        # permute only the unlabeled block so the label rows stay aligned
        rng = np.random.default_rng(8)
        perm = np.concatenate([np.arange(m), m + rng.permutation(n - m)])
        dense = W.to_dense()[perm][:, perm]
        rows, cols = np.nonzero(dense)
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=offsets[1:])
        Wp = SparseMatrix(n, offsets, cols, dense[rows, cols], symmetric=True)
        Zp = propagate(Wp, m, alpha, cg_tol=tol, cg_max_iter=2000)
        np.testing.assert_allclose(Zp.scores, Z.scores[perm], atol=2 * tol, rtol=0)

    def test_debug_dump(self, tmp_path):
        W, n = random_W(3)
        m = 2
        path = tmp_path / "zdump.txt"
        propagate(W, m, alpha=0.5, debug_dump=path)
        lines = path.read_text().splitlines()
        assert len(lines) == min(10, n - m)


class TestExtractPseudoLabels:
    def make_result(self, image_rows, m):
        scores = np.vstack([np.eye(m), np.asarray(image_rows, dtype=np.float64)])
        return DiffusionResult(
            scores, np.zeros(m, dtype=np.int64), np.zeros(m)
        )

    def test_argmax_and_confidence(self):
        Z = self.make_result([[0.1, 0.9]], m=2)
        out = extract_pseudo_labels(Z, 2)
        assert out.labels.tolist() == [1]
        assert out.confidence[0] == pytest.approx(0.9, abs=1e-9)

    def test_tie_breaks_low(self):
        Z = self.make_result([[0.5, 0.5]], m=2)
        out = extract_pseudo_labels(Z, 2)
        assert out.labels.tolist() == [0]

    def test_zero_row(self):
        Z = self.make_result([[0.0, 0.0]], m=2)
        out = extract_pseudo_labels(Z, 2)
        assert out.labels.tolist() == [0]
        assert out.confidence[0] == 0.0

    def test_needs_image_rows(self):
        scores = np.eye(3)
        Z = DiffusionResult(scores, np.zeros(3, dtype=np.int64), np.zeros(3))
        with pytest.raises(ValidationError):
            extract_pseudo_labels(Z, 3)

    def test_two_class_six_node_oracle(self):
        """Images adjacent only to their own class text get that class."""
        # nodes: t0, t1, v0..v3; v0,v1 -> t0; v2,v3 -> t1
        edges = [(0, 2), (0, 3), (1, 4), (1, 5)]
        n = 6
        dense = np.zeros((n, n))
        for i, j in edges:
            dense[i, j] = dense[j, i] = 1.0
        deg = dense.sum(axis=1)
        W_dense = dense / np.sqrt(np.outer(deg, deg))
        rows, cols = np.nonzero(W_dense)
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=offsets[1:])
        W = SparseMatrix(n, offsets, cols, W_dense[rows, cols], symmetric=True)
        Z = propagate(W, 2, alpha=0.8, cg_tol=1e-10)
        oracle = np.linalg.solve(np.eye(n) - 0.8 * W_dense, np.eye(n)[:, :2])
        np.testing.assert_allclose(Z.scores, oracle, atol=1e-8)
        labels = extract_pseudo_labels(Z, 2)
        assert labels.labels.tolist() == [0, 0, 1, 1]


class TestPropagateUnion:
    def test_many_classes_fallback(self):
        rng = np.random.default_rng(0)
        T = unit_rows(rng.standard_normal((501, 8)), prefix="t")
        V = unit_rows(rng.standard_normal((5, 8)), prefix="v")
        out = propagate_union(T, V, alpha=0.99, k=20)
        assert out.source is LabelSource.MODEL_PREDICTION
        expected = np.argmax(V.data @ T.data.T, axis=1)
        assert (out.labels == expected).all()

    def test_alpha_zero_fallback(self):
        rng = np.random.default_rng(1)
        T = unit_rows(rng.standard_normal((3, 6)), prefix="t")
        V = unit_rows(rng.standard_normal((7, 6)), prefix="v")
        out = propagate_union(T, V, alpha=0.0, k=2)
        assert out.source is LabelSource.MODEL_PREDICTION

    def test_k_clamped_on_small_graphs(self):
        rng = np.random.default_rng(2)
        T = unit_rows(rng.standard_normal((2, 5)), prefix="t")
        V = unit_rows(rng.standard_normal((3, 5)), prefix="v")
        out = propagate_union(T, V, alpha=0.9, k=20)
        assert len(out) == 3


class TestKnnPseudoLabels:
    def test_k_one_adopts_nearest(self):
        V = unit_rows([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]], prefix="v")
        T = unit_rows([[1.0, 0.0], [0.0, 1.0]], prefix="t")
        out = knn_pseudo_labels(V, T, k=1)
        votes = np.argmax(V.data @ T.data.T, axis=1)
        sims = V.data @ V.data.T
        np.fill_diagonal(sims, -np.inf)
        nearest = np.argmax(sims, axis=1)
        assert (out.labels == votes[nearest]).all()

    def test_majority_brute_force(self):
        rng = np.random.default_rng(3)
        V = unit_rows(rng.standard_normal((12, 4)), prefix="v")
        T = unit_rows(rng.standard_normal((3, 4)), prefix="t")
        k = 5
        out = knn_pseudo_labels(V, T, k=k)
        votes = np.argmax(V.data @ T.data.T, axis=1)
        sims = V.data @ V.data.T
        for j in range(12):
            order = sorted(
                (i for i in range(12) if i != j),
                key=lambda i: (-sims[j, i], i),
            )
            counts = np.bincount(votes[order[:k]], minlength=3)
            assert out.labels[j] == int(np.argmax(counts))

    def test_k_too_large(self):
        V = unit_rows(np.eye(3), prefix="v")
        T = unit_rows(np.eye(3)[:2], prefix="t")
        with pytest.raises(ValidationError):
            knn_pseudo_labels(V, T, k=3)

    def test_default_k(self):
        rng = np.random.default_rng(4)
        V = unit_rows(rng.standard_normal((10, 4)), prefix="v")
        T = unit_rows(rng.standard_normal((2, 4)), prefix="t")
        out = knn_pseudo_labels(V, T)  # default k = round(10/2) = 5
        explicit = knn_pseudo_labels(V, T, k=5)
        assert (out.labels == explicit.labels).all()


class TestPseudoLabelSet:
    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            PseudoLabelSet(np.array([0, 1]), np.array([0.5]), LabelSource.AGREED)

    def test_mask_length_mismatch(self):
        with pytest.raises(ValidationError):
            PseudoLabelSet(
                np.array([0, 1]),
                np.array([0.5, 0.5]),
                LabelSource.AGREED,
                agreement_mask=np.array([True]),
            )
