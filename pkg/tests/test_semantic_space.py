import numpy as np
import pytest

from fscilab.errors import (
    DegenerateVectorError,
    FormatError,
    MissingClassError,
    ParameterError,
)
from fscilab.numkit import SeededRng
from fscilab.semantic_space import (
    EmbeddingTable,
    SimilarityMode,
    anchor_weights,
    build_knn_graph,
    class_visual_means,
    default_k,
    load_embedding_table,
    pairwise_similarity,
    save_embedding_table,
    subspace_anchor,
)

from oracles import anchor_oracle, class_means_oracle, knn_oracle

# frozen from anchor_oracle: dots (0.2, 0.5, -0.1), tau=1, rows [(1,2),(-1,0),(3,1)]
ANCHOR_WEIGHTS_ORACLE = (0.32355370388335947, 0.4367518169107908, 0.23969447920584977)
ANCHOR_ORACLE = (0.605885324590118, 0.8868018869725687)


def _table(rng, n, dim):
    return EmbeddingTable(
        tuple(f"c{i}" for i in range(n)), rng.normal((n, dim))
    )


# ---- embedding file format ----

def test_embedding_round_trip(tmp_path):
    rng = SeededRng(0)
    table = _table(rng, 3, 2)
    path = tmp_path / "t.emb"
    save_embedding_table(table, path)
    back = load_embedding_table(path)
    assert back.class_ids == table.class_ids
    assert np.allclose(back.vectors, table.vectors, atol=1e-9)
    # 17-significant-digit scientific notation round-trips bit-exactly
    assert np.array_equal(back.vectors, table.vectors)


def test_embedding_labels_may_contain_spaces(tmp_path):
    table = EmbeddingTable(("snow leopard", "white wolf"), np.eye(2))
    path = tmp_path / "s.emb"
    save_embedding_table(table, path)
    assert load_embedding_table(path).class_ids == ("snow leopard", "white wolf")


def test_embedding_format_errors(tmp_path):
    path = tmp_path / "bad.emb"
    path.write_text("fscil-emb v1 1 2\na\t1.0 2.0 3.0\n")
    with pytest.raises(FormatError):
        load_embedding_table(path)
    path.write_text("fscil-emb v2 1 2\na\t1.0 2.0\n")
    with pytest.raises(FormatError):
        load_embedding_table(path)
    path.write_text("fscil-emb v1 2 2\na\t1.0 2.0\na\t3.0 4.0\n")
    with pytest.raises(FormatError):
        load_embedding_table(path)
    path.write_text("fscil-emb v1 1 2\na\t1.0 inf\n")
    with pytest.raises(FormatError):
        load_embedding_table(path)


# ---- knn graph ----

def test_knn_nearest_by_inspection():
    table = EmbeddingTable(
        ("e1", "e2", "e3"), np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]])
    )
    graph = build_knn_graph(table, 1)
    assert graph.adjacency[0].tolist() == [0, 1, 0]  # e2 is e1's nearest
    assert np.all(graph.adjacency.sum(axis=1) == 1)


def test_default_k_five_percent_rule():
    assert default_k(100) == 5
    assert default_k(20) == 1
    assert default_k(608) == 30


def test_knn_matches_brute_force_oracle():
    rng = SeededRng(7)
    table = _table(rng, 10, 4)
    graph = build_knn_graph(table, 3)
    assert np.array_equal(graph.adjacency, knn_oracle(table.vectors, 3))


def test_knn_row_sums_diagonal_and_reproducibility():
    rng = SeededRng(13)
    table = _table(rng, 12, 5)
    for k in (1, 3, 7):
        g = build_knn_graph(table, k)
        assert np.all(g.adjacency.sum(axis=1) == k)
        assert np.all(np.diag(g.adjacency) == 0)
        again = build_knn_graph(EmbeddingTable(table.class_ids, table.vectors.copy()), k)
        assert np.array_equal(g.adjacency, again.adjacency)


def test_knn_invariant_under_uniform_rescaling():
    rng = SeededRng(21)
    table = _table(rng, 9, 3)
    base = build_knn_graph(table, 2).adjacency
    for scale in (2.0, 0.5, 3.7):
        scaled = EmbeddingTable(table.class_ids, table.vectors * scale)
        assert np.array_equal(build_knn_graph(scaled, 2).adjacency, base)


def test_knn_tie_broken_by_lowest_index():
    # c1 and c2 are duplicates, both at distance 1 from c0
    table = EmbeddingTable(
        ("c0", "c1", "c2"), np.array([[1.0, 1.0], [2.0, 1.0], [2.0, 1.0]])
    )
    graph = build_knn_graph(table, 1)
    assert graph.adjacency[0].tolist() == [0, 1, 0]


def test_knn_rejects_k_out_of_range():
    table = _table(SeededRng(1), 4, 2)
    with pytest.raises(ParameterError):
        build_knn_graph(table, 4)
    with pytest.raises(ParameterError):
        build_knn_graph(table, 0)


# ---- pairwise similarity ----

def test_pairwise_similarity_trivials():
    a = np.array([3.0, 4.0])
    assert pairwise_similarity(a, a, SimilarityMode.COSINE) == 1.0
    b = np.array([0.3, -0.7, 1.1])
    assert pairwise_similarity(b, b, "cosine") == pytest.approx(1.0, abs=1e-15)
    zero = np.zeros(3)
    v = np.array([3.0, 4.0, 0.0])
    assert pairwise_similarity(zero, v, SimilarityMode.EUCLIDEAN) == -5.0


def test_pairwise_similarity_matches_direct_formulas():
    rng = SeededRng(3)
    u, v = rng.normal(6), rng.normal(6)
    cos = float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))
    dist = float(np.linalg.norm(u - v))
    assert pairwise_similarity(u, v, "cosine") == pytest.approx(cos, abs=1e-15)
    assert pairwise_similarity(u, v, "topk_cosine") == pytest.approx(cos, abs=1e-15)
    assert pairwise_similarity(u, v, "euclidean") == pytest.approx(-dist, abs=1e-15)


def test_pairwise_similarity_zero_norm_under_cosine():
    with pytest.raises(DegenerateVectorError):
        pairwise_similarity(np.zeros(2), np.ones(2), "cosine")


# ---- class means ----

def test_class_means_trivials():
    means = class_visual_means(np.array([[1.0, 0.0], [3.0, 0.0]]), ["a", "a"])
    assert np.allclose(means.mean("a"), [2.0, 0.0])
    single = class_visual_means(np.array([[5.0, 1.0]]), ["b"])
    assert np.array_equal(single.mean("b"), [5.0, 1.0])
    with pytest.raises(MissingClassError):
        single.mean("zzz")


def test_class_means_matches_two_pass_oracle():
    rng = SeededRng(9)
    feats = rng.normal((50, 4))
    labels = [f"c{rng.integers(0, 5)}" for _ in range(50)]
    means = class_visual_means(feats, labels)
    oracle_means, oracle_counts = class_means_oracle(feats, labels)
    assert means.counts == oracle_counts
    for cid, vec in oracle_means.items():
        assert np.allclose(means.mean(cid), vec, atol=1e-12)


# ---- subspace anchors ----

def test_anchor_symmetry_case_is_exact_half():
    emb = EmbeddingTable(
        ("b1", "b2", "n"), np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    )
    w = anchor_weights(emb, ("b1", "b2"), "n", tau=1.0)
    assert w.tolist() == [0.5, 0.5]
    rows = np.array([[2.0, 0.0], [0.0, 4.0]])
    anchor = subspace_anchor(rows, emb, ("b1", "b2"), "n", tau=1.0)
    assert np.allclose(anchor, [1.0, 2.0], atol=1e-15)


def test_anchor_low_temperature_snaps_to_argmax_row():
    rng = SeededRng(17)
    emb = EmbeddingTable(
        ("b1", "b2", "b3", "n"),
        np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0], [0.9, 0.1]]),
    )
    rows = rng.normal((3, 4))
    anchor = subspace_anchor(rows, emb, ("b1", "b2", "b3"), "n", tau=1e-8)
    dots = [np.dot(emb.vector(b), emb.vector("n")) for b in ("b1", "b2", "b3")]
    assert np.allclose(anchor, rows[int(np.argmax(dots))], atol=1e-6)


def test_anchor_matches_high_precision_oracle():
    # orthonormal base embeddings make the dot products exactly (0.2, 0.5, -0.1)
    emb = EmbeddingTable(
        ("b1", "b2", "b3", "n"),
        np.array(
            [
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
                [0.2, 0.5, -0.1],
            ]
        ),
    )
    rows = np.array([[1.0, 2.0], [-1.0, 0.0], [3.0, 1.0]])
    w = anchor_weights(emb, ("b1", "b2", "b3"), "n", tau=1.0)
    assert np.allclose(w, ANCHOR_WEIGHTS_ORACLE, atol=1e-10)
    anchor = subspace_anchor(rows, emb, ("b1", "b2", "b3"), "n", tau=1.0)
    assert np.allclose(anchor, ANCHOR_ORACLE, atol=1e-10)
    assert np.allclose(anchor, anchor_oracle([0.2, 0.5, -0.1], rows, 1.0), atol=1e-10)


def test_anchor_weight_properties():
    rng = SeededRng(23)
    for trial in range(20):
        n_base = 3 + trial % 4
        ids = tuple(f"b{i}" for i in range(n_base)) + ("n",)
        emb = EmbeddingTable(ids, rng.normal((n_base + 1, 5)))
        tau = float(rng.uniform(0.2, 3.0))
        w = anchor_weights(emb, ids[:-1], "n", tau)
        assert abs(w.sum() - 1.0) <= 1e-12
        assert np.all(w > 0)
        # argmax weight tracks the most similar base class at every tau
        dots = [np.dot(emb.vector(b), emb.vector("n")) for b in ids[:-1]]
        for other_tau in (0.1, 1.0, 10.0):
            w2 = anchor_weights(emb, ids[:-1], "n", other_tau)
            assert np.argmax(w2) == np.argmax(dots)


def test_anchor_lies_in_convex_hull_of_rows():
    # rows linearly independent: recover the combination and check it
    rng = SeededRng(31)
    emb = EmbeddingTable(
        ("b0", "b1", "b2", "n"), rng.normal((4, 3))
    )
    rows = np.eye(3) + 0.1 * rng.normal((3, 3))
    anchor = subspace_anchor(rows, emb, ("b0", "b1", "b2"), "n", tau=1.0)
    coeffs = np.linalg.solve(rows.T, anchor)
    assert np.all(coeffs > 0)
    assert abs(coeffs.sum() - 1.0) <= 1e-9


def test_anchor_errors():
    emb = EmbeddingTable(("a", "b"), np.eye(2))
    with pytest.raises(ParameterError):
        anchor_weights(emb, ("a",), "b", tau=0.0)
    with pytest.raises(MissingClassError):
        anchor_weights(emb, ("a",), "zzz", tau=1.0)
    with pytest.raises(ParameterError):
        anchor_weights(emb, ("a", "b"), "b", tau=1.0)
