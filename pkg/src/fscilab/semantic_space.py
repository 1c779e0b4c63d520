"""Class-label embedding tables, the top-K semantic KNN graph, similarity
structures, and semantic subspace anchors for novel classifier rows."""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    DegenerateVectorError,
    FormatError,
    MissingClassError,
    ParameterError,
    ShapeError,
)
from .numkit import as_f64, cosine_similarity, softmax_with_temperature

EMB_FORMAT = "fscil-emb"
EMB_VERSION = "v1"


class SimilarityMode(str, Enum):
    EUCLIDEAN = "euclidean"
    COSINE = "cosine"
    TOPK_COSINE = "topk_cosine"


@dataclass(frozen=True)
class EmbeddingTable:
    """Per-class semantic vectors, ordered, one row per class."""

    class_ids: tuple
    vectors: np.ndarray  # (num_classes, dim)

    def __post_init__(self):
        vecs = as_f64(self.vectors, "embedding vectors")
        if vecs.ndim != 2 or vecs.shape[0] != len(self.class_ids):
            raise ShapeError("vectors must be (num_classes, dim)")
        if len(set(self.class_ids)) != len(self.class_ids):
            raise FormatError("duplicate class identifiers in embedding table")
        if np.any(np.linalg.norm(vecs, axis=1) == 0.0):
            raise DegenerateVectorError("embedding table contains a zero vector")
        object.__setattr__(self, "class_ids", tuple(self.class_ids))
        object.__setattr__(self, "vectors", vecs)
        object.__setattr__(
            self, "_index", {c: i for i, c in enumerate(self.class_ids)}
        )

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.class_ids)

    def __contains__(self, class_id):
        return class_id in self._index

    def index(self, class_id):
        if class_id not in self._index:
            raise MissingClassError(f"class {class_id!r} not in embedding table")
        return self._index[class_id]

    def vector(self, class_id):
        return self.vectors[self.index(class_id)]

    def subtable(self, class_ids):
        rows = [self.index(c) for c in class_ids]
        return EmbeddingTable(tuple(class_ids), self.vectors[rows].copy())

    def normalized(self):
        norms = np.linalg.norm(self.vectors, axis=1, keepdims=True)
        return EmbeddingTable(self.class_ids, self.vectors / norms)


def format_float(x):
    """Scientific notation with 17 significant digits (round-trips float64)."""
    return f"{x:.16e}"


def _parse_header(line, magic, path):
    parts = line.split()
    if len(parts) != 4 or parts[0] != magic or parts[1] != EMB_VERSION:
        raise FormatError(f"{path}: bad header {line!r}")
    try:
        count, dim = int(parts[2]), int(parts[3])
    except ValueError:
        raise FormatError(f"{path}: non-integer counts in header") from None
    if count < 0 or dim <= 0:
        raise FormatError(f"{path}: invalid counts in header")
    return count, dim


def _parse_rows(lines, count, dim, path, unique_labels=True):
    labels, rows = [], []
    if len(lines) != count:
        raise FormatError(f"{path}: expected {count} rows, found {len(lines)}")
    for lineno, line in enumerate(lines, start=2):
        label, sep, rest = line.partition("\t")
        if not sep or not label:
            raise FormatError(f"{path}:{lineno}: missing label/tab separator")
        fields = rest.split()
        if len(fields) != dim:
            raise FormatError(
                f"{path}:{lineno}: expected {dim} floats, found {len(fields)}"
            )
        try:
            values = [float(f) for f in fields]
        except ValueError:
            raise FormatError(f"{path}:{lineno}: unparseable float") from None
        if not all(np.isfinite(values)):
            raise FormatError(f"{path}:{lineno}: non-finite value")
        labels.append(label)
        rows.append(values)
    if unique_labels and len(set(labels)) != len(labels):
        raise FormatError(f"{path}: duplicate class label")
    return labels, np.array(rows, dtype=np.float64).reshape(count, dim)


def load_embedding_table(path):
    """Read a `fscil-emb v1` file into an EmbeddingTable."""
    with open(path, "r", encoding="utf-8", newline="\n") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError(f"{path}: empty file")
    count, dim = _parse_header(lines[0], EMB_FORMAT, path)
    labels, rows = _parse_rows(lines[1:], count, dim, path)
    return EmbeddingTable(tuple(labels), rows)


def save_embedding_table(table, path):
    """Write an EmbeddingTable in the bit-exact `fscil-emb v1` text format."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{EMB_FORMAT} {EMB_VERSION} {len(table)} {table.dim}\n")
        for cid, row in zip(table.class_ids, table.vectors):
            if "\t" in cid or "\n" in cid:
                raise FormatError(f"label {cid!r} contains a tab or newline")
            fh.write(cid + "\t" + " ".join(format_float(x) for x in row) + "\n")


@dataclass(frozen=True)
class KnnGraph:
    """Binary directed top-K adjacency over classes; row i marks the K
    nearest classes to i by Euclidean distance in semantic space."""

    adjacency: np.ndarray  # (s, s) of 0/1
    k: int
    class_ids: tuple

    def __post_init__(self):
        object.__setattr__(
            self, "_index", {c: i for i, c in enumerate(self.class_ids)}
        )

    def index(self, class_id):
        if class_id not in self._index:
            raise MissingClassError(f"class {class_id!r} not in graph")
        return self._index[class_id]


def default_k(num_classes):
    """K as 5% of the class volume, at least 1."""
    return max(1, int(round(0.05 * num_classes)))


def build_knn_graph(table, k):
    """Directed top-K graph: R[i, j] = 1 iff j is among the K classes nearest
    to i (self excluded, ties broken by lowest class index)."""
    n = len(table)
    if not 1 <= k < n:
        raise ParameterError(f"K must satisfy 1 <= K < {n}, got {k}")
    x = table.vectors
    diffs = x[:, None, :] - x[None, :, :]
    d2 = np.sum(diffs * diffs, axis=2)
    np.fill_diagonal(d2, np.inf)
    # stable argsort keeps equal distances in index order
    order = np.argsort(d2, axis=1, kind="stable")
    adjacency = np.zeros((n, n), dtype=np.int64)
    rows = np.repeat(np.arange(n), k)
    adjacency[rows, order[:, :k].ravel()] = 1
    return KnnGraph(adjacency, k, table.class_ids)


def pairwise_similarity(a, b, mode):
    """Similarity under the chosen mode; euclidean is negated distance so
    that larger always means more similar."""
    a = as_f64(a, "a")
    b = as_f64(b, "b")
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"dim mismatch: {a.shape} vs {b.shape}")
    mode = SimilarityMode(mode)
    if mode is SimilarityMode.EUCLIDEAN:
        return float(-np.linalg.norm(a - b))
    return cosine_similarity(a, b)


@dataclass
class ClassMeans:
    """Arithmetic mean of backbone features per class."""

    means: dict  # class id -> vector
    counts: dict  # class id -> int

    def mean(self, class_id):
        if class_id not in self.means:
            raise MissingClassError(f"no visual mean for class {class_id!r}")
        return self.means[class_id]

    def __contains__(self, class_id):
        return class_id in self.means

    def copy(self):
        return ClassMeans(
            {c: v.copy() for c, v in self.means.items()}, dict(self.counts)
        )


def class_visual_means(features, labels):
    """Average feature vector per class, keyed by class id."""
    feats = as_f64(features, "features")
    if feats.ndim != 2 or feats.shape[0] != len(labels):
        raise ShapeError("features must be (n, d) aligned with labels")
    means, counts = {}, {}
    for label in labels:
        counts[label] = counts.get(label, 0) + 1
    for label in counts:
        rows = [i for i, y in enumerate(labels) if y == label]
        means[label] = feats[rows].mean(axis=0)
    return ClassMeans(means, counts)


def anchor_weights(embeddings, base_class_ids, novel_class_id, tau, normalize=False):
    """Softmax weights over base classes by semantic dot product with the
    novel class (temperature tau). A convex combination by construction."""
    if tau <= 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    if novel_class_id in base_class_ids:
        raise ParameterError(f"{novel_class_id!r} is already a base class")
    table = embeddings.normalized() if normalize else embeddings
    e_c = table.vector(novel_class_id)
    dots = np.array([float(np.dot(table.vector(j), e_c)) for j in base_class_ids])
    return softmax_with_temperature(dots, tau)


def subspace_anchor(
    base_weights, embeddings, base_class_ids, novel_class_id, tau=1.0, normalize=False
):
    """Anchor for a novel class: semantic-softmax-weighted combination of the
    base classifier rows (rows aligned with base_class_ids order)."""
    w = anchor_weights(embeddings, base_class_ids, novel_class_id, tau, normalize)
    rows = as_f64(base_weights, "base_weights")
    if rows.ndim != 2 or rows.shape[0] != len(base_class_ids):
        raise ShapeError("base_weights rows must align with base_class_ids")
    return w @ rows
