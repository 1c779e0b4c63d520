"""Session-stream machinery: support/query splits with disjoint novel class
sets and cumulative query coverage, the single-exemplar memory variant, and
the synthetic feature-space generator whose semantic embeddings correlate
with the visual prototypes."""

import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    CapacityError,
    ConfigError,
    FormatError,
    ParameterError,
    ShapeError,
)
from .numkit import SeededRng, as_f64
from .semantic_space import EmbeddingTable, _parse_header, _parse_rows, format_float

FEAT_FORMAT = "fscil-feat"

# fraction of base-class samples held out as the base query split
BASE_QUERY_FRACTION = 0.2


@dataclass
class Split:
    """Aligned features and class labels."""

    features: np.ndarray
    labels: list

    def __post_init__(self):
        self.features = as_f64(self.features, "features")
        if self.features.ndim != 2 or self.features.shape[0] != len(self.labels):
            raise ShapeError("features must be (n, d) aligned with labels")
        self.labels = list(self.labels)

    def __len__(self):
        return len(self.labels)


class LabeledDataset:
    """Feature vectors with class labels and a per-class sample index."""

    def __init__(self, features, labels):
        self.features = as_f64(features, "features")
        if self.features.ndim != 2 or self.features.shape[0] != len(labels):
            raise ShapeError("features must be (n, d) aligned with labels")
        self.labels = list(labels)
        by_class = {}
        for i, y in enumerate(self.labels):
            by_class.setdefault(y, []).append(i)
        self._by_class = {c: np.array(ix, dtype=np.int64) for c, ix in by_class.items()}

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def classes(self):
        return tuple(self._by_class)

    def indices_of(self, class_id):
        if class_id not in self._by_class:
            raise CapacityError(f"class {class_id!r} has no samples")
        return self._by_class[class_id]


@dataclass
class StreamConfig:
    base_classes: int
    sessions: int
    n_way: int
    k_shot: int
    query_per_class: int = 15
    seed: int = 0

    def __post_init__(self):
        if self.base_classes <= 0 or self.n_way <= 0 or self.k_shot <= 0:
            raise ParameterError("base_classes, n_way and k_shot must be positive")
        if self.sessions < 0:
            raise ParameterError("sessions must be nonnegative")
        if self.query_per_class <= 0:
            raise ParameterError("query_per_class must be positive")

    @classmethod
    def from_json(cls, doc):
        data = json.loads(doc) if isinstance(doc, str) else dict(doc)
        known = {"base_classes", "sessions", "n_way", "k_shot", "query_per_class", "seed"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown stream config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"bad stream config: {exc}") from None

    def to_dict(self):
        return {
            "base_classes": self.base_classes,
            "sessions": self.sessions,
            "n_way": self.n_way,
            "k_shot": self.k_shot,
            "query_per_class": self.query_per_class,
            "seed": self.seed,
        }


@dataclass
class Session:
    index: int
    class_ids: tuple  # classes introduced in this session
    support: Split
    query: Split  # cumulative over all classes seen so far


@dataclass
class SessionStream:
    sessions: list
    base_class_ids: tuple

    def __len__(self):
        return len(self.sessions)

    def novel_class_ids(self, t):
        return self.sessions[t].class_ids

    def classes_up_to(self, t):
        out = []
        for s in self.sessions[: t + 1]:
            out.extend(s.class_ids)
        return tuple(out)


def build_session_stream(data, cfg):
    """Deterministically split a dataset into base + T incremental sessions.

    Base support keeps every base-class sample not held out for the base
    query split; each incremental support is exactly n_way * k_shot samples
    and each query set covers every class seen so far.
    """
    classes = data.classes
    needed = cfg.base_classes + cfg.sessions * cfg.n_way
    if needed > len(classes):
        raise ParameterError(
            f"config needs {needed} classes, dataset has {len(classes)}"
        )
    rng = SeededRng(cfg.seed)
    order = [classes[i] for i in rng.permutation(len(classes))]
    base_ids = tuple(order[: cfg.base_classes])
    session_ids = [
        tuple(order[cfg.base_classes + t * cfg.n_way : cfg.base_classes + (t + 1) * cfg.n_way])
        for t in range(cfg.sessions)
    ]

    support_pool, query_pool = {}, {}
    for cid in base_ids:
        idx = data.indices_of(cid)
        if len(idx) < 2:
            raise CapacityError(f"base class {cid!r} needs at least 2 samples")
        shuffled = idx[rng.permutation(len(idx))]
        n_query = max(1, int(len(idx) * BASE_QUERY_FRACTION))
        query_pool[cid] = shuffled[:n_query]
        support_pool[cid] = shuffled[n_query:]
    for ids in session_ids:
        for cid in ids:
            idx = data.indices_of(cid)
            if len(idx) < cfg.k_shot + cfg.query_per_class:
                raise CapacityError(
                    f"class {cid!r} has {len(idx)} samples, needs "
                    f"{cfg.k_shot + cfg.query_per_class}"
                )
            shuffled = idx[rng.permutation(len(idx))]
            support_pool[cid] = shuffled[: cfg.k_shot]
            query_pool[cid] = shuffled[cfg.k_shot : cfg.k_shot + cfg.query_per_class]

    def make_split(class_list, pool):
        rows, labels = [], []
        for cid in class_list:
            for i in pool[cid]:
                rows.append(i)
            labels.extend([cid] * len(pool[cid]))
        feats = data.features[rows].copy() if rows else np.zeros((0, data.dim))
        return Split(feats, labels)

    sessions = []
    seen = list(base_ids)
    sessions.append(
        Session(0, base_ids, make_split(base_ids, support_pool), make_split(seen, query_pool))
    )
    for t, ids in enumerate(session_ids, start=1):
        seen.extend(ids)
        sessions.append(
            Session(t, ids, make_split(ids, support_pool), make_split(seen, query_pool))
        )
    return SessionStream(sessions, base_ids)


def generate_synthetic_dataset(
    num_classes,
    feature_dim,
    samples_per_class,
    class_spread,
    semantic_noise,
    seed,
    semantic_dim=None,
):
    """Synthetic substrate: class prototypes on a sphere of radius
    class_spread, unit Gaussian samples around them, and semantic embeddings
    equal to prototype + semantic_noise * Gaussian so semantic neighborhoods
    track visual ones."""
    if num_classes < 2 or samples_per_class < 1:
        raise ParameterError("need at least 2 classes and 1 sample per class")
    if feature_dim < 2:
        raise ParameterError("feature_dim must be at least 2")
    if class_spread <= 0:
        raise ParameterError("class_spread must be positive")
    if semantic_noise < 0:
        raise ParameterError("semantic_noise must be nonnegative")

    rng = SeededRng(seed)
    raw = rng.normal((num_classes, feature_dim))
    protos = raw / np.linalg.norm(raw, axis=1, keepdims=True) * class_spread
    noise = rng.normal((num_classes, samples_per_class, feature_dim))
    samples = (protos[:, None, :] + noise).reshape(-1, feature_dim)
    labels = [f"class_{c:03d}" for c in range(num_classes) for _ in range(samples_per_class)]
    emb = protos + semantic_noise * rng.normal((num_classes, feature_dim))
    if semantic_dim is not None:
        if semantic_dim < 2:
            raise ParameterError("semantic_dim must be at least 2")
        side = max(feature_dim, semantic_dim)
        q, _ = np.linalg.qr(rng.normal((side, side)))
        emb = emb @ q[:feature_dim, :semantic_dim]
    class_ids = tuple(f"class_{c:03d}" for c in range(num_classes))
    return LabeledDataset(samples, labels), EmbeddingTable(class_ids, emb)


class MemoryBuffer:
    """One exemplar per covered class; exemplars are never replaced."""

    def __init__(self, exemplars=None):
        self.exemplars = dict(exemplars or {})

    def __len__(self):
        return len(self.exemplars)

    def __contains__(self, class_id):
        return class_id in self.exemplars

    @property
    def classes(self):
        return tuple(self.exemplars)

    def as_split(self):
        if not self.exemplars:
            raise CapacityError("memory buffer is empty")
        feats = np.array([v for v in self.exemplars.values()])
        return Split(feats, list(self.exemplars))


def sample_memory(stream, t, prior, seed):
    """Memory for session t: covers every class from sessions < t with one
    seeded-random support exemplar, reusing prior picks bit-identically."""
    if t < 1 or t >= len(stream.sessions):
        raise ParameterError(f"session index {t} out of range")
    root = SeededRng(seed)
    exemplars = {}
    for session in stream.sessions[:t]:
        support = session.support
        rows_by_class = {}
        for i, y in enumerate(support.labels):
            rows_by_class.setdefault(y, []).append(i)
        for cid in session.class_ids:
            if prior is not None and cid in prior:
                exemplars[cid] = prior.exemplars[cid]
                continue
            rows = rows_by_class.get(cid)
            if not rows:
                raise CapacityError(f"class {cid!r} has an empty support set")
            pick = rows[root.derive(f"memory/{cid}").integers(0, len(rows))]
            exemplars[cid] = support.features[pick].copy()
    return MemoryBuffer(exemplars)


def save_dataset(data, path):
    """Write a dataset in the `fscil-feat v1` text format."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{FEAT_FORMAT} v1 {len(data)} {data.dim}\n")
        for label, row in zip(data.labels, data.features):
            if "\t" in label or "\n" in label:
                raise FormatError(f"label {label!r} contains a tab or newline")
            fh.write(label + "\t" + " ".join(format_float(x) for x in row) + "\n")


def load_dataset(path):
    """Read a `fscil-feat v1` file into a LabeledDataset."""
    with open(path, "r", encoding="utf-8", newline="\n") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError(f"{path}: empty file")
    count, dim = _parse_header(lines[0], FEAT_FORMAT, path)
    labels, rows = _parse_rows(lines[1:], count, dim, path, unique_labels=False)
    return LabeledDataset(rows, labels)
