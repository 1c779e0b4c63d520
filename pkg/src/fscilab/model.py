"""The learner: a rectifier MLP backbone over feature-space inputs, a linear
per-class classifier, and the hand-derived losses — cross-entropy with weight
penalty, the graph Laplacian language regularizer, and the two-phase base
objective that alternates between them."""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateVectorError,
    FormatError,
    LabelError,
    MissingClassError,
    ParameterError,
    ScheduleError,
    ShapeError,
)
from .numkit import ParamSet, as_f64
from .semantic_space import SimilarityMode

CKPT_FORMAT = "fscil-ckpt"
CKPT_VERSION = "v1"


@dataclass
class HyperBase:
    """Base-session hyperparameters; the two phases default to 100 epochs
    each to mirror the alternating schedule."""

    alpha: float = 1e-4
    epochs_phase1: int = 100
    epochs_phase2: int = 100
    lr: float = 0.05
    batch_size: int = 32
    k: int | None = None  # None -> 5% of the class volume
    hidden_dims: tuple = (64, 64)
    feature_dim: int = 64
    similarity_mode: SimilarityMode = SimilarityMode.TOPK_COSINE
    phase2_keep_ce: bool = False
    mean_momentum: float = 0.9
    # global-norm cap; the all-classes similarity variants sum over every
    # partner class and diverge under SGD without it. None disables.
    grad_clip: float | None = 10.0

    def __post_init__(self):
        self.similarity_mode = SimilarityMode(self.similarity_mode)
        self.hidden_dims = tuple(self.hidden_dims)
        if self.alpha < 0:
            raise ParameterError("alpha must be nonnegative")
        if self.epochs_phase1 < 0 or self.epochs_phase2 < 0:
            raise ParameterError("epoch counts must be nonnegative")
        if self.lr <= 0 or self.batch_size <= 0 or self.feature_dim <= 0:
            raise ParameterError("lr, batch_size and feature_dim must be positive")
        if self.k is not None and self.k < 1:
            raise ParameterError("k must be positive when given")
        if not 0.0 <= self.mean_momentum < 1.0:
            raise ParameterError("mean_momentum must lie in [0, 1)")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ParameterError("grad_clip must be positive or None")


class Backbone:
    """Feature extractor: dense layers with rectifier activations on the
    hidden layers and a linear output layer."""

    def __init__(self, weights, biases):
        if len(weights) != len(biases) or not weights:
            raise ShapeError("weights and biases must pair up")
        for w, b in zip(weights, biases):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ShapeError("layer weight/bias shapes do not compose")
        for wa, wb in zip(weights, weights[1:]):
            if wb.shape[1] != wa.shape[0]:
                raise ShapeError("consecutive layer shapes do not compose")
        self.weights = [as_f64(w, "weight") for w in weights]
        self.biases = [as_f64(b, "bias") for b in biases]

    @classmethod
    def init(cls, input_dim, hidden_dims, feature_dim, rng):
        dims = [input_dim, *hidden_dims, feature_dim]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims, dims[1:]):
            scale = np.sqrt(2.0 / fan_in)
            weights.append(rng.normal((fan_out, fan_in)) * scale)
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def input_dim(self):
        return self.weights[0].shape[1]

    @property
    def feature_dim(self):
        return self.weights[-1].shape[0]

    def forward(self, x):
        """Features for a single vector or a (n, d) batch."""
        single = np.ndim(x) == 1
        h = np.atleast_2d(as_f64(x, "x"))
        if h.shape[1] != self.input_dim:
            raise ShapeError(f"input dim {h.shape[1]} != {self.input_dim}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if i != last:
                h = np.maximum(h, 0.0)
        return h[0] if single else h

    def forward_cached(self, x):
        """Batch forward that keeps per-layer inputs/preactivations for
        the hand-derived backward pass."""
        h = np.atleast_2d(as_f64(x, "x"))
        if h.shape[1] != self.input_dim:
            raise ShapeError(f"input dim {h.shape[1]} != {self.input_dim}")
        cache = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            pre = h @ w.T + b
            cache.append((h, pre))
            h = np.maximum(pre, 0.0) if i != last else pre
        return h, cache

    def backward(self, cache, d_features):
        """Gradients of a scalar loss w.r.t. all layer parameters given the
        loss gradient on the output features."""
        grads = {}
        d = np.atleast_2d(d_features)
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            layer_in, pre = cache[i]
            if i != last:
                d = d * (pre > 0.0)
            grads[f"backbone.w{i}"] = d.T @ layer_in
            grads[f"backbone.b{i}"] = d.sum(axis=0)
            if i:
                d = d @ self.weights[i]
        return grads

    def param_items(self):
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"backbone.w{i}", w))
            out.append((f"backbone.b{i}", b))
        return out

    def load_param_items(self, params):
        for i in range(len(self.weights)):
            self.weights[i] = params[f"backbone.w{i}"]
            self.biases[i] = params[f"backbone.b{i}"]

    def l2_sq(self):
        return sum(float(np.sum(a * a)) for a in self.weights + self.biases)

    def copy(self):
        return Backbone(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases]
        )


class Classifier:
    """Linear classifier: one weight row per known class, append-only."""

    def __init__(self, weight, class_ids):
        weight = as_f64(weight, "classifier weight")
        class_ids = tuple(class_ids)
        if weight.ndim != 2 or weight.shape[0] != len(class_ids):
            raise ShapeError("classifier needs one weight row per class id")
        if len(set(class_ids)) != len(class_ids):
            raise LabelError("duplicate class ids in classifier")
        self.weight = weight
        self.class_ids = class_ids
        self._index = {c: i for i, c in enumerate(class_ids)}

    def __len__(self):
        return len(self.class_ids)

    def index(self, class_id):
        if class_id not in self._index:
            raise LabelError(f"unknown class {class_id!r}")
        return self._index[class_id]

    def row(self, class_id):
        return self.weight[self.index(class_id)]

    def logits(self, features):
        return features @ self.weight.T

    def copy(self):
        return Classifier(self.weight.copy(), self.class_ids)


@dataclass
class Model:
    backbone: Backbone
    classifier: Classifier

    def params(self):
        items = self.backbone.param_items()
        items.append(("classifier.weight", self.classifier.weight))
        return ParamSet(items)

    def load_params(self, params):
        self.backbone.load_param_items(params)
        self.classifier.weight = params["classifier.weight"]

    def copy(self):
        return Model(self.backbone.copy(), self.classifier.copy())


def forward_logits(backbone, classifier, x):
    """Per-class scores eta . f(x); no softmax applied."""
    if classifier.weight.shape[1] != backbone.feature_dim:
        raise ShapeError("classifier rows do not match backbone feature dim")
    return classifier.logits(backbone.forward(x))


def _label_rows(classifier, labels):
    return np.array([classifier.index(y) for y in labels], dtype=np.int64)


def loss_main(backbone, classifier, features, labels, alpha):
    """Mean cross-entropy over the batch plus alpha * (|eta|^2 + |theta|^2),
    with hand-derived gradients for every parameter."""
    x = as_f64(features, "features")
    if x.ndim != 2 or x.shape[0] == 0:
        raise ParameterError("batch must be a nonempty (n, d) array")
    if len(labels) != x.shape[0]:
        raise ShapeError("labels must align with batch rows")
    if alpha < 0:
        raise ParameterError("alpha must be nonnegative")
    y_idx = _label_rows(classifier, labels)
    n = x.shape[0]

    feats, cache = backbone.forward_cached(x)
    logits = feats @ classifier.weight.T
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    logp = shifted - np.log(exp.sum(axis=1, keepdims=True))
    ce = float(-logp[np.arange(n), y_idx].mean())
    penalty = alpha * (float(np.sum(classifier.weight**2)) + backbone.l2_sq())

    d_logits = probs.copy()
    d_logits[np.arange(n), y_idx] -= 1.0
    d_logits /= n
    grad_w = d_logits.T @ feats + 2.0 * alpha * classifier.weight
    d_feats = d_logits @ classifier.weight
    back = backbone.backward(cache, d_feats)

    grads = ParamSet()
    for name, arr in backbone.param_items():
        grads[name] = back[name] + 2.0 * alpha * arr
    grads["classifier.weight"] = grad_w
    return ce + penalty, grads


def _similarity_and_grads(v_k, v_y, mode):
    """Similarity of two mean vectors plus its gradients w.r.t. each."""
    if mode is SimilarityMode.EUCLIDEAN:
        diff = v_k - v_y
        dist = float(np.linalg.norm(diff))
        if dist == 0.0:
            return 0.0, np.zeros_like(v_k), np.zeros_like(v_y)
        return -dist, -diff / dist, diff / dist
    nk = float(np.linalg.norm(v_k))
    ny = float(np.linalg.norm(v_y))
    if nk == 0.0 or ny == 0.0:
        raise DegenerateVectorError("zero-norm class mean under cosine mode")
    cos = float(np.dot(v_k, v_y) / (nk * ny))
    d_k = v_y / (nk * ny) - cos * v_k / (nk * nk)
    d_y = v_k / (nk * ny) - cos * v_y / (ny * ny)
    return cos, d_k, d_y


def _semantic_similarities(emb, mode):
    vecs = emb.vectors
    if mode is SimilarityMode.EUCLIDEAN:
        diffs = vecs[:, None, :] - vecs[None, :, :]
        return -np.sqrt(np.sum(diffs * diffs, axis=2))
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    unit = vecs / norms
    return np.clip(unit @ unit.T, -1.0, 1.0)


def loss_language_reg(
    backbone, features, labels, class_means, emb, graph, mode, momentum=0.9
):
    """Graph Laplacian language regularizer.

    Sums |lambda_ky - mu_ky| over every batch sample with label y and every
    class k whose top-K neighborhood contains y; under euclidean/cosine modes
    the inner sum ranges over all other classes instead. lambda comes from
    the fixed embedding table; mu comes from class means blended as
    momentum * frozen_mean + (1 - momentum) * batch_mean, so the gradient
    reaches theta only through the current batch's feature contributions.
    """
    mode = SimilarityMode(mode)
    x = as_f64(features, "features")
    if x.ndim != 2 or x.shape[0] == 0:
        raise ParameterError("batch must be a nonempty (n, d) array")
    if len(labels) != x.shape[0]:
        raise ShapeError("labels must align with batch rows")
    if tuple(graph.class_ids) != tuple(emb.class_ids):
        raise ShapeError("graph and embedding table list different classes")
    class_ids = emb.class_ids
    for y in labels:
        if y not in emb._index:
            raise MissingClassError(f"batch label {y!r} not in embedding table")

    feats, cache = backbone.forward_cached(x)
    n_classes = len(class_ids)

    # blended means: frozen snapshot everywhere, batch contribution mixed in
    batch_rows = {}
    for i, y in enumerate(labels):
        batch_rows.setdefault(y, []).append(i)
    blended = []
    for cid in class_ids:
        prior = class_means.mean(cid)
        if cid in batch_rows:
            bmean = feats[batch_rows[cid]].mean(axis=0)
            blended.append(momentum * prior + (1.0 - momentum) * bmean)
        else:
            blended.append(prior)
    blended = np.array(blended)

    lam = _semantic_similarities(emb, mode)
    label_counts = {y: len(rows) for y, rows in batch_rows.items()}

    loss = 0.0
    d_means = np.zeros_like(blended)
    adjacency = graph.adjacency
    norms = np.linalg.norm(blended, axis=1)
    if mode is not SimilarityMode.EUCLIDEAN and np.any(norms == 0.0):
        raise DegenerateVectorError("zero-norm class mean under cosine mode")
    for y, n_y in label_counts.items():
        yi = emb._index[y]
        if mode is SimilarityMode.TOPK_COSINE:
            partners = np.flatnonzero(adjacency[:, yi])
        else:
            partners = np.array([k for k in range(n_classes) if k != yi])
        if partners.size == 0:
            continue
        v_y = blended[yi]
        v_p = blended[partners]
        if mode is SimilarityMode.EUCLIDEAN:
            diffs = v_p - v_y
            dists = np.linalg.norm(diffs, axis=1)
            mu = -dists
            gaps = lam[partners, yi] - mu
            loss += n_y * float(np.sum(np.abs(gaps)))
            coef = -n_y * np.sign(gaps)  # subgradient 0 at exact ties
            safe = dists > 0.0
            unit = np.zeros_like(diffs)
            unit[safe] = diffs[safe] / dists[safe, None]
            d_means[partners] += coef[:, None] * -unit
            d_means[yi] += unit.T @ coef
        else:
            n_p = norms[partners]
            n_yv = norms[yi]
            mu = (v_p @ v_y) / (n_p * n_yv)
            gaps = lam[partners, yi] - mu
            loss += n_y * float(np.sum(np.abs(gaps)))
            coef = -n_y * np.sign(gaps)
            d_k = v_y[None, :] / (n_p * n_yv)[:, None] - (mu / n_p**2)[:, None] * v_p
            d_y = v_p / (n_p * n_yv)[:, None] - np.outer(mu / n_yv**2, v_y)
            d_means[partners] += coef[:, None] * d_k
            d_means[yi] += d_y.T @ coef

    d_feats = np.zeros_like(feats)
    for cid, rows in batch_rows.items():
        ci = emb._index[cid]
        d_feats[rows] = (1.0 - momentum) * d_means[ci] / len(rows)
    back = backbone.backward(cache, d_feats)
    grads = ParamSet((name, back[name]) for name, _ in backbone.param_items())
    return float(loss), grads


def _union_add(a, b):
    """Sum two gradient sets whose name sets may differ (absent means zero)."""
    out = ParamSet((n, arr.copy()) for n, arr in a.items())
    for n, arr in b.items():
        out[n] = out[n] + arr if n in out else arr
    return out


def loss_base(epoch, hyper, main=None, lreg=None):
    """Alternating base objective: phase 1 is the main loss alone, phase 2
    the language regularizer alone (or both when phase2_keep_ce is set)."""
    if epoch < 1:
        raise ParameterError("epoch numbering starts at 1")
    if epoch > hyper.epochs_phase1 + hyper.epochs_phase2:
        raise ScheduleError(
            f"epoch {epoch} beyond the configured {hyper.epochs_phase1}+"
            f"{hyper.epochs_phase2} schedule"
        )
    if epoch <= hyper.epochs_phase1:
        if main is None:
            raise ParameterError("phase 1 requires the main loss part")
        return main
    if lreg is None:
        raise ParameterError("phase 2 requires the language regularizer part")
    if hyper.phase2_keep_ce:
        if main is None:
            raise ParameterError("phase2_keep_ce requires the main loss part")
        return main[0] + lreg[0], _union_add(main[1], lreg[1])
    return lreg


def extend_classifier(classifier, new_class_ids, init_rows):
    """Append novel rows; existing rows are carried over bit-identically."""
    new_class_ids = tuple(new_class_ids)
    if len(new_class_ids) != len(init_rows):
        raise ShapeError("one initial row required per new class")
    for cid in new_class_ids:
        if cid in classifier._index:
            raise LabelError(f"class {cid!r} already present")
    if len(set(new_class_ids)) != len(new_class_ids):
        raise LabelError("duplicate ids among new classes")
    if not new_class_ids:
        return Classifier(classifier.weight.copy(), classifier.class_ids)
    rows = np.array([as_f64(r, "init row") for r in init_rows])
    if rows.shape[1] != classifier.weight.shape[1]:
        raise ShapeError("initial rows do not match classifier width")
    weight = np.vstack([classifier.weight, rows])
    return Classifier(weight, classifier.class_ids + new_class_ids)


def save_model(model, path, meta=None):
    """Checkpoint: one JSON header line, then parameters as little-endian
    float64 in ParamSet iteration order."""
    params = model.params()
    header = {
        "format": f"{CKPT_FORMAT} {CKPT_VERSION}",
        "class_ids": list(model.classifier.class_ids),
        "params": [{"name": n, "shape": list(a.shape)} for n, a in params.items()],
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, arr in params.items():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path):
    """Inverse of save_model; returns (Model, meta)."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError(f"{path}: unreadable checkpoint header") from None
    if header.get("format") != f"{CKPT_FORMAT} {CKPT_VERSION}":
        raise FormatError(f"{path}: not a {CKPT_FORMAT} {CKPT_VERSION} file")
    arrays = {}
    pos = 0
    for spec_entry in header["params"]:
        shape = tuple(spec_entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        raw = blob[pos * 8 : (pos + size) * 8]
        if len(raw) != size * 8:
            raise FormatError(f"{path}: truncated parameter payload")
        arrays[spec_entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        pos += size
    if pos * 8 != len(blob):
        raise FormatError(f"{path}: trailing bytes after parameters")

    layer_ids = sorted(
        int(n[len("backbone.w") :]) for n in arrays if n.startswith("backbone.w")
    )
    weights = [arrays[f"backbone.w{i}"] for i in layer_ids]
    biases = [arrays[f"backbone.b{i}"] for i in layer_ids]
    classifier = Classifier(arrays["classifier.weight"], header["class_ids"])
    return Model(Backbone(weights, biases), classifier), header.get("meta", {})
