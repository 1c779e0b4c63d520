"""Training orchestration: the two-phase base schedule, and incremental
sessions that freeze the backbone and fine-tune only the classifier under
the drift (old-row) and semantic subspace (novel-row) penalties."""

from dataclasses import dataclass

import numpy as np

from .errors import MissingClassError, ParameterError
from .eval_report import evaluate_session
from .model import (
    Backbone,
    Classifier,
    Model,
    extend_classifier,
    loss_base,
    loss_language_reg,
    loss_main,
)
from .numkit import ParamSet, SeededRng, sgd_step
from .protocol import sample_memory
from .semantic_space import (
    build_knn_graph,
    class_visual_means,
    default_k,
    subspace_anchor,
)


@dataclass
class IncrementalHyper:
    """Session-time hyperparameters; defaults are chosen for stable
    desk-scale convergence and are recorded in every report."""

    alpha: float = 1e-4
    beta: float = 1.0
    gamma: float = 1.0
    tau: float = 1.0
    lr: float = 0.01
    steps: int = 200
    include_ce: bool = True
    use_memory: bool = False
    init: str = "anchor"  # or "imprint"
    normalize_embeddings: bool = False

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ParameterError("alpha, beta and gamma must be nonnegative")
        if self.tau <= 0 or self.lr <= 0:
            raise ParameterError("tau and lr must be positive")
        if self.steps < 1:
            raise ParameterError("steps must be positive")
        if self.init not in ("anchor", "imprint"):
            raise ParameterError(f"unknown init {self.init!r}")


@dataclass(frozen=True)
class WeightSnapshot:
    """Frozen copy of every classifier row at the end of a session."""

    session: int
    rows: dict  # class id -> row vector
    introduced: tuple  # classes that first appeared in this session

    @classmethod
    def capture(cls, session, classifier, introduced):
        rows = {c: classifier.row(c).copy() for c in classifier.class_ids}
        for arr in rows.values():
            arr.flags.writeable = False
        return cls(session, rows, tuple(introduced))


def _minibatches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _clip_gradients(grads, cap):
    """Rescale to the global-norm cap; a no-op for norms at or below it."""
    if cap is None:
        return grads
    total = np.sqrt(sum(float(np.sum(g * g)) for _, g in grads.items()))
    if total <= cap:
        return grads
    scale = cap / total
    return ParamSet((n, g * scale) for n, g in grads.items())


def train_base(data, emb, hyper, seed):
    """Joint base training: epochs_phase1 of the main loss, then
    epochs_phase2 of the language regularizer per the alternating schedule.
    Returns the model and a per-epoch log."""
    if len(data) == 0:
        raise ParameterError("base support is empty")
    class_ids = []
    for y in data.labels:
        if y not in class_ids:
            class_ids.append(y)
    for cid in class_ids:
        if cid not in emb:
            raise MissingClassError(f"embedding table does not cover {cid!r}")

    rng = SeededRng(seed)
    backbone = Backbone.init(data.features.shape[1], hyper.hidden_dims, hyper.feature_dim, rng)
    classifier = Classifier(rng.normal((len(class_ids), hyper.feature_dim)) * 0.01, class_ids)
    model = Model(backbone, classifier)

    base_emb = emb.subtable(class_ids)
    k = hyper.k if hyper.k is not None else default_k(len(class_ids))
    graph = build_knn_graph(base_emb, k)

    x, labels = data.features, data.labels
    n = len(data)
    log = []
    means = None
    for epoch in range(1, hyper.epochs_phase1 + hyper.epochs_phase2 + 1):
        phase = 1 if epoch <= hyper.epochs_phase1 else 2
        if phase == 2 and means is None:
            means = class_visual_means(model.backbone.forward(x), labels)
        batch_losses, batch_main, batch_lreg = [], [], []
        for idx in _minibatches(n, hyper.batch_size, rng):
            xb, yb = x[idx], [labels[i] for i in idx]
            main = lreg = None
            if phase == 1 or hyper.phase2_keep_ce:
                main = loss_main(model.backbone, model.classifier, xb, yb, hyper.alpha)
            if phase == 2:
                lreg = loss_language_reg(
                    model.backbone, xb, yb, means, base_emb, graph,
                    hyper.similarity_mode, hyper.mean_momentum,
                )
            value, grads = loss_base(epoch, hyper, main=main, lreg=lreg)
            params = model.params()
            if not params.same_layout(grads):
                padded = params.zeros_like()
                for name, arr in grads.items():
                    padded[name] = arr
                grads = padded
            grads = _clip_gradients(grads, hyper.grad_clip)
            model.load_params(sgd_step(params, grads, hyper.lr))
            if phase == 2:
                feats = model.backbone.forward(xb)
                rows_by_class = {}
                for i, yy in enumerate(yb):
                    rows_by_class.setdefault(yy, []).append(i)
                for cid, rows in rows_by_class.items():
                    means.means[cid] = (
                        hyper.mean_momentum * means.means[cid]
                        + (1.0 - hyper.mean_momentum) * feats[rows].mean(axis=0)
                    )
            batch_losses.append(value)
            batch_main.append(main[0] if main else None)
            batch_lreg.append(lreg[0] if lreg else None)
        log.append(
            {
                "epoch": epoch,
                "phase": phase,
                "loss": float(np.mean(batch_losses)),
                "loss_main": None if batch_main[0] is None else float(np.mean(batch_main)),
                "loss_lreg": None if batch_lreg[0] is None else float(np.mean(batch_lreg)),
                "seed": seed,
            }
        )
    return model, log


def r_old(classifier, snapshots, t):
    """Drift penalty: sum over sessions t' < t and classes introduced in t'
    of |row_now - row_at_end_of_t'|^2, with gradients on current rows."""
    value = 0.0
    grad = np.zeros_like(classifier.weight)
    for snap in snapshots:
        if snap.session >= t:
            continue
        for cid in snap.introduced:
            if cid not in snap.rows:
                raise MissingClassError(f"snapshot {snap.session} misses {cid!r}")
            diff = classifier.row(cid) - snap.rows[cid]
            value += float(np.dot(diff, diff))
            grad[classifier.index(cid)] += 2.0 * diff
    return value, grad


def r_new(classifier, anchors):
    """Subspace penalty pulling each novel row toward its anchor; anchors
    are constants, so gradients touch only the novel rows."""
    value = 0.0
    grad = np.zeros_like(classifier.weight)
    for cid, anchor in anchors.items():
        diff = classifier.row(cid) - anchor
        value += float(np.dot(diff, diff))
        grad[classifier.index(cid)] += 2.0 * diff
    return value, grad


def _session_objective(weight, classifier, feats, y_idx, anchors, snapshots, t, hyper):
    """Objective value and gradient w.r.t. the classifier weight matrix for
    one incremental step (backbone frozen, features precomputed)."""
    classifier.weight = weight
    value = 0.0
    grad = np.zeros_like(weight)
    if hyper.include_ce:
        logits = feats @ weight.T
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        probs = exp / exp.sum(axis=1, keepdims=True)
        logp = shifted - np.log(exp.sum(axis=1, keepdims=True))
        n = feats.shape[0]
        value += float(-logp[np.arange(n), y_idx].mean())
        d_logits = probs
        d_logits[np.arange(n), y_idx] -= 1.0
        grad += (d_logits / n).T @ feats
    value += hyper.alpha * float(np.sum(weight * weight))
    grad += 2.0 * hyper.alpha * weight
    ro, g_ro = r_old(classifier, snapshots, t)
    value += hyper.beta * ro
    grad += hyper.beta * g_ro
    rn, g_rn = r_new(classifier, anchors)
    value += hyper.gamma * rn
    grad += hyper.gamma * g_rn
    return value, grad


def run_incremental_session(model, session, emb, snapshots, memory, hyper, seed):
    """One incremental session: extend the classifier with anchored novel
    rows and fine-tune only eta for hyper.steps full-batch SGD steps."""
    t = session.index
    if t < 1:
        raise ParameterError("incremental sessions start at index 1")
    if hyper.use_memory and memory is None:
        raise ParameterError("memory variant requested but no buffer supplied")
    base_snap = next((s for s in snapshots if s.session == 0), None)
    if base_snap is None:
        raise ParameterError("snapshots must include the base session")

    base_ids = base_snap.introduced
    base_rows = np.array([model.classifier.row(c) for c in base_ids])
    anchors = {
        c: subspace_anchor(
            base_rows, emb, base_ids, c, hyper.tau, hyper.normalize_embeddings
        )
        for c in session.class_ids
    }

    support = session.support
    feats_support = model.backbone.forward(support.features)
    if hyper.init == "anchor":
        init_rows = [anchors[c] for c in session.class_ids]
    else:  # imprint: mean support feature per novel class
        init_rows = []
        for c in session.class_ids:
            rows = [i for i, y in enumerate(support.labels) if y == c]
            init_rows.append(feats_support[rows].mean(axis=0))
    classifier = extend_classifier(model.classifier, session.class_ids, init_rows)
    model = Model(model.backbone, classifier)

    feats, train_labels = feats_support, list(support.labels)
    if hyper.use_memory:
        mem_split = memory.as_split()
        feats = np.vstack([feats, model.backbone.forward(mem_split.features)])
        train_labels = train_labels + list(mem_split.labels)
    y_idx = np.array([classifier.index(y) for y in train_labels], dtype=np.int64)

    trace = []
    weight = classifier.weight
    for _ in range(hyper.steps):
        value, grad = _session_objective(
            weight, classifier, feats, y_idx, anchors, snapshots, t, hyper
        )
        trace.append(value)
        stepped = sgd_step(ParamSet([("w", weight)]), ParamSet([("w", grad)]), hyper.lr)
        weight = stepped["w"]
    classifier.weight = weight

    snapshot = WeightSnapshot.capture(t, classifier, session.class_ids)
    metrics = {"session": t, "objective_trace": trace, "anchors": anchors}
    return model, snapshot, metrics


def run_sessions(model, stream, emb, hyper_inc, seed):
    """Run every incremental session of a stream on an already-trained base
    model, evaluating each cumulative query split (base session included)."""
    base = stream.sessions[0]
    snapshots = [WeightSnapshot.capture(0, model.classifier, stream.base_class_ids)]
    session_metrics = [
        evaluate_session(model, base.query, stream.base_class_ids, stream.base_class_ids, 0)
    ]
    memory = None
    for session in stream.sessions[1:]:
        if hyper_inc.use_memory:
            memory = sample_memory(stream, session.index, memory, seed)
        model, snapshot, _ = run_incremental_session(
            model, session, emb, snapshots, memory, hyper_inc, seed
        )
        snapshots.append(snapshot)
        allowed = stream.classes_up_to(session.index)
        session_metrics.append(
            evaluate_session(
                model, session.query, allowed, stream.base_class_ids, session.index
            )
        )
    return model, session_metrics, snapshots


def run_full_stream(stream, emb, hyper_base, hyper_inc, seed):
    """Base training followed by every incremental session. Returns the
    final model, per-session metrics, snapshot history, and the base log."""
    model, base_log = train_base(stream.sessions[0].support, emb, hyper_base, seed)
    model, session_metrics, snapshots = run_sessions(model, stream, emb, hyper_inc, seed)
    return model, session_metrics, snapshots, base_log
