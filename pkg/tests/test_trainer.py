import numpy as np
import pytest

from fscilab.errors import MissingClassError, ParameterError
from fscilab.eval_report import evaluate_session
from fscilab.model import (
    Backbone,
    Classifier,
    HyperBase,
    Model,
    loss_main,
)
from fscilab.numkit import ParamSet, SeededRng, sgd_step
from fscilab.protocol import (
    StreamConfig,
    build_session_stream,
    generate_synthetic_dataset,
    sample_memory,
)
from fscilab.trainer import (
    IncrementalHyper,
    WeightSnapshot,
    r_new,
    r_old,
    run_full_stream,
    run_incremental_session,
    run_sessions,
    train_base,
)


def _stream(num_classes=12, base=6, sessions=2, n_way=3, k_shot=5, seed=1,
            feature_dim=8, samples=25, spread=6.0, semantic_noise=0.0):
    data, emb = generate_synthetic_dataset(
        num_classes, feature_dim, samples, spread, semantic_noise, seed
    )
    cfg = StreamConfig(base_classes=base, sessions=sessions, n_way=n_way,
                       k_shot=k_shot, query_per_class=5, seed=seed)
    return build_session_stream(data, cfg), emb


def _fast_base(**over):
    kwargs = dict(alpha=1e-4, epochs_phase1=15, epochs_phase2=5, lr=0.05,
                  batch_size=32, hidden_dims=(24,), feature_dim=12, k=1)
    kwargs.update(over)
    return HyperBase(**kwargs)


# ---- r_old / r_new ----

def test_r_old_zero_at_snapshots():
    rng = SeededRng(0)
    ids = ["a", "b", "c"]
    clf = Classifier(rng.normal((3, 4)), ids)
    snaps = [WeightSnapshot(0, {c: clf.row(c).copy() for c in ids}, tuple(ids))]
    value, grad = r_old(clf, snaps, t=1)
    assert value == 0.0
    assert np.all(grad == 0.0)


def test_r_old_single_drift_arithmetic():
    rng = SeededRng(1)
    ids = ["a", "b"]
    clf = Classifier(rng.normal((2, 3)), ids)
    snaps = [WeightSnapshot(0, {c: clf.row(c).copy() for c in ids}, tuple(ids))]
    d = np.array([0.3, -0.1, 0.2])
    clf.weight[0] += d
    value, grad = r_old(clf, snaps, t=1)
    assert value == pytest.approx(float(np.dot(d, d)), abs=1e-15)
    assert np.allclose(grad[0], 2.0 * d, atol=1e-15)
    assert np.all(grad[1] == 0.0)


def test_r_old_random_drift_matches_direct_sum():
    rng = SeededRng(2)
    ids = [f"c{i}" for i in range(5)]
    clf = Classifier(rng.normal((5, 4)), ids)
    snap_rows = {c: rng.normal(4) for c in ids}
    snaps = [WeightSnapshot(0, snap_rows, tuple(ids))]
    value, _ = r_old(clf, snaps, t=1)
    direct = sum(float(np.sum((clf.row(c) - snap_rows[c]) ** 2)) for c in ids)
    assert value == pytest.approx(direct, rel=1e-12)


def test_r_old_uses_each_classs_introduction_snapshot():
    rng = SeededRng(3)
    ids = ["a", "b", "c"]
    clf = Classifier(rng.normal((3, 2)), ids)
    snaps = [
        WeightSnapshot(0, {"a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0])},
                       ("a", "b")),
        # session 1 snapshot has a drifted copy of "a", but "a" anchors to t'=0
        WeightSnapshot(1, {"a": np.array([9.0, 9.0]), "b": np.array([9.0, 9.0]),
                           "c": np.array([2.0, 2.0])}, ("c",)),
    ]
    value, _ = r_old(clf, snaps, t=2)
    expect = (
        float(np.sum((clf.row("a") - [1.0, 0.0]) ** 2))
        + float(np.sum((clf.row("b") - [0.0, 1.0]) ** 2))
        + float(np.sum((clf.row("c") - [2.0, 2.0]) ** 2))
    )
    assert value == pytest.approx(expect, rel=1e-12)


def test_r_old_missing_snapshot():
    clf = Classifier(np.eye(2), ["a", "b"])
    snaps = [WeightSnapshot(0, {"a": np.zeros(2)}, ("a", "b"))]
    with pytest.raises(MissingClassError):
        r_old(clf, snaps, t=1)


def test_r_new_identity_and_offset():
    rng = SeededRng(4)
    clf = Classifier(rng.normal((3, 4)), ["a", "b", "n"])
    anchors = {"n": clf.row("n").copy()}
    value, grad = r_new(clf, anchors)
    assert value == 0.0 and np.all(grad == 0.0)
    d = np.array([0.5, 0.0, -0.5, 1.0])
    clf.weight[2] += d
    value, grad = r_new(clf, anchors)
    assert value == pytest.approx(float(np.dot(d, d)), rel=1e-12)
    assert np.allclose(grad[2], 2.0 * d, atol=1e-15)
    assert np.all(grad[:2] == 0.0)


# ---- incremental sessions ----

def _trained_base(stream, emb, seed=0):
    model, _ = train_base(stream.sessions[0].support, emb, _fast_base(), seed)
    snaps = [WeightSnapshot.capture(0, model.classifier, stream.base_class_ids)]
    return model, snaps


def test_novel_rows_converge_to_anchors_from_imprint_init():
    # gamma quadratic alone: unique minimizer is the anchor; lr below 1/(2*gamma)
    stream, emb = _stream()
    model, snaps = _trained_base(stream, emb)
    hyper = IncrementalHyper(alpha=0.0, beta=0.0, gamma=1.0, lr=0.1, steps=200,
                             include_ce=False, init="imprint")
    out, snap, metrics = run_incremental_session(
        model, stream.sessions[1], emb, snaps, None, hyper, seed=0
    )
    base_rows = np.array([model.classifier.row(c) for c in stream.base_class_ids])
    for c in stream.sessions[1].class_ids:
        assert np.allclose(out.classifier.row(c), metrics["anchors"][c], atol=1e-6)


def test_large_beta_pins_old_rows():
    # lr must sit below the 1/(2*beta) stability bound for the drift quadratic
    stream, emb = _stream()
    model, snaps = _trained_base(stream, emb)
    hyper = IncrementalHyper(alpha=0.0, beta=1e6, gamma=1.0, lr=1e-7, steps=200,
                             include_ce=True)
    out, _, _ = run_incremental_session(
        model, stream.sessions[1], emb, snaps, None, hyper, seed=0
    )
    for c in stream.base_class_ids:
        drift = np.linalg.norm(out.classifier.row(c) - snaps[0].rows[c])
        assert drift < 1e-3


def test_backbone_frozen_through_sessions():
    stream, emb = _stream()
    model, snaps = _trained_base(stream, emb)
    theta_before = [w.copy() for w in model.backbone.weights]
    bias_before = [b.copy() for b in model.backbone.biases]
    hyper = IncrementalHyper(steps=50)
    out, _, _ = run_incremental_session(
        model, stream.sessions[1], emb, snaps, None, hyper, seed=0
    )
    for w0, w1 in zip(theta_before, out.backbone.weights):
        assert np.array_equal(w0, w1)
    for b0, b1 in zip(bias_before, out.backbone.biases):
        assert np.array_equal(b0, b1)


def test_objective_decreases_monotonically_on_pure_quadratic():
    stream, emb = _stream()
    model, snaps = _trained_base(stream, emb)
    hyper = IncrementalHyper(alpha=0.1, beta=1.0, gamma=1.0, lr=0.05, steps=100,
                             include_ce=False, init="imprint")
    _, _, metrics = run_incremental_session(
        model, stream.sessions[1], emb, snaps, None, hyper, seed=0
    )
    trace = metrics["objective_trace"]
    assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))


def test_snapshots_are_immutable_across_sessions():
    stream, emb = _stream(sessions=2)
    model, snaps = _trained_base(stream, emb)
    hyper = IncrementalHyper(steps=30)
    model, snap1, _ = run_incremental_session(
        model, stream.sessions[1], emb, snaps, None, hyper, seed=0
    )
    frozen = {c: v.copy() for c, v in snap1.rows.items()}
    snaps.append(snap1)
    model, snap2, _ = run_incremental_session(
        model, stream.sessions[2], emb, snaps, None, hyper, seed=0
    )
    for c, v in frozen.items():
        assert np.array_equal(snap1.rows[c], v)
    with pytest.raises(ValueError):
        snap1.rows[next(iter(frozen))][0] = 99.0  # rows are write-protected


def test_memory_variant_adds_exactly_prior_class_count():
    stream, emb = _stream(sessions=2)
    model, snaps = _trained_base(stream, emb)
    hyper = IncrementalHyper(steps=5, use_memory=True)
    memory = sample_memory(stream, 1, None, 0)
    assert len(memory) == len(stream.classes_up_to(0))
    model, snap1, _ = run_incremental_session(
        model, stream.sessions[1], emb, snaps, memory, hyper, seed=0
    )
    snaps.append(snap1)
    memory = sample_memory(stream, 2, memory, 0)
    # session 2: support is n_way*k_shot; memory adds |C^(<2)| samples, no more
    assert len(memory) == len(stream.classes_up_to(1))
    run_incremental_session(model, stream.sessions[2], emb, snaps, memory, hyper, seed=0)
    with pytest.raises(ParameterError):
        run_incremental_session(model, stream.sessions[2], emb, snaps, None, hyper, seed=0)


# ---- base training ----

def test_base_training_reaches_pilot_accuracy():
    # separable 20-class synthetic data; threshold from the pilot oracle run
    data, emb = generate_synthetic_dataset(20, 16, 15, 8.0, 0.0, seed=1)
    cfg = StreamConfig(base_classes=20, sessions=0, n_way=1, k_shot=1, seed=1)
    stream = build_session_stream(data, cfg)
    hyper = _fast_base(epochs_phase1=30, epochs_phase2=0, hidden_dims=(32,),
                       feature_dim=16)
    model, log = train_base(stream.sessions[0].support, emb, hyper, seed=0)
    m = evaluate_session(model, stream.sessions[0].query,
                         stream.base_class_ids, stream.base_class_ids, 0)
    assert m.joint_accuracy >= 0.95


def test_base_log_phases_and_lreg_contribution():
    stream, emb = _stream()
    hyper = _fast_base(epochs_phase1=4, epochs_phase2=3)
    model, log = train_base(stream.sessions[0].support, emb, hyper, seed=2)
    assert len(log) == 7
    for rec in log[:4]:
        assert rec["phase"] == 1
        assert rec["loss_lreg"] is None  # unevaluated in phase 1
        assert rec["loss_main"] is not None
    for rec in log[4:]:
        assert rec["phase"] == 2
        assert rec["loss_lreg"] is not None
        assert rec["loss_main"] is None  # dropped per the indicator schedule


def test_base_training_with_zero_phase2_equals_plain_ce_loop():
    stream, emb = _stream()
    hyper = _fast_base(epochs_phase1=5, epochs_phase2=0)
    model, _ = train_base(stream.sessions[0].support, emb, hyper, seed=7)

    # hand-rolled plain-CE loop replaying the exact draw sequence
    support = stream.sessions[0].support
    class_ids = []
    for y in support.labels:
        if y not in class_ids:
            class_ids.append(y)
    rng = SeededRng(7)
    backbone = Backbone.init(support.features.shape[1], hyper.hidden_dims,
                             hyper.feature_dim, rng)
    clf = Classifier(rng.normal((len(class_ids), hyper.feature_dim)) * 0.01,
                     class_ids)
    twin = Model(backbone, clf)
    n = len(support)
    for _ in range(5):
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            xb = support.features[idx]
            yb = [support.labels[i] for i in idx]
            _, grads = loss_main(twin.backbone, twin.classifier, xb, yb, hyper.alpha)
            twin.load_params(sgd_step(twin.params(), grads, hyper.lr))

    for name in model.params().names():
        assert np.array_equal(model.params()[name], twin.params()[name])


def test_train_base_requires_embedding_coverage():
    stream, emb = _stream()
    partial = emb.subtable(emb.class_ids[:3])
    with pytest.raises(MissingClassError):
        train_base(stream.sessions[0].support, partial, _fast_base(), seed=0)


def test_run_sessions_and_full_stream_agree():
    stream, emb = _stream(sessions=2)
    hb = _fast_base()
    hi = IncrementalHyper(steps=20)
    model, _ = train_base(stream.sessions[0].support, emb, hb, seed=5)
    _, metrics_a, _ = run_sessions(model, stream, emb, hi, seed=5)
    _, metrics_b, _, _ = run_full_stream(stream, emb, hb, hi, seed=5)
    for a, b in zip(metrics_a, metrics_b):
        assert a.joint_accuracy == b.joint_accuracy
