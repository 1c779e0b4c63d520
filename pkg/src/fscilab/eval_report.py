"""Session-wise evaluation (joint accuracy over all classes seen so far),
the delta interference metric, and CSV/markdown table emission shaped like
the multi-session and single-session result tables."""

import json
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ProtocolError

META_PREFIX = "# meta: "


@dataclass
class SessionMetrics:
    session: int
    joint_accuracy: float
    base_accuracy: float | None
    novel_accuracy: float | None
    per_class: dict  # class id -> (correct, total)

    @property
    def total(self):
        return sum(t for _, t in self.per_class.values())

    @property
    def correct(self):
        return sum(c for c, _ in self.per_class.values())


def evaluate_session(model, query, allowed_class_ids, base_class_ids, session=0):
    """Accuracy with the argmax restricted to the classes seen so far;
    ties break toward the lowest classifier row index."""
    allowed = list(allowed_class_ids)
    if not allowed:
        raise ParameterError("allowed class set is empty")
    allowed_set = set(allowed)
    for y in query.labels:
        if y not in allowed_set:
            raise ProtocolError(f"query label {y!r} outside the allowed classes")

    rows = sorted(model.classifier.index(c) for c in allowed)
    row_ids = [model.classifier.class_ids[r] for r in rows]
    feats = model.backbone.forward(query.features)
    logits = feats @ model.classifier.weight[rows].T
    pred = [row_ids[i] for i in np.argmax(logits, axis=1)]

    per_class = {c: [0, 0] for c in allowed}
    for y, p in zip(query.labels, pred):
        per_class[y][1] += 1
        per_class[y][0] += int(p == y)

    base_set = set(base_class_ids)

    def bucket_accuracy(member):
        correct = total = 0
        for c, (good, count) in per_class.items():
            if (c in base_set) == member:
                correct += good
                total += count
        return correct / total if total else None

    total = len(query.labels)
    correct = sum(good for good, _ in per_class.values())
    return SessionMetrics(
        session=session,
        joint_accuracy=correct / total if total else 0.0,
        base_accuracy=bucket_accuracy(True),
        novel_accuracy=bucket_accuracy(False),
        per_class={c: tuple(v) for c, v in per_class.items()},
    )


@dataclass
class DeltaInputs:
    base_individual: float
    base_joint: float
    novel_individual: float
    novel_joint: float

    def __post_init__(self):
        for name, v in vars(self).items():
            if not 0.0 <= v <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1], got {v}")


def delta_metric(d):
    """Average of (joint - individual) over the base and novel buckets, in
    percentage points; negative means joint evaluation degrades accuracy."""
    return (
        (d.base_joint - d.base_individual) + (d.novel_joint - d.novel_individual)
    ) / 2.0 * 100.0


def compute_delta_inputs(model, query, base_class_ids, novel_class_ids, session=0):
    """Joint vs restricted-argmax accuracies feeding the delta metric."""
    from .protocol import Split

    base_set, novel_set = set(base_class_ids), set(novel_class_ids)
    allowed = list(base_class_ids) + list(novel_class_ids)
    joint = evaluate_session(model, query, allowed, base_class_ids, session)

    def restricted(ids, keep):
        rows = [i for i, y in enumerate(query.labels) if y in keep]
        sub = Split(query.features[rows], [query.labels[i] for i in rows])
        return evaluate_session(model, sub, ids, base_class_ids, session)

    base_ind = restricted(list(base_class_ids), base_set)
    novel_ind = restricted(list(novel_class_ids), novel_set)
    if joint.base_accuracy is None or joint.novel_accuracy is None:
        raise ParameterError("delta needs both base and novel query samples")
    return DeltaInputs(
        base_individual=base_ind.joint_accuracy,
        base_joint=joint.base_accuracy,
        novel_individual=novel_ind.joint_accuracy,
        novel_joint=joint.novel_accuracy,
    )


def _fmt_pct(x):
    return f"{100.0 * x:.2f}"


def _normalize_runs(runs):
    if isinstance(runs, dict):
        items = list(runs.items())
    else:
        items = [("ours", list(runs))]
    if not items or any(not m for _, m in items):
        raise ParameterError("report needs at least one run with metrics")
    lengths = {len(m) for _, m in items}
    if len(lengths) != 1:
        raise ParameterError("all runs must cover the same sessions")
    return items


def emit_report(runs, fmt="markdown", metadata=None):
    """Multi-session table: one row per run, one column per session, plus an
    improvement column (final-session difference against the last row)."""
    items = _normalize_runs(runs)
    if fmt not in ("csv", "markdown"):
        raise ParameterError(f"unknown format {fmt!r}")
    n_sessions = len(items[0][1])
    ref_final = items[-1][1][-1].joint_accuracy
    meta = dict(metadata or {})
    meta["full_precision"] = {
        name: [m.joint_accuracy for m in ms] for name, ms in items
    }

    header = ["method"] + [f"session_{t}" for t in range(n_sessions)] + ["improvement"]
    data_rows = []
    for i, (name, ms) in enumerate(items):
        cells = [_fmt_pct(m.joint_accuracy) for m in ms]
        if i == len(items) - 1:
            improvement = ""
        else:
            improvement = f"{100.0 * (ref_final - ms[-1].joint_accuracy):+.2f}"
        data_rows.append([name] + cells + [improvement])

    if fmt == "csv":
        lines = [META_PREFIX + json.dumps(meta, sort_keys=True)]
        lines.append(",".join(header))
        lines.extend(",".join(row) for row in data_rows)
        return "\n".join(lines) + "\n"

    md_header = ["Method/Session No."] + [str(t) for t in range(n_sessions)] + ["Improvement"]
    lines = ["---", json.dumps(meta, sort_keys=True), "---", ""]
    lines.append("| " + " | ".join(md_header) + " |")
    lines.append("|" + "---|" * len(md_header))
    for row in data_rows:
        cells = row[:-1] + [row[-1] if row[-1] else "---"]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def emit_single_session_report(rows, fmt="markdown", metadata=None):
    """Single-session table with `Accuracy` and `Delta` columns; accuracy is
    rendered as mean +/- std over seeds in percentage points."""
    if not rows:
        raise ParameterError("report needs at least one row")
    if fmt not in ("csv", "markdown"):
        raise ParameterError(f"unknown format {fmt!r}")
    meta = dict(metadata or {})
    meta["full_precision"] = {
        name: {"accuracy_mean": m, "accuracy_std": s, "delta": d}
        for name, m, s, d in rows
    }
    if fmt == "csv":
        lines = [META_PREFIX + json.dumps(meta, sort_keys=True)]
        lines.append("method,accuracy_mean,accuracy_std,delta")
        for name, m, s, d in rows:
            lines.append(f"{name},{_fmt_pct(m)},{_fmt_pct(s)},{d:.2f}")
        return "\n".join(lines) + "\n"
    lines = ["---", json.dumps(meta, sort_keys=True), "---", ""]
    lines.append("| Method | Accuracy | Δ |")
    lines.append("|---|---|---|")
    for name, m, s, d in rows:
        lines.append(f"| {name} | {_fmt_pct(m)} ± {_fmt_pct(s)} | {d:.2f}% |")
    return "\n".join(lines) + "\n"


def parse_csv_report(text):
    """Parse a CSV report back into (metadata, header, rows of strings)."""
    meta = {}
    lines = [ln for ln in text.splitlines() if ln]
    body = []
    for ln in lines:
        if ln.startswith(META_PREFIX):
            meta = json.loads(ln[len(META_PREFIX) :])
        else:
            body.append(ln)
    if not body:
        raise ParameterError("empty CSV report")
    header = body[0].split(",")
    rows = [ln.split(",") for ln in body[1:]]
    return meta, header, rows
