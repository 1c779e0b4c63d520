"""Command-line entry point: data generation, base training, incremental
runs, ablation sweeps, the gradient-check suite, and report emission.

Exit codes: 0 success, 1 config/runtime error, 2 usage error.
"""

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import ConfigError, FscilError, ParameterError
from .eval_report import (
    SessionMetrics,
    compute_delta_inputs,
    delta_metric,
    emit_report,
    emit_single_session_report,
    parse_csv_report,
)
from .gradsuite import TOLERANCE, run_gradient_suite
from .model import HyperBase, load_model, save_model
from .protocol import (
    StreamConfig,
    build_session_stream,
    generate_synthetic_dataset,
    load_dataset,
    save_dataset,
)
from .semantic_space import SimilarityMode, load_embedding_table, save_embedding_table
from .trainer import IncrementalHyper, run_full_stream, run_sessions, train_base

ABLATION_AXES = ("k", "similarity", "embeddings", "lang_reg")


@dataclass
class RunConfig:
    paths: dict
    stream: StreamConfig | None
    synth: dict | None
    hyper_base: HyperBase
    hyper_incremental: IncrementalHyper
    ablation: dict
    seeds: list
    resolved: dict  # the raw document after flag overrides, for hashing

    @property
    def out_dir(self):
        return Path(self.paths.get("out_dir", "runs"))

    def config_hash(self):
        canonical = json.dumps(self.resolved, sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]

    def metadata(self):
        return {
            "config_hash": self.config_hash(),
            "seeds": list(self.seeds),
            "hyper_base": _jsonable(asdict(self.hyper_base)),
            "hyper_incremental": asdict(self.hyper_incremental),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, SimilarityMode):
        return obj.value
    return obj


def load_run_config(path, overrides=None):
    """Read a JSON config, apply flag overrides, and validate sections."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    doc = dict(doc)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "seed":
            doc["seeds"] = [value]
        elif key == "out":
            doc.setdefault("paths", {})
            doc["paths"] = dict(doc["paths"], out_dir=value)
        else:
            doc[key] = value

    seeds = doc.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(
        isinstance(s, int) for s in seeds
    ):
        raise ConfigError("seeds must be a nonempty list of integers")
    try:
        stream = (
            StreamConfig.from_json(doc["stream"]) if "stream" in doc else None
        )
        hyper_base = HyperBase(**doc.get("hyper_base", {}))
        hyper_inc = IncrementalHyper(**doc.get("hyper_incremental", {}))
    except (TypeError, ParameterError) as exc:
        raise ConfigError(f"bad hyperparameter section: {exc}") from None
    return RunConfig(
        paths=dict(doc.get("paths", {})),
        stream=stream,
        synth=doc.get("synth"),
        hyper_base=hyper_base,
        hyper_incremental=hyper_inc,
        ablation=dict(doc.get("ablation", {})),
        seeds=list(seeds),
        resolved=doc,
    )


def _require_paths(cfg, *keys):
    for key in keys:
        if key not in cfg.paths:
            raise ConfigError(f"config paths section is missing {key!r}")
        if not Path(cfg.paths[key]).exists():
            raise ConfigError(f"path for {key!r} does not exist: {cfg.paths[key]}")


def _load_inputs(cfg):
    _require_paths(cfg, "dataset", "embeddings")
    data = load_dataset(cfg.paths["dataset"])
    emb = load_embedding_table(cfg.paths["embeddings"])
    if cfg.stream is None:
        raise ConfigError("config is missing the stream section")
    return data, emb, build_session_stream(data, cfg.stream)


def _thread_count(n_jobs):
    # GIL contention makes threaded seeds slower for these small numpy ops,
    # so parallelism is strictly opt-in via FSCIL_THREADS
    cap = os.environ.get("FSCIL_THREADS")
    if cap is None:
        return 1
    try:
        cap = int(cap)
    except ValueError:
        raise ConfigError("FSCIL_THREADS must be an integer") from None
    if cap < 1:
        raise ConfigError("FSCIL_THREADS must be at least 1")
    return min(cap, n_jobs)


def cmd_gen_data(cfg):
    if cfg.synth is None:
        raise ConfigError("gen-data needs a synth section in the config")
    _require_keys(cfg.synth, "num_classes", "feature_dim", "samples_per_class",
                  "class_spread", "semantic_noise", "seed")
    for key in ("dataset", "embeddings"):
        if key not in cfg.paths:
            raise ConfigError(f"config paths section is missing {key!r}")
    data, emb = generate_synthetic_dataset(**cfg.synth)
    for key in ("dataset", "embeddings"):
        Path(cfg.paths[key]).parent.mkdir(parents=True, exist_ok=True)
    save_dataset(data, cfg.paths["dataset"])
    save_embedding_table(emb, cfg.paths["embeddings"])
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config_hash": cfg.config_hash(),
        "dataset": cfg.paths["dataset"],
        "embeddings": cfg.paths["embeddings"],
        "synth": cfg.synth,
    }
    _write_text(cfg.out_dir / "gen_manifest.json",
                json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    print(f"wrote {cfg.paths['dataset']} ({len(data)} samples) and "
          f"{cfg.paths['embeddings']} ({len(emb)} classes)")
    return 0


def _require_keys(section, *keys):
    missing = [k for k in keys if k not in section]
    if missing:
        raise ConfigError(f"synth section is missing {missing}")


def cmd_train_base(cfg):
    data, emb, stream = _load_inputs(cfg)
    seed = cfg.seeds[0]
    model, log = train_base(stream.sessions[0].support, emb, cfg.hyper_base, seed)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    meta = dict(cfg.metadata(), seed=seed, stream=cfg.stream.to_dict())
    save_model(model, cfg.out_dir / "base.ckpt", meta)
    _write_text(
        cfg.out_dir / "train_log.ndjson",
        "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in log),
    )
    from .eval_report import evaluate_session

    base = stream.sessions[0]
    metrics = evaluate_session(
        model, base.query, stream.base_class_ids, stream.base_class_ids, 0
    )
    _write_text(
        cfg.out_dir / "base_metrics.csv",
        emit_report([metrics], fmt="csv", metadata=meta),
    )
    print(f"base accuracy {metrics.joint_accuracy:.4f}; "
          f"checkpoint at {cfg.out_dir / 'base.ckpt'}")
    return 0


def cmd_run_incremental(cfg):
    data, emb, stream = _load_inputs(cfg)
    ckpt = Path(cfg.paths.get("checkpoint", cfg.out_dir / "base.ckpt"))
    if not ckpt.exists():
        raise ConfigError(f"checkpoint not found: {ckpt}")
    model, ckpt_meta = load_model(ckpt)
    if tuple(model.classifier.class_ids) != stream.base_class_ids:
        raise ConfigError("checkpoint classes do not match the configured stream")
    seed = cfg.seeds[0]
    model, session_metrics, _ = run_sessions(model, stream, emb, cfg.hyper_incremental, seed)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    meta = dict(cfg.metadata(), seed=seed, base_checkpoint_meta=ckpt_meta)
    _write_text(cfg.out_dir / "metrics.csv",
                emit_report(session_metrics, fmt="csv", metadata=meta))
    _write_text(cfg.out_dir / "report.md",
                emit_report(session_metrics, fmt="markdown", metadata=meta))
    save_model(model, cfg.out_dir / "final.ckpt", meta)
    final = session_metrics[-1].joint_accuracy
    print(f"final-session joint accuracy {final:.4f}; metrics in {cfg.out_dir}")
    return 0


def cmd_evaluate(cfg):
    data, emb, stream = _load_inputs(cfg)
    ckpt = Path(cfg.paths.get("checkpoint", cfg.out_dir / "final.ckpt"))
    if not ckpt.exists():
        raise ConfigError(f"checkpoint not found: {ckpt}")
    model, _ = load_model(ckpt)
    n_known = len(model.classifier.class_ids)
    base_n = len(stream.base_class_ids)
    if (n_known - base_n) % cfg.stream.n_way != 0:
        raise ConfigError("checkpoint class count does not fit the stream shape")
    t = (n_known - base_n) // cfg.stream.n_way
    if t >= len(stream.sessions):
        raise ConfigError("checkpoint has more sessions than the stream")
    session = stream.sessions[t]
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    meta = dict(cfg.metadata(), session=t)
    from .eval_report import evaluate_session

    if t == 0:
        metrics = evaluate_session(
            model, session.query, stream.base_class_ids, stream.base_class_ids, 0
        )
        text = emit_report([metrics], fmt="csv", metadata=meta)
        _write_text(cfg.out_dir / "eval_metrics.csv", text)
        print(f"session 0 accuracy {metrics.joint_accuracy:.4f}")
        return 0
    novel = [c for c in stream.classes_up_to(t) if c not in set(stream.base_class_ids)]
    d = compute_delta_inputs(model, session.query, stream.base_class_ids, novel, t)
    metrics = evaluate_session(
        model, session.query, stream.classes_up_to(t), stream.base_class_ids, t
    )
    delta = delta_metric(d)
    rows = [("ours", metrics.joint_accuracy, 0.0, delta)]
    _write_text(cfg.out_dir / "eval_metrics.csv",
                emit_single_session_report(rows, fmt="csv", metadata=meta))
    _write_text(cfg.out_dir / "eval_report.md",
                emit_single_session_report(rows, fmt="markdown", metadata=meta))
    print(f"session {t} accuracy {metrics.joint_accuracy:.4f}, delta {delta:.2f}%")
    return 0


def _ablation_variant(cfg, axis, value):
    """A (label, hyper_base, embeddings_path) triple for one axis value."""
    hb = HyperBase(**_jsonable(asdict(cfg.hyper_base)))
    emb_path = cfg.paths["embeddings"]
    if axis == "k":
        hb.k = int(value)
        return f"K={value}", hb, emb_path
    if axis == "similarity":
        hb.similarity_mode = SimilarityMode(value)
        return str(SimilarityMode(value).value), hb, emb_path
    if axis == "lang_reg":
        if value not in ("on", "off"):
            raise ConfigError("lang_reg axis takes values on/off")
        if value == "off":
            # equal epoch budget: fold phase 2 back into plain main-loss epochs
            hb.epochs_phase1 += hb.epochs_phase2
            hb.epochs_phase2 = 0
        return f"lang_reg={value}", hb, emb_path
    if axis == "embeddings":
        if not Path(value).exists():
            raise ConfigError(f"embedding file does not exist: {value}")
        return Path(value).stem, hb, value
    raise ConfigError(f"unknown ablation axis {axis!r}; pick from {ABLATION_AXES}")


def cmd_ablate(cfg, axis, values):
    axis = axis or cfg.ablation.get("axis")
    values = values if values is not None else cfg.ablation.get("values")
    if not axis or not values:
        raise ConfigError("ablate needs an axis and a list of values")
    data, _, stream = _load_inputs(cfg)

    variants = [_ablation_variant(cfg, axis, v) for v in values]

    def one_run(args):
        hb, emb_path, seed = args
        emb = load_embedding_table(emb_path)
        _, metrics, _, _ = run_full_stream(stream, emb, hb, cfg.hyper_incremental, seed)
        return [m.joint_accuracy for m in metrics]

    runs = {}
    for label, hb, emb_path in variants:
        jobs = [(hb, emb_path, seed) for seed in cfg.seeds]
        workers = _thread_count(len(jobs))
        if workers == 1:
            per_seed = [one_run(job) for job in jobs]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                per_seed = list(pool.map(one_run, jobs))
        means = [float(sum(col) / len(col)) for col in zip(*per_seed)]
        runs[label] = [
            SessionMetrics(t, acc, None, None, {}) for t, acc in enumerate(means)
        ]

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    meta = dict(cfg.metadata(), axis=axis, values=list(values))
    _write_text(cfg.out_dir / f"ablate_{axis}.csv",
                emit_report(runs, fmt="csv", metadata=meta))
    _write_text(cfg.out_dir / f"ablate_{axis}.md",
                emit_report(runs, fmt="markdown", metadata=meta))
    print(f"ablation over {axis} written to {cfg.out_dir / f'ablate_{axis}.csv'}")
    return 0


def cmd_gradcheck():
    results = run_gradient_suite()
    failed = False
    for name, seed, err in results:
        status = "PASS" if err < TOLERANCE else "FAIL"
        failed = failed or status == "FAIL"
        print(f"{status} {name} seed={seed} max_rel_err={err:.3e}")
    print(f"{'FAIL' if failed else 'PASS'}: {len(results)} gradient checks")
    return 1 if failed else 0


def cmd_report(input_path, fmt, out):
    try:
        text = Path(input_path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"report input not found: {input_path}") from None
    meta, header, rows = parse_csv_report(text)
    if header and header[0] == "method" and header[-1] == "improvement":
        sessions = len(header) - 2
        runs = {}
        for row in rows:
            runs[row[0]] = [
                SessionMetrics(t, float(row[1 + t]) / 100.0, None, None, {})
                for t in range(sessions)
            ]
        doc = emit_report(runs, fmt=fmt, metadata=meta)
    elif header == ["method", "accuracy_mean", "accuracy_std", "delta"]:
        tuples = [
            (r[0], float(r[1]) / 100.0, float(r[2]) / 100.0, float(r[3]))
            for r in rows
        ]
        doc = emit_single_session_report(tuples, fmt=fmt, metadata=meta)
    else:
        raise ConfigError(f"unrecognized report header: {header}")
    if out:
        suffix = "md" if fmt == "markdown" else "csv"
        target = Path(out) / f"report.{suffix}"
        target.parent.mkdir(parents=True, exist_ok=True)
        _write_text(target, doc)
        print(f"wrote {target}")
    else:
        print(doc, end="")
    return 0


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fscilab",
        description="Few-shot class-incremental learning laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, needs_config=True, **kwargs):
        p = sub.add_parser(name, **kwargs)
        if needs_config:
            p.add_argument("--config", required=True, help="JSON run config")
            p.add_argument("--seed", type=int, default=None)
            p.add_argument("--out", default=None, help="output directory")
        return p

    add("gen-data", help="write a synthetic dataset and embedding table")
    add("train-base", help="train the base model and save a checkpoint")
    add("run-incremental", help="run all incremental sessions from a checkpoint")
    add("evaluate", help="evaluate a checkpoint on its session's query split")
    ab = add("ablate", help="sweep one ablation axis across the seed list")
    ab.add_argument("--axis", choices=ABLATION_AXES, default=None)
    ab.add_argument("--values", default=None, help="comma-separated axis values")
    sub.add_parser("gradcheck", help="run the full gradient-check suite")
    rep = sub.add_parser("report", help="re-emit a metrics CSV")
    rep.add_argument("input", help="metrics CSV produced by another command")
    rep.add_argument("--format", choices=("csv", "markdown"), default="markdown")
    rep.add_argument("--out", default=None)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    try:
        if args.command == "gradcheck":
            return cmd_gradcheck()
        if args.command == "report":
            return cmd_report(args.input, args.format, args.out)
        overrides = {"seed": args.seed, "out": args.out}
        cfg = load_run_config(args.config, overrides)
        if args.command == "gen-data":
            return cmd_gen_data(cfg)
        if args.command == "train-base":
            return cmd_train_base(cfg)
        if args.command == "run-incremental":
            return cmd_run_incremental(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "ablate":
            values = args.values.split(",") if args.values else None
            return cmd_ablate(cfg, args.axis, values)
        raise ConfigError(f"unknown command {args.command!r}")
    except FscilError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def console_main():
    sys.exit(main())


if __name__ == "__main__":
    console_main()
