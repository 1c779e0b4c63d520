"""`fscil-export export` command line.

Exit codes: 0 success, 1 runtime/input error, 2 usage error.
"""

import argparse
import sys

from .encoders import DEFAULT_CLIP_MODEL
from .errors import ExportError
from .export import (
    DEFAULT_TEMPLATES,
    ExportManifest,
    PromptTemplateSet,
    export_clip_embeddings,
    export_word_embeddings,
)


def _read_lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]


def build_parser():
    parser = argparse.ArgumentParser(prog="fscil-export")
    sub = parser.add_subparsers(dest="command", required=True)
    exp = sub.add_parser("export", help="write a fscil-emb v1 embedding file")
    exp.add_argument("--source", required=True,
                     choices=("clip", "glove", "fasttext", "hash"))
    exp.add_argument("--labels", required=True, help="file with one label per line")
    exp.add_argument("--out", required=True, help="output embedding path")
    exp.add_argument("--model", default=None,
                     help="CLIP model id, or the word-vector file for "
                          "glove/fasttext sources")
    exp.add_argument("--templates", default=None,
                     help="file with one prompt template per line")
    return parser


def run_export(args):
    labels = _read_lines(args.labels)
    if args.source in ("glove", "fasttext"):
        if not args.model:
            raise ExportError("--model must point to a word-vector file")
        manifest = ExportManifest(args.source, args.model, labels, args.out)
        export_word_embeddings(manifest)
    else:
        model_id = args.model or DEFAULT_CLIP_MODEL
        manifest = ExportManifest(args.source, model_id, labels, args.out)
        templates = None
        if args.templates:
            templates = PromptTemplateSet(tuple(_read_lines(args.templates)))
        export_clip_embeddings(manifest, templates)
    print(f"wrote {args.out} ({len(labels)} classes, source={args.source})")
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    try:
        return run_export(args)
    except (ExportError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def console_main():
    sys.exit(main())


if __name__ == "__main__":
    console_main()
