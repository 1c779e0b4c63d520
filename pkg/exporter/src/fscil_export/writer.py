"""The shared `fscil-emb v1` text format: UTF-8, LF endings, a header line
`fscil-emb v1 <num_classes> <dim>`, then one `<label>\\t<floats>` row per
class with floats in scientific notation at 17 significant digits."""

import os
import tempfile

import numpy as np

from .errors import FormatError

HEADER_MAGIC = "fscil-emb"
HEADER_VERSION = "v1"


def format_float(x):
    return f"{x:.16e}"


def write_embedding_file(path, labels, vectors):
    """Atomic write (temp file + rename) of an embedding table."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] != len(labels):
        raise FormatError("vectors must be (num_labels, dim)")
    if len(set(labels)) != len(labels):
        raise FormatError("labels must be unique")
    if not np.all(np.isfinite(vectors)):
        raise FormatError("vectors must be finite")
    for label in labels:
        if "\t" in label or "\n" in label or not label:
            raise FormatError(f"label {label!r} is empty or contains a tab/newline")

    out_dir = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(prefix=".emb-", dir=out_dir, text=False)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(
                f"{HEADER_MAGIC} {HEADER_VERSION} {len(labels)} {vectors.shape[1]}\n"
            )
            for label, row in zip(labels, vectors):
                fh.write(label + "\t" + " ".join(format_float(v) for v in row) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_embedding_file(path):
    """Validating reader used by the exporter's own round-trip checks."""
    with open(path, "r", encoding="utf-8", newline="\n") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError(f"{path}: empty file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != HEADER_MAGIC or head[1] != HEADER_VERSION:
        raise FormatError(f"{path}: bad header {lines[0]!r}")
    count, dim = int(head[2]), int(head[3])
    if len(lines) - 1 != count:
        raise FormatError(f"{path}: expected {count} rows, found {len(lines) - 1}")
    labels, rows = [], []
    for line in lines[1:]:
        label, sep, rest = line.partition("\t")
        if not sep or not label:
            raise FormatError(f"{path}: row without a label/tab")
        fields = rest.split()
        if len(fields) != dim:
            raise FormatError(f"{path}: row width {len(fields)} != {dim}")
        labels.append(label)
        rows.append([float(f) for f in fields])
    return labels, np.array(rows, dtype=np.float64).reshape(count, dim)
