"""Word-vector tables in the GloVe/fastText text layouts.

GloVe files have no header; fastText `.vec` files start with a
`<count> <dim>` line. Both store one `word v1 ... vd` row per line.
"""

import logging

import numpy as np

from .errors import FormatError, InputError

log = logging.getLogger(__name__)


class WordVectorTable:
    def __init__(self, vectors):
        if not vectors:
            raise FormatError("word-vector table is empty")
        dims = {len(v) for v in vectors.values()}
        if len(dims) != 1:
            raise FormatError(f"inconsistent vector widths: {sorted(dims)}")
        self.dim = dims.pop()
        self.vectors = {w: np.asarray(v, dtype=np.float64) for w, v in vectors.items()}

    def __contains__(self, word):
        return word in self.vectors

    def __len__(self):
        return len(self.vectors)

    def vector(self, word):
        return self.vectors[word]

    def label_vector(self, label):
        """Mean of the per-word vectors of a (possibly multi-word) label;
        out-of-vocabulary words are skipped with a warning."""
        words = label.replace("_", " ").split()
        if not words:
            raise InputError("label has no words")
        known = [w for w in words if w in self.vectors]
        for w in words:
            if w not in self.vectors:
                log.warning("label %r: word %r is out of vocabulary", label, w)
        if not known:
            raise InputError(f"label {label!r} is fully out of vocabulary")
        return np.mean([self.vectors[w] for w in known], axis=0)


def _looks_like_header(fields):
    if len(fields) != 2:
        return False
    try:
        int(fields[0]), int(fields[1])
    except ValueError:
        return False
    return True


def load_word_vectors(path):
    """Parse either layout; the fastText count/dim header is optional."""
    vectors = {}
    with open(path, "r", encoding="utf-8") as fh:
        first = True
        for lineno, line in enumerate(fh, start=1):
            fields = line.rstrip("\n").split(" ")
            fields = [f for f in fields if f]
            if not fields:
                continue
            if first and _looks_like_header(fields):
                first = False
                continue
            first = False
            word, values = fields[0], fields[1:]
            if not values:
                raise FormatError(f"{path}:{lineno}: word without values")
            try:
                vec = [float(v) for v in values]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: unparseable float") from None
            if word in vectors:
                raise FormatError(f"{path}:{lineno}: duplicate word {word!r}")
            vectors[word] = vec
    return WordVectorTable(vectors)
