"""Export operations: prompt-ensembled text-encoder embeddings and averaged
word vectors, both emitted in the shared `fscil-emb v1` format."""

from dataclasses import dataclass, field

import numpy as np

from .encoders import build_encoder
from .errors import InputError
from .wordvecs import load_word_vectors
from .writer import write_embedding_file

PLACEHOLDER = "{class_label}"

# the two-prompt ensemble used for the default export
DEFAULT_TEMPLATES = (
    "A photo of {class_label}",
    "A good photo of {class_label}",
)


@dataclass(frozen=True)
class PromptTemplateSet:
    templates: tuple

    def __post_init__(self):
        object.__setattr__(self, "templates", tuple(self.templates))
        if not self.templates:
            raise InputError("at least one prompt template is required")
        for t in self.templates:
            if PLACEHOLDER not in t:
                raise InputError(f"template {t!r} lacks the {PLACEHOLDER} placeholder")

    def fill(self, label):
        # dataset labels use underscores; prompts read naturally with spaces
        text = label.replace("_", " ")
        return [t.replace(PLACEHOLDER, text) for t in self.templates]

    def __len__(self):
        return len(self.templates)


@dataclass(frozen=True)
class ExportManifest:
    source: str  # clip | glove | fasttext (| hash, for offline runs)
    model_id: str
    labels: tuple
    out_path: str

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.labels:
            raise InputError("manifest has no labels")
        if len(set(self.labels)) != len(self.labels):
            raise InputError("manifest labels must be unique")


def export_clip_embeddings(manifest, templates=None, encoder=None):
    """Per class: encode every filled template and average the encoder
    outputs elementwise. Returns the written (labels, vectors)."""
    templates = templates or PromptTemplateSet(DEFAULT_TEMPLATES)
    if encoder is None:
        encoder = build_encoder(manifest.source, manifest.model_id)
    rows = []
    for label in manifest.labels:
        prompts = templates.fill(label)
        encoded = np.asarray(encoder.encode(prompts), dtype=np.float64)
        if encoded.ndim != 2 or encoded.shape[0] != len(prompts):
            raise InputError(f"encoder returned a bad shape for {label!r}")
        rows.append(encoded.mean(axis=0))
    vectors = np.array(rows)
    write_embedding_file(manifest.out_path, list(manifest.labels), vectors)
    return list(manifest.labels), vectors


def export_word_embeddings(manifest, table=None):
    """Single-word labels map to their vector; multi-word labels average
    their in-vocabulary word vectors."""
    if table is None:
        table = load_word_vectors(manifest.model_id)
    vectors = np.array([table.label_vector(label) for label in manifest.labels])
    write_embedding_file(manifest.out_path, list(manifest.labels), vectors)
    return list(manifest.labels), vectors
