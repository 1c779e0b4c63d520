"""Offline class-label embedding exporter for the fscil-emb v1 format."""

from .encoders import ClipTextEncoder, HashTextEncoder, build_encoder
from .errors import EncoderUnavailableError, ExportError, FormatError, InputError
from .export import (
    DEFAULT_TEMPLATES,
    ExportManifest,
    PromptTemplateSet,
    export_clip_embeddings,
    export_word_embeddings,
)
from .wordvecs import WordVectorTable, load_word_vectors
from .writer import read_embedding_file, write_embedding_file

__version__ = "0.1.0"
