"""Text encoders for the CLIP export path.

Any object with `encode(texts) -> (n, dim) float array` works; the real
CLIP encoder loads lazily through transformers and raises
EncoderUnavailableError when the model cannot be obtained (offline box,
bad identifier), so callers can fall back or fail with a clear message.
"""

import hashlib

import numpy as np

from .errors import EncoderUnavailableError, InputError

DEFAULT_CLIP_MODEL = "openai/clip-vit-base-patch32"


class ClipTextEncoder:
    def __init__(self, model_id=DEFAULT_CLIP_MODEL):
        self.model_id = model_id
        try:
            from transformers import CLIPModel, CLIPTokenizer
        except ImportError as exc:
            raise EncoderUnavailableError(
                f"transformers is not installed: {exc}"
            ) from exc
        try:
            self._tokenizer = CLIPTokenizer.from_pretrained(model_id)
            self._model = CLIPModel.from_pretrained(model_id)
        except Exception as exc:
            raise EncoderUnavailableError(
                f"could not load CLIP model {model_id!r}: {exc}"
            ) from exc
        self._model.eval()

    def encode(self, texts):
        import torch

        for t in texts:
            if not t.strip():
                raise InputError("empty prompt text")
        with torch.no_grad():
            tokens = self._tokenizer(list(texts), padding=True, return_tensors="pt")
            feats = self._model.get_text_features(**tokens)
        return feats.double().cpu().numpy()


class HashTextEncoder:
    """Deterministic stand-in encoder: each text maps to a fixed
    pseudo-random unit-scale vector derived from its SHA-256 digest.
    Used for tests and for exercising the pipeline offline."""

    def __init__(self, dim=16):
        if dim < 2:
            raise InputError("dim must be at least 2")
        self.dim = dim
        self.model_id = f"hash-{dim}"

    def encode(self, texts):
        rows = []
        for t in texts:
            if not t.strip():
                raise InputError("empty prompt text")
            digest = hashlib.sha256(t.encode("utf-8")).digest()
            seed = int.from_bytes(digest[:8], "little")
            gen = np.random.Generator(np.random.Philox(key=seed))
            rows.append(gen.standard_normal(self.dim))
        return np.array(rows)


def build_encoder(source, model_id=None, dim=16):
    if source == "clip":
        return ClipTextEncoder(model_id or DEFAULT_CLIP_MODEL)
    if source == "hash":
        return HashTextEncoder(dim)
    raise InputError(f"unknown encoder source {source!r}")
