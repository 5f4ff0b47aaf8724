"""Combining image and text embeddings, and scoring them by cosine."""

from __future__ import annotations

from enum import Enum

import numpy as np

from .encoders import Embedding, Modality
from .errors import DegenerateFusionError, InvalidInputError


class FusionStrategy(Enum):
    SUM = "sum"
    CONCAT = "concat"

    @classmethod
    def parse(cls, value: "str | FusionStrategy") -> "FusionStrategy":
        if isinstance(value, FusionStrategy):
            return value
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise InvalidInputError(f"unknown fusion strategy {value!r}") from None


def _unit(vector: np.ndarray, what: str) -> np.ndarray:
    v = np.asarray(vector, dtype=np.float64)
    norm = float(np.sqrt(np.dot(v, v)))
    if norm < 1e-12:
        raise InvalidInputError(f"{what} is a zero vector")
    return v / norm


def cosine(u: Embedding, v: Embedding) -> float:
    """Cosine similarity in [-1, 1]; errors on dim mismatch or zero vectors."""
    if u.dim != v.dim:
        raise InvalidInputError(f"dimension mismatch: {u.dim} vs {v.dim}")
    a = _unit(u.vector, "first embedding")
    b = _unit(v.vector, "second embedding")
    return float(np.dot(a, b))


def fuse(img: Embedding, txt: Embedding, strategy: FusionStrategy) -> Embedding:
    """Fuse two embeddings into one unit-norm vector.

    Inputs are normalized first so both strategies see comparable halves:
    SUM renormalizes the vector sum (dim preserved); CONCAT concatenates and
    scales by 1/sqrt(2) (dim doubled), which makes its cosine the mean of the
    per-half cosines.
    """
    strategy = FusionStrategy.parse(strategy)
    if img.dim != txt.dim:
        raise InvalidInputError(f"dimension mismatch: {img.dim} vs {txt.dim}")
    a = _unit(img.vector, "image embedding")
    b = _unit(txt.vector, "text embedding")
    model_id = f"{img.model_id}+{txt.model_id}|{strategy.value}"
    if strategy is FusionStrategy.SUM:
        s = a + b
        norm = float(np.sqrt(np.dot(s, s)))
        if norm < 1e-9:
            raise DegenerateFusionError(
                "sum of antipodal embeddings has no direction"
            )
        fused = s / norm
    else:
        fused = np.concatenate([a, b]) / np.sqrt(2.0)
    return Embedding(fused.astype(np.float32), Modality.FUSED, model_id)
