"""Shared domain types: patch samples, token sequences, embeddings, hyperparameters."""

import json
from dataclasses import dataclass, fields
from enum import Enum

import numpy as np


class Label(Enum):
    SECURITY = "security"
    NON_SECURITY = "non-security"


class Modality(Enum):
    PATCH = "patch"
    EXPLANATION = "explanation"
    DESCRIPTION = "description"
    INSTRUCTION = "instruction"




class LengthMismatch(ValueError):
    """Two sequences that must have equal length do not."""


def _frozen_array(values, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-D array, got {arr.ndim}-D")
    if not np.all(np.isfinite(arr)):
        raise ValueError("array entries must be finite")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PatchSample:
    """One commit: unified diff text, optional texts, and a binary security label."""

    id: str
    diff_text: str
    label: Label
    description: str | None = None
    explanation: str | None = None
    source: str = ""

    def __post_init__(self):
        if not self.diff_text:
            raise ValueError(f"sample {self.id!r}: diff_text must be non-empty")
        if not isinstance(self.label, Label):
            raise ValueError(f"sample {self.id!r}: label must be a Label, got {self.label!r}")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "diff": self.diff_text,
            "message": self.description,
            "explanation": self.explanation,
            "label": self.label.value,
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "PatchSample":
        return cls(
            id=str(record["id"]),
            diff_text=record["diff"],
            label=Label(record["label"]),
            description=record.get("message"),
            explanation=record.get("explanation"),
            source=record.get("source", "") or "",
        )


@dataclass(frozen=True)
class TokenSequence:
    """Integer token ids, bounded by the configured input budget."""

    tokens: tuple[int, ...]
    max_tokens: int = 512

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if len(self.tokens) > self.max_tokens:
            raise ValueError(f"sequence length {len(self.tokens)} exceeds max_tokens {self.max_tokens}")

    @property
    def length(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Token-level representation of one modality, shape (seq_len, dim)."""

    values: np.ndarray
    modality: Modality

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values, 2))
        if not isinstance(self.modality, Modality):
            raise ValueError(f"modality must be a Modality, got {self.modality!r}")

    @property
    def seq_len(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FusedEmbedding:
    """Fixed-length fused vector for one sample (three pooled components)."""

    values: np.ndarray
    sample_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values, 1))

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class HyperParams:
    """Training and architecture settings; invalid combinations are rejected."""

    epochs: int
    learning_rate: float
    weight_decay: float
    batch_size_train: int
    batch_size_eval: int
    alpha: float
    temperature: float
    dropout: float
    margin: float
    num_heads: int
    dim: int
    max_tokens: int
    seed: int

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.num_heads < 1:
            raise ValueError("num_heads must be >= 1")
        if self.dim % self.num_heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by num_heads {self.num_heads}")
        if self.batch_size_train < 1 or self.batch_size_eval < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, record: dict) -> "HyperParams":
        names = {f.name for f in fields(cls)}
        unknown = set(record) - names
        if unknown:
            raise ValueError(f"unknown hyperparameter keys: {sorted(unknown)}")
        missing = names - set(record)
        if missing:
            raise ValueError(f"missing hyperparameter keys: {sorted(missing)}")
        return cls(**record)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "HyperParams":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def default_hyperparams() -> HyperParams:
    """Published training settings, plus documented defaults for the open ones.

    margin 0.5, num_heads 4, dim 256, max_tokens 512 and seed 0 are artifact
    defaults; everything else follows the published configuration.
    """
    return HyperParams(
        epochs=20,
        learning_rate=1e-5,
        weight_decay=0.01,
        batch_size_train=16,
        batch_size_eval=64,
        alpha=0.5,
        temperature=0.1,
        dropout=0.5,
        margin=0.5,
        num_heads=4,
        dim=256,
        max_tokens=512,
        seed=0,
    )
