"""Token-level embedding backends: hashed random projection and precomputed files."""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import arrayio
from .types import EmbeddingMatrix, Modality, TokenSequence

PRECOMPUTED_KIND = "precomputed_file"
HASHED_KIND = "hashed_projection"


class BackendMissingEntry(KeyError):
    """A precomputed embedding file has no entry for the requested key."""

    def __init__(self, key: str):
        self.key = key
        super().__init__(f"precomputed embedding file has no entry for {key!r}")


@dataclass
class EmbedderBackend:
    kind: str
    dim: int
    seed: int = 0
    source_path: str | None = None
    table: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in (HASHED_KIND, PRECOMPUTED_KIND):
            raise ValueError(f"unknown embedder kind: {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    @classmethod
    def hashed_projection(cls, dim: int, seed: int) -> "EmbedderBackend":
        return cls(kind=HASHED_KIND, dim=dim, seed=seed)

    @classmethod
    def precomputed_file(cls, path) -> "EmbedderBackend":
        arrays, meta = arrayio.load_arrays(path)
        dim = int(meta.get("dim", 0))
        if dim < 1:
            raise ValueError(f"{path}: precomputed file missing positive 'dim' in meta")
        for key, arr in arrays.items():
            if arr.ndim != 2 or arr.shape[1] != dim:
                raise ValueError(f"{path}: entry {key!r} has shape {arr.shape}, expected (*, {dim})")
        return cls(kind=PRECOMPUTED_KIND, dim=dim, source_path=str(path), table=arrays)


def save_precomputed(path, entries: dict, dim: int) -> None:
    """Persist sample-keyed embedding matrices for the precomputed_file backend.

    Keys follow the convention "<sample_id>/<modality>".
    """
    for key, arr in entries.items():
        arr = np.asarray(arr)
        if arr.ndim != 2 or arr.shape[1] != dim:
            raise ValueError(f"entry {key!r} has shape {arr.shape}, expected (*, {dim})")
    arrayio.save_arrays(path, {k: np.asarray(v, dtype=np.float64) for k, v in entries.items()},
                        meta={"dim": dim, "format": "secpatch-embeddings"})


@lru_cache(maxsize=1 << 16)
def _token_row(seed: int, dim: int, token_id: int) -> np.ndarray:
    """Reproducible pseudo-random unit vector for one token id."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, token_id]))
    row = rng.standard_normal(dim)
    row /= np.linalg.norm(row)
    row.flags.writeable = False
    return row


def _embed(tokens: TokenSequence, backend: EmbedderBackend, modality: Modality,
           sample_id: str | None) -> EmbeddingMatrix:
    if tokens.length == 0:
        # sentinel zero row keeps downstream shapes valid for missing modalities
        return EmbeddingMatrix(np.zeros((1, backend.dim)), modality)
    if backend.kind == HASHED_KIND:
        rows = np.stack([_token_row(backend.seed, backend.dim, t) for t in tokens.tokens])
        return EmbeddingMatrix(rows, modality)
    if sample_id is None:
        raise ValueError("precomputed_file backend requires a sample_id")
    key = f"{sample_id}/{modality.value}"
    if key not in backend.table:
        raise BackendMissingEntry(key)
    return EmbeddingMatrix(backend.table[key], modality)


def embed_patch(tokens: TokenSequence, backend: EmbedderBackend,
                sample_id: str | None = None) -> EmbeddingMatrix:
    """Embed a patch token sequence to shape (seq_len, dim); empty input yields one zero row."""
    return _embed(tokens, backend, Modality.PATCH, sample_id)


def embed_text(tokens: TokenSequence, backend: EmbedderBackend, modality: Modality,
               sample_id: str | None = None) -> EmbeddingMatrix:
    """Embed a text token sequence under the requested text modality tag."""
    if modality is Modality.PATCH:
        raise ValueError("embed_text expects a text modality, got patch")
    return _embed(tokens, backend, modality, sample_id)
