"""Dataset loading from JSONL, stratified splitting, and tokenization to the input budget."""

import hashlib
import json
import math
import re
from dataclasses import dataclass

from .seeding import substream
from .types import Label, PatchSample, TokenSequence

_LABEL_VALUES = {label.value: label for label in Label}


class SchemaError(ValueError):
    """A dataset record is missing a field or carries an invalid value."""

    def __init__(self, index: int, field: str, message: str | None = None):
        self.index = index
        self.field = field
        super().__init__(message or f"record {index}: bad or missing field {field!r}")


class EmptyClass(ValueError):
    """Stratified splitting requested but one class has zero samples."""


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[PatchSample, ...]
    validation: tuple[PatchSample, ...]
    test: tuple[PatchSample, ...]
    seed: int

    def __post_init__(self):
        ids = [s.id for part in (self.train, self.validation, self.test) for s in part]
        if len(ids) != len(set(ids)):
            raise ValueError("split parts must be disjoint by sample id")

    @property
    def all_samples(self) -> tuple[PatchSample, ...]:
        return self.train + self.validation + self.test


def load_dataset(path, schema: str = "jsonl") -> list[PatchSample]:
    """Load patch samples from a line-delimited JSON file.

    Each record needs id, diff and label ("security" / "non-security");
    message, explanation and source are optional. Records are returned in
    file order. Raises SchemaError naming the offending record index.
    """
    if schema != "jsonl":
        raise ValueError(f"unsupported dataset schema: {schema!r}")
    samples: list[PatchSample] = []
    index = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(index, "record", f"record {index}: invalid JSON ({exc})") from exc
            for field in ("id", "diff", "label"):
                if field not in record or record[field] in (None, ""):
                    raise SchemaError(index, field)
            if record["label"] not in _LABEL_VALUES:
                raise SchemaError(
                    index, "label",
                    f"record {index}: label must be one of {sorted(_LABEL_VALUES)}, "
                    f"got {record['label']!r}",
                )
            samples.append(PatchSample.from_dict(record))
            index += 1
    return samples


def save_dataset(samples, path) -> None:
    """Write samples as one JSON record per line (inverse of load_dataset)."""
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(sample.to_dict(), sort_keys=True))
            fh.write("\n")


def class_counts(samples) -> dict[Label, int]:
    counts = {label: 0 for label in Label}
    for sample in samples:
        counts[sample.label] += 1
    return counts


def _largest_remainder(total: int, ratios) -> list[int]:
    exact = [r * total for r in ratios]
    base = [math.floor(x) for x in exact]
    leftover = total - sum(base)
    fractions = sorted(range(len(ratios)), key=lambda s: (-(exact[s] - base[s]), s))
    for s in fractions[:leftover]:
        base[s] += 1
    return base


def split_dataset(samples, ratios, seed: int, stratify: bool = True) -> DatasetSplit:
    """Deterministic train/validation/test split.

    With stratify=True each split's class proportions stay within one sample
    of the global proportions. Ratios must be positive and sum to 1.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError("ratios must be three positive numbers")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")

    samples = list(samples)
    rng = substream(seed, "split")
    targets = _largest_remainder(len(samples), ratios)
    parts: list[list[PatchSample]] = [[], [], []]

    if not stratify:
        order = rng.permutation(len(samples))
        shuffled = [samples[i] for i in order]
        start = 0
        for s, size in enumerate(targets):
            parts[s] = shuffled[start:start + size]
            start += size
    else:
        groups = {label: [s for s in samples if s.label is label] for label in Label}
        for label, members in groups.items():
            if samples and not members:
                raise EmptyClass(f"cannot stratify: class {label.value!r} has no samples")
        allocated = [0, 0, 0]
        counts = {}
        extras = {}
        for label in Label:
            n_c = len(groups[label])
            exact = [r * n_c for r in ratios]
            base = [math.floor(x) for x in exact]
            counts[label] = base
            extras[label] = (n_c - sum(base), [x - b for x, b in zip(exact, base)])
            for s in range(3):
                allocated[s] += base[s]
        # hand out per-class leftovers to whichever split is furthest below target
        for label in Label:
            leftover, fracs = extras[label]
            for _ in range(leftover):
                s = max(range(3), key=lambda s: (targets[s] - allocated[s], fracs[s], -s))
                counts[label][s] += 1
                allocated[s] += 1
        for label in Label:
            members = groups[label]
            order = rng.permutation(len(members))
            shuffled = [members[i] for i in order]
            start = 0
            for s in range(3):
                parts[s].extend(shuffled[start:start + counts[label][s]])
                start += counts[label][s]

    return DatasetSplit(tuple(parts[0]), tuple(parts[1]), tuple(parts[2]), seed)


_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class HashTokenizer:
    """Whitespace+punctuation tokenizer with a hashed vocabulary.

    Token ids are stable across processes and platforms (blake2b based, not
    Python's salted hash), so pipelines built on it are fully reproducible.
    """

    def __init__(self, vocab_size: int = 1 << 16):
        if vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        self.vocab_size = vocab_size

    def encode(self, text: str) -> list[int]:
        return [self._token_id(tok) for tok in _TOKEN_RE.findall(text)]

    def _token_id(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.vocab_size


def tokenize(text: str, vocab, max_tokens: int) -> TokenSequence:
    """Encode text with the injected tokenizer and truncate to the first max_tokens ids."""
    if max_tokens < 1:
        raise ValueError("max_tokens must be >= 1")
    ids = vocab.encode(text)
    return TokenSequence(tuple(ids[:max_tokens]), max_tokens=max_tokens)
