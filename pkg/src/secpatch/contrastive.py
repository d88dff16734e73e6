"""Batch contrastive learning on fused embeddings: triplet mining and hinge loss."""

from dataclasses import dataclass

import numpy as np

from .types import FusedEmbedding, Label, LengthMismatch

_DIST_EPS = 1e-12  # guards the distance gradient when two embeddings coincide


class InsufficientClassMembers(ValueError):
    """The batch lacks the class members required to form a triplet."""

    def __init__(self, missing: str, detail: str):
        self.missing = missing
        super().__init__(detail)


@dataclass(frozen=True)
class Triplet:
    anchor: int
    positive: int
    negative: int

    def __post_init__(self):
        if self.anchor == self.positive:
            raise ValueError("anchor and positive must be distinct batch indices")


def _as_vector(e) -> np.ndarray:
    return e.values if isinstance(e, FusedEmbedding) else np.asarray(e, dtype=np.float64)


def euclidean_distance(e_a, e_b) -> float:
    a = _as_vector(e_a)
    b = _as_vector(e_b)
    if a.shape != b.shape:
        raise LengthMismatch(f"embedding lengths differ: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def _batch_matrix(batch) -> np.ndarray:
    return np.stack([_as_vector(e) for e in batch])


def _security_mask(labels) -> np.ndarray:
    return np.array([label is Label.SECURITY for label in labels], dtype=bool)


def mine_triplets(batch, labels, rng=None, anchor_mode: str = "all") -> list[Triplet]:
    """Form one triplet per anchor: hardest positive, hardest negative.

    Every security sample anchors once in batch order (anchor_mode="all");
    anchor_mode="random_one" instead draws a single anchor with the supplied
    generator. The positive is the most distant other security sample, the
    negative the closest non-security sample; ties go to the lowest index.
    """
    if anchor_mode not in ("all", "random_one"):
        raise ValueError(f"unknown anchor_mode: {anchor_mode!r}")
    if len(batch) != len(labels):
        raise LengthMismatch(f"{len(batch)} embeddings vs {len(labels)} labels")

    mask = _security_mask(labels)
    security = [i for i in range(len(batch)) if mask[i]]
    non_security = [i for i in range(len(batch)) if not mask[i]]
    if len(security) < 2:
        raise InsufficientClassMembers(
            Label.SECURITY.value,
            f"need >= 2 security samples to mine triplets, got {len(security)}")
    if not non_security:
        raise InsufficientClassMembers(
            Label.NON_SECURITY.value, "need >= 1 non-security sample to mine triplets")

    x = _batch_matrix(batch)
    deltas = x[:, None, :] - x[None, :, :]
    distances = np.sqrt(np.sum(deltas ** 2, axis=-1))

    if anchor_mode == "all":
        anchors = security
    else:
        if rng is None:
            raise ValueError("anchor_mode='random_one' requires an rng")
        anchors = [security[int(rng.integers(len(security)))]]

    triplets = []
    for a in anchors:
        positive = None
        for i in security:
            if i == a:
                continue
            if positive is None or distances[a, i] > distances[a, positive]:
                positive = i
        negative = None
        for j in non_security:
            if negative is None or distances[a, j] < distances[a, negative]:
                negative = j
        triplets.append(Triplet(a, positive, negative))
    return triplets


def triplet_loss(e_a, e_p, e_n, margin: float) -> float:
    """Hinge loss max(0, d(a,p) - d(a,n) + margin)."""
    if margin < 0:
        raise ValueError("margin must be >= 0")
    return max(0.0, euclidean_distance(e_a, e_p) - euclidean_distance(e_a, e_n) + margin)


def sbcl_batch_loss(batch, labels, margin: float, rng=None, anchor_mode: str = "all") -> float:
    loss, _ = sbcl_batch_loss_and_grad(batch, labels, margin, rng=rng, anchor_mode=anchor_mode)
    return loss


def sbcl_batch_loss_and_grad(batch, labels, margin: float, rng=None,
                             anchor_mode: str = "all"):
    """Mean triplet loss over mined triplets plus gradients per batch embedding.

    The hinge subgradient at the kink is 0; mined indices are treated as
    constants of the batch (the standard mining convention).
    """
    if margin < 0:
        raise ValueError("margin must be >= 0")
    triplets = mine_triplets(batch, labels, rng=rng, anchor_mode=anchor_mode)
    x = _batch_matrix(batch)
    grads = np.zeros_like(x)
    total = 0.0
    for t in triplets:
        d_ap = float(np.sqrt(np.sum((x[t.anchor] - x[t.positive]) ** 2)))
        d_an = float(np.sqrt(np.sum((x[t.anchor] - x[t.negative]) ** 2)))
        value = d_ap - d_an + margin
        if value <= 0.0:
            continue
        total += value
        u_ap = (x[t.anchor] - x[t.positive]) / max(d_ap, _DIST_EPS)
        u_an = (x[t.anchor] - x[t.negative]) / max(d_an, _DIST_EPS)
        grads[t.anchor] += u_ap - u_an
        grads[t.positive] -= u_ap
        grads[t.negative] += u_an
    count = len(triplets)
    return total / count, grads / count
