"""Classification head, combined objective, AdamW optimization loop, and checkpointing."""

import json
import math
import os
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import arrayio
from .contrastive import InsufficientClassMembers, sbcl_batch_loss_and_grad
from .dataset import HashTokenizer, class_counts, tokenize
from .embed import EmbedderBackend, embed_patch, embed_text
from .explain import ExplainerConfig, explain, instruction_text
from .fusion import (PTFormerState, _state_from_arrays, fuse_backward, fuse_forward,
                     init_pt_former, named_parameters)
from .metrics import compute_metrics
from .seeding import derive_seed, substream
from .types import (FusedEmbedding, HyperParams, Label, LengthMismatch, Modality,
                    PatchSample)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
PROB_EPS = 1e-12

CHECKPOINT_MAGIC = "secpatch-train"


class DivergenceDetected(RuntimeError):
    """Training loss became non-finite; the last good checkpoint is preserved."""

    def __init__(self, epoch: int, last_checkpoint: str | None):
        self.epoch = epoch
        self.last_checkpoint = last_checkpoint
        super().__init__(
            f"non-finite loss at epoch {epoch}; "
            f"last good checkpoint: {last_checkpoint or '<none written>'}")


@dataclass
class ClassifierParams:
    """Fully connected head: probability = sigmoid(weight . E + bias)."""

    weight: np.ndarray  # (3 * dim,)
    bias: np.ndarray    # (1,)


@dataclass(frozen=True)
class TrainOptions:
    """Behavior switches that are not published hyperparameters."""

    loss_blend: str = "sum"       # "sum": L_BCE + L_SBCL; "alpha": alpha-weighted blend
    anchor_mode: str = "all"      # "all" anchors every security sample; "random_one" draws one
    threshold: float = 0.5
    use_explanation: bool = True
    use_instruction: bool = True
    use_ptformer: bool = True
    use_sbcl: bool = True
    ff_hidden: int | None = None  # fusion feed-forward hidden width; None means dim

    def __post_init__(self):
        if self.loss_blend not in ("sum", "alpha"):
            raise ValueError(f"loss_blend must be 'sum' or 'alpha', got {self.loss_blend!r}")
        if self.anchor_mode not in ("all", "random_one"):
            raise ValueError(f"anchor_mode must be 'all' or 'random_one', got {self.anchor_mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, record: dict) -> "TrainOptions":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in record.items() if k in names})


@dataclass
class PipelineBackends:
    """Injected tokenizer, embedders, and optional explanation backend."""

    tokenizer: object
    patch_embedder: EmbedderBackend
    text_embedder: EmbedderBackend
    explainer: ExplainerConfig | None = None


def hashed_backends(hp: HyperParams, explainer: ExplainerConfig | None = None) -> PipelineBackends:
    """Fully offline backends: hashed tokenizer + hashed projection embedders."""
    return PipelineBackends(
        tokenizer=HashTokenizer(),
        patch_embedder=EmbedderBackend.hashed_projection(hp.dim, derive_seed(hp.seed, "embed-patch")),
        text_embedder=EmbedderBackend.hashed_projection(hp.dim, derive_seed(hp.seed, "embed-text")),
        explainer=explainer,
    )


@dataclass
class TrainState:
    pt_former: PTFormerState | None
    classifier: ClassifierParams
    hp: HyperParams
    options: TrainOptions
    adam_m: dict
    adam_v: dict
    adam_t: int
    epoch: int
    rngs: dict
    sbcl_skipped: int = 0


# ---------------------------------------------------------------------------
# losses

def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def predict_probability(embedding, classifier: ClassifierParams) -> float:
    values = embedding.values if isinstance(embedding, FusedEmbedding) else np.asarray(embedding)
    if values.shape[0] != classifier.weight.shape[0]:
        raise ValueError(
            f"embedding length {values.shape[0]} does not match classifier "
            f"weight length {classifier.weight.shape[0]}")
    logit = float(classifier.weight @ values + classifier.bias[0])
    return float(sigmoid(logit))


def bce_loss(probs, labels) -> float:
    """Mean binary cross-entropy with probabilities clamped to [1e-12, 1 - 1e-12]."""
    if len(probs) != len(labels):
        raise LengthMismatch(f"{len(probs)} probabilities vs {len(labels)} labels")
    p = np.clip(np.asarray(probs, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def blend_losses(bce: float, sbcl: float, blend: str = "sum", alpha: float = 0.5) -> float:
    if blend == "sum":
        return bce + sbcl
    if blend == "alpha":
        return alpha * bce + (1.0 - alpha) * sbcl
    raise ValueError(f"unknown loss blend: {blend!r}")


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    bce: float
    sbcl: float
    sbcl_skipped: bool


def combined_loss(probs, labels, embeddings, margin: float, *, blend: str = "sum",
                  alpha: float = 0.5, use_sbcl: bool = True, rng=None,
                  anchor_mode: str = "all") -> LossBreakdown:
    """Joint objective over one batch; an unminable batch contributes zero contrastive loss."""
    y = [1 if label is Label.SECURITY else 0 for label in labels]
    bce = bce_loss(probs, y)
    sbcl = 0.0
    skipped = False
    if use_sbcl:
        try:
            sbcl, _ = sbcl_batch_loss_and_grad(embeddings, labels, margin,
                                               rng=rng, anchor_mode=anchor_mode)
        except InsufficientClassMembers:
            skipped = True
    return LossBreakdown(blend_losses(bce, sbcl, blend, alpha), bce, sbcl, skipped)


# ---------------------------------------------------------------------------
# encoding samples to modality matrices

def encode_sample(sample: PatchSample, backends: PipelineBackends, hp: HyperParams,
                  options: TrainOptions = TrainOptions()):
    """Tokenize and embed the four modalities of one sample.

    Missing or ablated texts become empty sequences, which embed to the zero
    sentinel row, so the fusion shape contract never changes.
    """
    explanation = ""
    if options.use_explanation:
        explanation = sample.explanation
        if explanation is None and backends.explainer is not None:
            explanation = explain(sample, backends.explainer)
        explanation = explanation or ""
    description = sample.description or ""
    instruction = instruction_text() if options.use_instruction else ""

    tok = backends.tokenizer
    e_pa = embed_patch(tokenize(sample.diff_text, tok, hp.max_tokens),
                       backends.patch_embedder, sample.id)
    e_ex = embed_text(tokenize(explanation, tok, hp.max_tokens),
                      backends.text_embedder, Modality.EXPLANATION, sample.id)
    e_desc = embed_text(tokenize(description, tok, hp.max_tokens),
                        backends.text_embedder, Modality.DESCRIPTION, sample.id)
    e_inst = embed_text(tokenize(instruction, tok, hp.max_tokens),
                        backends.text_embedder, Modality.INSTRUCTION, sample.id)
    return e_pa, e_ex, e_desc, e_inst


def encode_samples(samples, backends, hp, options=TrainOptions()) -> dict:
    return {s.id: encode_sample(s, backends, hp, options) for s in samples}


def _pooled_concat_raw(mats) -> np.ndarray:
    pa, ex, desc, inst = (m.values for m in mats)
    branch1 = np.vstack([pa, ex]).mean(axis=0)
    return np.concatenate([branch1, desc.mean(axis=0), inst.mean(axis=0)])


def _forward_sample(mats, state: TrainState, training: bool, rng):
    if state.pt_former is not None:
        vec, cache = fuse_forward(mats[0].values, mats[1].values, mats[2].values,
                                  mats[3].values, state.pt_former, training=training, rng=rng)
        return vec, cache
    return _pooled_concat_raw(mats), None


# ---------------------------------------------------------------------------
# optimizer and checkpoints

def _trainable_params(state: TrainState) -> dict:
    params = {}
    if state.pt_former is not None:
        for name, arr in named_parameters(state.pt_former).items():
            params[f"pt.{name}"] = arr
    params["classifier.weight"] = state.classifier.weight
    params["classifier.bias"] = state.classifier.bias
    return params


def adamw_step(params: dict, grads: dict, m: dict, v: dict, t: int,
               learning_rate: float, weight_decay: float) -> None:
    """One decoupled-weight-decay Adam update, in place."""
    bias1 = 1.0 - ADAM_BETA1 ** t
    bias2 = 1.0 - ADAM_BETA2 ** t
    for name, p in params.items():
        g = grads[name]
        m[name] = ADAM_BETA1 * m[name] + (1.0 - ADAM_BETA1) * g
        v[name] = ADAM_BETA2 * v[name] + (1.0 - ADAM_BETA2) * (g * g)
        update = (m[name] / bias1) / (np.sqrt(v[name] / bias2) + ADAM_EPS)
        p -= learning_rate * update + learning_rate * weight_decay * p


def init_train_state(hp: HyperParams, options: TrainOptions = TrainOptions()) -> TrainState:
    pt = None
    if options.use_ptformer:
        pt = init_pt_former(hp, derive_seed(hp.seed, "init"), options.ff_hidden)
    classifier = ClassifierParams(weight=np.zeros(3 * hp.dim), bias=np.zeros(1))
    state = TrainState(
        pt_former=pt, classifier=classifier, hp=hp, options=options,
        adam_m={}, adam_v={}, adam_t=0, epoch=0,
        rngs={name: substream(hp.seed, name) for name in ("batching", "dropout", "mining")},
    )
    for name, arr in _trainable_params(state).items():
        state.adam_m[name] = np.zeros_like(arr)
        state.adam_v[name] = np.zeros_like(arr)
    return state


def save_checkpoint(path, state: TrainState) -> None:
    arrays = {}
    for name, arr in _trainable_params(state).items():
        arrays[name] = arr
        arrays[f"adam_m.{name}"] = state.adam_m[name]
        arrays[f"adam_v.{name}"] = state.adam_v[name]
    meta = {
        "format": CHECKPOINT_MAGIC,
        "version": 1,
        "epoch": state.epoch,
        "adam_t": state.adam_t,
        "hp": state.hp.to_dict(),
        "options": state.options.to_dict(),
        "seed": state.hp.seed,
        "sbcl_skipped": state.sbcl_skipped,
        "has_ptformer": state.pt_former is not None,
        "adam": {"beta1": ADAM_BETA1, "beta2": ADAM_BETA2, "eps": ADAM_EPS},
        "rng": {name: gen.bit_generator.state for name, gen in state.rngs.items()},
    }
    arrayio.save_arrays(path, arrays, meta)


def load_checkpoint(path) -> TrainState:
    arrays, meta = arrayio.load_arrays(path)
    if meta.get("format") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a training checkpoint")
    hp = HyperParams.from_dict(meta["hp"])
    options = TrainOptions.from_dict(meta["options"])
    pt = None
    if meta["has_ptformer"]:
        pt_arrays = {k[len("pt."):]: v for k, v in arrays.items()
                     if k.startswith("pt.") and not k.startswith(("adam_m.", "adam_v."))}
        pt = _state_from_arrays(pt_arrays, hp.dropout)
    classifier = ClassifierParams(weight=arrays["classifier.weight"],
                                  bias=arrays["classifier.bias"])
    rngs = {}
    for name, saved in meta["rng"].items():
        gen = np.random.default_rng(0)
        gen.bit_generator.state = saved
        rngs[name] = gen
    state = TrainState(
        pt_former=pt, classifier=classifier, hp=hp, options=options,
        adam_m={}, adam_v={}, adam_t=meta["adam_t"], epoch=meta["epoch"],
        rngs=rngs, sbcl_skipped=meta["sbcl_skipped"],
    )
    for name in _trainable_params(state):
        state.adam_m[name] = arrays[f"adam_m.{name}"]
        state.adam_v[name] = arrays[f"adam_v.{name}"]
    return state


# ---------------------------------------------------------------------------
# batch composition: balanced class mix, reshuffled refills when a class runs out

class _ClassCycle:
    def __init__(self, items, rng):
        self._items = list(items)
        self._rng = rng
        self._pos = len(self._items)

    def take(self, count: int) -> list:
        out = []
        for _ in range(count):
            if self._pos >= len(self._items):
                order = self._rng.permutation(len(self._items))
                self._items = [self._items[i] for i in order]
                self._pos = 0
            out.append(self._items[self._pos])
            self._pos += 1
        return out


def _compose_batches(samples, batch_size: int, rng):
    security = [s for s in samples if s.label is Label.SECURITY]
    non_security = [s for s in samples if s.label is Label.NON_SECURITY]
    n_security = math.ceil(batch_size / 2)
    n_non = batch_size - n_security
    sec_cycle = _ClassCycle(security, rng)
    non_cycle = _ClassCycle(non_security, rng)
    n_batches = max(1, math.ceil(len(samples) / batch_size))
    for _ in range(n_batches):
        yield sec_cycle.take(n_security) + non_cycle.take(n_non)


# ---------------------------------------------------------------------------
# training and prediction

def train(split, hp: HyperParams, backends: PipelineBackends, state: TrainState | None = None,
          options: TrainOptions | None = None, checkpoint_dir=None, run_log_path=None):
    """Optimize all fusion and classifier parameters with AdamW.

    Runs hp.epochs epochs (on top of any epochs already in `state` when
    resuming), appends one record per epoch to the run log, and checkpoints
    every epoch plus a `best.json` pointer. Deterministic for a fixed seed.

    Returns (final TrainState, list of per-epoch records).
    """
    train_samples = list(split.train)
    if not train_samples:
        raise ValueError("train split is empty")
    counts = class_counts(train_samples)
    if any(count == 0 for count in counts.values()):
        raise ValueError("train split must contain both classes")

    if state is None:
        state = init_train_state(hp, options or TrainOptions())
    else:
        if options is not None and options != state.options:
            raise ValueError("cannot change TrainOptions when resuming from a state")
        for field in ("dim", "num_heads", "max_tokens"):
            if getattr(hp, field) != getattr(state.hp, field):
                raise ValueError(f"cannot change {field} when resuming from a state")
    options = state.options

    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)

    encoded = encode_samples(train_samples, backends, hp, options)
    encoded.update(encode_samples(split.validation, backends, hp, options))

    params = _trainable_params(state)
    coeff_bce, coeff_sbcl = (1.0, 1.0) if options.loss_blend == "sum" \
        else (hp.alpha, 1.0 - hp.alpha)

    records = []
    log_fh = open(run_log_path, "a", encoding="utf-8") if run_log_path else None
    last_checkpoint = None
    best_score = -math.inf
    try:
        for _ in range(hp.epochs):
            epoch = state.epoch + 1
            sums = {"bce": 0.0, "sbcl": 0.0, "total": 0.0}
            n_batches = 0
            for batch in _compose_batches(train_samples, hp.batch_size_train,
                                          state.rngs["batching"]):
                loss = _train_batch(batch, encoded, state, params, coeff_bce, coeff_sbcl, hp)
                if not math.isfinite(loss.total):
                    raise DivergenceDetected(epoch, last_checkpoint)
                sums["bce"] += loss.bce
                sums["sbcl"] += loss.sbcl
                sums["total"] += loss.total
                n_batches += 1
            state.epoch = epoch

            val_auc, val_f1 = _validation_metrics(split.validation, state, backends)
            record = {
                "epoch": epoch,
                "L_BCE": sums["bce"] / n_batches,
                "L_SBCL": sums["sbcl"] / n_batches,
                "L": sums["total"] / n_batches,
                "val_AUC": val_auc,
                "val_F1": val_f1,
                "seed": hp.seed,
            }
            records.append(record)
            if log_fh is not None:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            if checkpoint_dir is not None:
                last_checkpoint = os.path.join(checkpoint_dir, f"epoch_{epoch:04d}.ckpt")
                save_checkpoint(last_checkpoint, state)
                score = val_f1 if val_f1 is not None else -record["L"]
                if score > best_score:
                    best_score = score
                    _write_best_pointer(checkpoint_dir, epoch, last_checkpoint, score, hp.seed)
    finally:
        if log_fh is not None:
            log_fh.close()
    return state, records


def _train_batch(batch, encoded, state, params, coeff_bce, coeff_sbcl, hp):
    options = state.options
    dropout_rng = state.rngs["dropout"] if state.pt_former is not None else None
    vectors = []
    caches = []
    for sample in batch:
        vec, cache = _forward_sample(encoded[sample.id], state, training=True, rng=dropout_rng)
        vectors.append(vec)
        caches.append(cache)
    fused = np.stack(vectors)
    labels = [s.label for s in batch]
    y = np.array([1.0 if l is Label.SECURITY else 0.0 for l in labels])

    logits = fused @ state.classifier.weight + state.classifier.bias[0]
    probs = sigmoid(logits)
    bce = bce_loss(probs, y)

    sbcl = 0.0
    d_fused_sbcl = np.zeros_like(fused)
    if options.use_sbcl:
        try:
            sbcl, d_fused_sbcl = sbcl_batch_loss_and_grad(
                fused, labels, hp.margin, rng=state.rngs["mining"],
                anchor_mode=options.anchor_mode)
        except InsufficientClassMembers:
            state.sbcl_skipped += 1

    total = blend_losses(bce, sbcl, options.loss_blend, hp.alpha)
    if not math.isfinite(total):
        return LossBreakdown(total, bce, sbcl, False)

    # clamp is inactive away from saturation, where the gradient is zero anyway
    d_logits = coeff_bce * (probs - y) / len(batch)
    grads = {
        "classifier.weight": fused.T @ d_logits,
        "classifier.bias": np.array([d_logits.sum()]),
    }
    d_fused = np.outer(d_logits, state.classifier.weight) + coeff_sbcl * d_fused_sbcl

    if state.pt_former is not None:
        pt_grads = None
        for cache, d_vec in zip(caches, d_fused):
            sample_grads = fuse_backward(d_vec, cache, state.pt_former)
            if pt_grads is None:
                pt_grads = sample_grads
            else:
                for name in pt_grads:
                    pt_grads[name] += sample_grads[name]
        for name, grad in pt_grads.items():
            grads[f"pt.{name}"] = grad

    state.adam_t += 1
    adamw_step(params, grads, state.adam_m, state.adam_v, state.adam_t,
               hp.learning_rate, hp.weight_decay)
    return LossBreakdown(total, bce, sbcl, False)


def _validation_metrics(validation, state, backends):
    if not validation:
        return None, None
    results = predict(validation, state, backends)
    probs = [p for p, _ in results]
    y = [1 if s.label is Label.SECURITY else 0 for s in validation]
    report = compute_metrics(probs, y, state.options.threshold)
    return report.auc, report.f1


def _write_best_pointer(checkpoint_dir, epoch, path, score, seed) -> None:
    pointer = {"epoch": epoch, "path": os.path.basename(path), "score": score, "seed": seed}
    with open(os.path.join(checkpoint_dir, "best.json"), "w", encoding="utf-8") as fh:
        json.dump(pointer, fh, sort_keys=True)
        fh.write("\n")


def fused_embeddings(samples, state: TrainState, backends: PipelineBackends):
    """Fused vector per sample under the state's options (evaluation mode)."""
    out = []
    for sample in samples:
        mats = encode_sample(sample, backends, state.hp, state.options)
        vec, _ = _forward_sample(mats, state, training=False, rng=None)
        out.append(FusedEmbedding(vec, sample.id))
    return out


def predict(samples, state: TrainState, backends: PipelineBackends,
            threshold: float | None = None):
    """Probability and predicted label per sample; security when p >= threshold."""
    if threshold is None:
        threshold = state.options.threshold
    samples = list(samples)
    results = []
    for start in range(0, len(samples), state.hp.batch_size_eval):
        chunk = samples[start:start + state.hp.batch_size_eval]
        for sample in chunk:
            mats = encode_sample(sample, backends, state.hp, state.options)
            vec, _ = _forward_sample(mats, state, training=False, rng=None)
            prob = float(sigmoid(vec @ state.classifier.weight + state.classifier.bias[0]))
            label = Label.SECURITY if prob >= threshold else Label.NON_SECURITY
            results.append((prob, label))
    return results
