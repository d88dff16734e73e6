import dataclasses
import math

import numpy as np
import pytest

from conftest import make_sample
from oracles import scalar_bce
from secpatch import (ClassifierParams, DivergenceDetected, ExplainerConfig, FusedEmbedding,
                      Label, LengthMismatch, TrainOptions, bce_loss, blend_losses,
                      combined_loss, encode_sample, hashed_backends, init_train_state,
                      load_checkpoint, predict, predict_probability, save_checkpoint,
                      split_dataset, train)
from secpatch.train import ADAM_EPS, adamw_step


def _classifier(weight, bias=0.0):
    return ClassifierParams(weight=np.asarray(weight, dtype=np.float64),
                            bias=np.array([bias], dtype=np.float64))


def test_predict_probability_zero_logit():
    c = _classifier(np.zeros(5))
    for _ in range(3):
        e = FusedEmbedding(np.random.default_rng(1).standard_normal(5))
        assert predict_probability(e, c) == 0.5


def test_predict_probability_monotone_in_bias():
    e = FusedEmbedding(np.ones(3))
    probs = [predict_probability(e, _classifier(np.zeros(3), bias=b))
             for b in (-20.0, -1.0, 0.0, 1.0, 20.0)]
    assert probs == sorted(probs)
    assert probs[-1] > 0.999999


def test_predict_probability_direct_arithmetic():
    e = FusedEmbedding(np.array([1.0, 2.0, 0.0]))
    c = _classifier(np.array([1.0, -1.0, 0.0]))
    assert predict_probability(e, c) == pytest.approx(1.0 / (1.0 + math.exp(1.0)), abs=1e-12)


def test_predict_probability_length_check():
    with pytest.raises(ValueError, match="length"):
        predict_probability(FusedEmbedding(np.ones(4)), _classifier(np.ones(3)))


def test_bce_perfect_prediction_near_zero():
    assert bce_loss([1.0], [1]) <= 1e-11


def test_bce_uniform_is_ln2():
    assert bce_loss([0.5, 0.5], [1, 0]) == pytest.approx(math.log(2.0), abs=1e-12)


def test_bce_matches_scalar_oracle():
    rng = np.random.default_rng(2)
    probs = rng.uniform(0.01, 0.99, size=20)
    labels = (rng.random(20) < 0.5).astype(int)
    assert bce_loss(probs, labels) == pytest.approx(scalar_bce(probs, labels), abs=1e-12)


def test_bce_length_mismatch():
    with pytest.raises(LengthMismatch):
        bce_loss([0.5], [1, 0])


def test_bce_nonnegative_and_zero_only_when_correct():
    assert bce_loss([0.0], [1]) > 10.0  # clamped, finite
    assert bce_loss([1.0, 0.0], [1, 0]) <= 1e-11


def test_blend_modes():
    assert blend_losses(0.7, 0.3, "sum") == pytest.approx(1.0, abs=1e-12)
    assert blend_losses(0.7, 0.3, "alpha", alpha=0.5) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ValueError):
        blend_losses(1.0, 1.0, "product")


def test_combined_loss_perfect_batch():
    embeddings = np.array([[0.0, 0.0], [0.1, 0.0], [50.0, 0.0], [50.0, 50.0]])
    labels = [Label.SECURITY, Label.SECURITY, Label.NON_SECURITY, Label.NON_SECURITY]
    probs = [1.0, 1.0, 0.0, 0.0]
    result = combined_loss(probs, labels, embeddings, margin=0.5)
    assert result.total <= 1e-10
    assert not result.sbcl_skipped


def test_combined_loss_skips_unminable_batch():
    embeddings = np.zeros((2, 3))
    labels = [Label.SECURITY, Label.SECURITY]
    result = combined_loss([0.9, 0.8], labels, embeddings, margin=0.5)
    assert result.sbcl == 0.0
    assert result.sbcl_skipped
    assert result.total == pytest.approx(result.bce, abs=1e-12)


def test_combined_loss_alpha_blend():
    embeddings = np.array([[0.0], [1.0], [10.0]])
    labels = [Label.SECURITY, Label.SECURITY, Label.NON_SECURITY]
    result = combined_loss([0.5, 0.5, 0.5], labels, embeddings, margin=0.0, blend="alpha",
                           alpha=0.25)
    assert result.total == pytest.approx(0.25 * result.bce + 0.75 * result.sbcl, abs=1e-12)


# ---------------------------------------------------------------------------
# optimizer

def test_adamw_zero_gradients_zero_decay_is_noop():
    params = {"w": np.array([1.0, -2.0, 3.0])}
    m = {"w": np.zeros(3)}
    v = {"w": np.zeros(3)}
    before = params["w"].copy()
    adamw_step(params, {"w": np.zeros(3)}, m, v, t=1, learning_rate=0.1, weight_decay=0.0)
    np.testing.assert_array_equal(params["w"], before)


def test_adamw_zero_learning_rate_is_noop():
    params = {"w": np.array([1.0, -2.0])}
    m = {"w": np.zeros(2)}
    v = {"w": np.zeros(2)}
    before = params["w"].copy()
    adamw_step(params, {"w": np.ones(2)}, m, v, t=1, learning_rate=0.0, weight_decay=0.01)
    np.testing.assert_array_equal(params["w"], before)


def test_adamw_decoupled_decay_direction():
    params = {"w": np.array([10.0])}
    m = {"w": np.zeros(1)}
    v = {"w": np.zeros(1)}
    adamw_step(params, {"w": np.zeros(1)}, m, v, t=1, learning_rate=0.1, weight_decay=0.5)
    assert params["w"][0] == pytest.approx(10.0 - 0.1 * 0.5 * 10.0, abs=ADAM_EPS)


# ---------------------------------------------------------------------------
# training loop

def _tiny_split(hp):
    samples = [make_sample(i, Label.SECURITY if i % 2 == 0 else Label.NON_SECURITY)
               for i in range(12)]
    return split_dataset(samples, (0.7, 0.15, 0.15), seed=hp.seed)


def test_train_deterministic_and_checkpoints_identical(small_hp, tmp_path):
    split = _tiny_split(small_hp)
    runs = []
    for tag in ("a", "b"):
        explainer = ExplainerConfig(cache_dir=str(tmp_path / f"cache_{tag}"))
        backends = hashed_backends(small_hp, explainer)
        ckpt = tmp_path / f"ckpt_{tag}"
        log = tmp_path / f"log_{tag}.jsonl"
        _, records = train(split, small_hp, backends, checkpoint_dir=str(ckpt),
                           run_log_path=str(log))
        runs.append((records, ckpt, log))
    records_a, ckpt_a, log_a = runs[0]
    records_b, ckpt_b, log_b = runs[1]
    for ra, rb in zip(records_a, records_b):
        for key in ("L_BCE", "L_SBCL", "L"):
            assert abs(ra[key] - rb[key]) <= 1e-12
    assert log_a.read_bytes() == log_b.read_bytes()
    for name in sorted(p.name for p in ckpt_a.iterdir()):
        assert (ckpt_a / name).read_bytes() == (ckpt_b / name).read_bytes(), name


def test_train_resume_advances_epochs(small_hp, offline_backends, tmp_path):
    split = _tiny_split(small_hp)
    state, records = train(split, small_hp, offline_backends)
    assert state.epoch == small_hp.epochs == len(records)
    state, more = train(split, small_hp, offline_backends, state=state)
    assert state.epoch == 2 * small_hp.epochs
    assert more[0]["epoch"] == small_hp.epochs + 1


def test_train_rejects_option_change_on_resume(small_hp, offline_backends):
    split = _tiny_split(small_hp)
    state, _ = train(split, small_hp, offline_backends)
    with pytest.raises(ValueError, match="TrainOptions"):
        train(split, small_hp, offline_backends, state=state,
              options=TrainOptions(use_sbcl=False))


def test_train_requires_both_classes(small_hp, offline_backends):
    one_class = [make_sample(i, Label.SECURITY) for i in range(8)]
    split = split_dataset(one_class, (0.6, 0.2, 0.2), seed=1, stratify=False)
    with pytest.raises(ValueError, match="both classes"):
        train(split, small_hp, offline_backends)


def test_train_divergence_detected(small_hp, offline_backends, tmp_path):
    split = _tiny_split(small_hp)
    wild = dataclasses.replace(small_hp, learning_rate=1e150, epochs=10)
    with np.errstate(all="ignore"):  # the blow-up itself is the point
        with pytest.raises(DivergenceDetected):
            train(split, wild, offline_backends, checkpoint_dir=str(tmp_path / "ckpt"))


def test_checkpoint_save_load_save_identical_bytes(small_hp, tmp_path):
    state = init_train_state(small_hp)
    path_a = tmp_path / "a.ckpt"
    path_b = tmp_path / "b.ckpt"
    save_checkpoint(path_a, state)
    loaded = load_checkpoint(path_a)
    save_checkpoint(path_b, loaded)
    assert path_a.read_bytes() == path_b.read_bytes()
    assert loaded.hp == state.hp
    assert loaded.options == state.options
    assert loaded.epoch == state.epoch
    np.testing.assert_array_equal(loaded.classifier.weight, state.classifier.weight)


def test_checkpoint_preserves_rng_streams(small_hp, tmp_path):
    state = init_train_state(small_hp)
    state.rngs["batching"].random(5)  # advance
    path = tmp_path / "c.ckpt"
    save_checkpoint(path, state)
    loaded = load_checkpoint(path)
    np.testing.assert_array_equal(state.rngs["batching"].random(4),
                                  loaded.rngs["batching"].random(4))


def test_predict_threshold_boundary_and_monotonicity(small_hp, offline_backends):
    split = _tiny_split(small_hp)
    fresh = init_train_state(small_hp)  # zero classifier: every probability is 0.5
    results = predict(split.train, fresh, offline_backends, threshold=0.5)
    assert all(p == 0.5 and label is Label.SECURITY for p, label in results)

    state, _ = train(split, small_hp, offline_backends)
    probs = [p for p, _ in predict(split.train, state, offline_backends)]
    low = {s.id for s, (p, l) in zip(split.train, predict(split.train, state, offline_backends,
                                                          threshold=0.3)) if l is Label.SECURITY}
    high = {s.id for s, (p, l) in zip(split.train, predict(split.train, state, offline_backends,
                                                           threshold=0.7)) if l is Label.SECURITY}
    assert high <= low
    assert all(0.0 < p < 1.0 for p in probs)


def test_encode_sample_shape_contract_with_missing_texts(small_hp, offline_backends):
    # a missing description must not change the four-matrix shape contract
    bare = make_sample(1, Label.SECURITY)
    mats = encode_sample(bare, offline_backends, small_hp)
    assert [m.values.shape[1] for m in mats] == [small_hp.dim] * 4
    assert mats[2].values.shape == (1, small_hp.dim)  # description sentinel row
    assert np.all(mats[2].values == 0.0)
    assert mats[3].seq_len > 1  # instruction text is always present

    ablated = encode_sample(bare, offline_backends, small_hp,
                            TrainOptions(use_explanation=False, use_instruction=False))
    assert ablated[1].values.shape == (1, small_hp.dim)
    assert ablated[3].values.shape == (1, small_hp.dim)


def test_train_logs_schema(small_hp, offline_backends):
    split = _tiny_split(small_hp)
    _, records = train(split, small_hp, offline_backends)
    for record in records:
        assert set(record) == {"epoch", "L_BCE", "L_SBCL", "L", "val_AUC", "val_F1", "seed"}
        assert record["seed"] == small_hp.seed
        assert record["L"] >= 0.0
