import dataclasses

import numpy as np
import pytest

from secpatch import (EmbeddingMatrix, FusedEmbedding, HyperParams, Label, Modality,
                      PatchSample, TokenSequence, default_hyperparams)


def test_default_hyperparams_published_values():
    hp = default_hyperparams()
    assert hp.epochs == 20
    assert hp.learning_rate == 1e-5
    assert hp.weight_decay == 0.01
    assert hp.batch_size_train == 16
    assert hp.batch_size_eval == 64
    assert hp.alpha == 0.5
    assert hp.temperature == 0.1
    assert hp.dropout == 0.5
    assert hp.margin == 0.5
    assert hp.num_heads == 4
    assert hp.dim == 256
    assert hp.max_tokens == 512


def test_hyperparams_override_keeps_rest():
    hp = dataclasses.replace(default_hyperparams(), dim=8, num_heads=2)
    assert hp.dim == 8
    assert hp.epochs == 20
    assert hp.learning_rate == 1e-5


def test_hyperparams_head_divisibility_rejected():
    with pytest.raises(ValueError, match="divisible"):
        dataclasses.replace(default_hyperparams(), num_heads=3, dim=256)


@pytest.mark.parametrize("field,value", [
    ("epochs", 0),
    ("learning_rate", 0.0),
    ("learning_rate", -1.0),
    ("dropout", 1.0),
    ("dropout", -0.1),
    ("margin", -0.5),
    ("num_heads", 0),
    ("max_tokens", 0),
])
def test_hyperparams_invariants_rejected_not_clamped(field, value):
    with pytest.raises(ValueError):
        dataclasses.replace(default_hyperparams(), **{field: value})


def test_hyperparams_round_trip(tmp_path):
    hp = default_hyperparams()
    assert HyperParams.from_dict(hp.to_dict()) == hp
    path = tmp_path / "hp.json"
    hp.save(path)
    assert HyperParams.load(path) == hp


def test_hyperparams_from_dict_rejects_unknown_and_missing():
    good = default_hyperparams().to_dict()
    with pytest.raises(ValueError, match="unknown"):
        HyperParams.from_dict({**good, "bogus": 1})
    bad = dict(good)
    del bad["margin"]
    with pytest.raises(ValueError, match="missing"):
        HyperParams.from_dict(bad)


def test_patch_sample_validation_and_round_trip():
    sample = PatchSample(id="a", diff_text="@@ -1,0 +1,1 @@\n+x\n", label=Label.SECURITY,
                         description="msg", source="proj")
    assert PatchSample.from_dict(sample.to_dict()) == sample
    with pytest.raises(ValueError, match="non-empty"):
        PatchSample(id="b", diff_text="", label=Label.SECURITY)
    with pytest.raises(ValueError, match="label"):
        PatchSample(id="c", diff_text="+x", label="security")


def test_token_sequence_bound():
    seq = TokenSequence((1, 2, 3), max_tokens=4)
    assert seq.length == 3
    with pytest.raises(ValueError, match="exceeds"):
        TokenSequence((1, 2, 3), max_tokens=2)
    with pytest.raises(ValueError):
        TokenSequence((1,), max_tokens=0)


def test_embedding_matrix_checks():
    m = EmbeddingMatrix(np.ones((3, 4)), Modality.PATCH)
    assert m.seq_len == 3 and m.dim == 4
    assert not m.values.flags.writeable
    with pytest.raises(ValueError, match="finite"):
        EmbeddingMatrix(np.array([[np.nan, 1.0]]), Modality.PATCH)
    with pytest.raises(ValueError):
        EmbeddingMatrix(np.ones(3), Modality.PATCH)
    with pytest.raises(ValueError, match="Modality"):
        EmbeddingMatrix(np.ones((1, 2)), "patch")


def test_fused_embedding_checks():
    e = FusedEmbedding(np.arange(6.0), sample_id="x")
    assert len(e) == 6
    with pytest.raises(ValueError, match="finite"):
        FusedEmbedding(np.array([np.inf]))
