import dataclasses
import os

import numpy as np
import pytest

from secpatch import (ExplainerConfig, HyperParams, Label, PatchSample, default_hyperparams,
                      hashed_backends, make_synthetic_samples, split_dataset)

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


@pytest.fixture(scope="session")
def sock_fasync_text() -> str:
    with open(os.path.join(DATA_DIR, "sock_fasync.diff"), encoding="utf-8") as fh:
        return fh.read()


@pytest.fixture(scope="session")
def synthetic_path() -> str:
    return os.path.join(DATA_DIR, "synthetic64.jsonl")


@pytest.fixture
def small_hp() -> HyperParams:
    return dataclasses.replace(default_hyperparams(), dim=8, num_heads=2, epochs=2,
                               learning_rate=1e-2, dropout=0.0, batch_size_train=8,
                               batch_size_eval=16, seed=7)


@pytest.fixture
def overfit_hp() -> HyperParams:
    return dataclasses.replace(default_hyperparams(), dim=16, num_heads=4, epochs=20,
                               learning_rate=1e-2, dropout=0.0, seed=7)


@pytest.fixture
def synthetic_split(overfit_hp):
    samples = make_synthetic_samples(64, seed=11)
    return split_dataset(samples, (0.8, 0.1, 0.1), seed=overfit_hp.seed)


@pytest.fixture
def offline_backends(small_hp, tmp_path):
    explainer = ExplainerConfig(cache_dir=str(tmp_path / "explain_cache"))
    return hashed_backends(small_hp, explainer)


def random_embeddings(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((n, dim))


def make_sample(i: int, label: Label, diff: str | None = None) -> PatchSample:
    return PatchSample(
        id=f"s{i}",
        diff_text=diff or f"@@ -1,1 +1,1 @@\n-old line {i}\n+new line {i}\n",
        label=label,
    )
