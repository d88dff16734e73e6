"""Ablation grid, cross-dataset evaluation, and repeated-run summaries."""

import dataclasses
import os
from dataclasses import dataclass

import numpy as np

from .dataset import DatasetSplit
from .metrics import MetricsReport, compute_metrics
from .seeding import derive_seed
from .train import PipelineBackends, TrainOptions, predict, train
from .types import HyperParams, Label

ABLATION_FLAGS = ("no_explanation", "no_instruction", "no_ptformer", "no_sbcl")

_FLAG_FIELDS = {
    "no_explanation": "use_explanation",
    "no_instruction": "use_instruction",
    "no_ptformer": "use_ptformer",
    "no_sbcl": "use_sbcl",
}


@dataclass(frozen=True)
class AblationRow:
    flags: tuple[str, ...]
    metrics: MetricsReport
    epochs: tuple[dict, ...]


@dataclass(frozen=True)
class CrossDatasetResult:
    train_source: str
    test_source: str
    metrics: MetricsReport


def options_for_flags(flags, base: TrainOptions = TrainOptions()) -> TrainOptions:
    """Translate ablation flags into trainer switches."""
    overrides = {}
    for flag in flags:
        if flag not in _FLAG_FIELDS:
            raise ValueError(f"unknown ablation flag {flag!r}; expected one of {ABLATION_FLAGS}")
        overrides[_FLAG_FIELDS[flag]] = False
    return dataclasses.replace(base, **overrides)


def _evaluate(samples, state, backends) -> MetricsReport:
    results = predict(samples, state, backends)
    probs = [p for p, _ in results]
    y = [1 if s.label is Label.SECURITY else 0 for s in samples]
    return compute_metrics(probs, y, state.options.threshold)


def run_ablation(flag_sets, split: DatasetSplit, hp: HyperParams, backends: PipelineBackends,
                 base_options: TrainOptions = TrainOptions(), out_dir=None) -> list[AblationRow]:
    """Train and evaluate once per flag combination, same seed throughout.

    The full model (empty flag set) is always included as the first row so the
    table reads as deltas against it. Evaluation uses the test split, falling
    back to the train split when no test samples exist.
    """
    eval_samples = split.test if split.test else split.train
    requested = [tuple(sorted(flags)) for flags in flag_sets]
    if () not in requested:
        requested = [()] + requested

    rows = []
    for flags in requested:
        options = options_for_flags(flags, base_options)
        cell_dir = None
        run_log = None
        if out_dir is not None:
            cell_dir = os.path.join(out_dir, "-".join(flags) if flags else "full")
            os.makedirs(cell_dir, exist_ok=True)
            run_log = os.path.join(cell_dir, "run_log.jsonl")
        state, records = train(split, hp, backends, options=options,
                               checkpoint_dir=cell_dir, run_log_path=run_log)
        rows.append(AblationRow(flags=flags, metrics=_evaluate(eval_samples, state, backends),
                                epochs=tuple(records)))
    return rows


def _sources(samples) -> str:
    names = []
    for sample in samples:
        if sample.source and sample.source not in names:
            names.append(sample.source)
    return "+".join(names) if names else "<unknown>"


def cross_dataset_eval(train_ds: DatasetSplit, test_ds: DatasetSplit, hp: HyperParams,
                       backends: PipelineBackends,
                       options: TrainOptions = TrainOptions()) -> CrossDatasetResult:
    """Train on one dataset's train split, evaluate on the other's test split."""
    state, _ = train(train_ds, hp, backends, options=options)
    eval_samples = test_ds.test if test_ds.test else test_ds.all_samples
    return CrossDatasetResult(
        train_source=_sources(train_ds.all_samples),
        test_source=_sources(eval_samples),
        metrics=_evaluate(eval_samples, state, backends),
    )


def repeated_runs(k: int, split: DatasetSplit, hp: HyperParams, backends: PipelineBackends,
                  options: TrainOptions = TrainOptions()) -> dict:
    """k independent train+eval runs with derived seeds; mean and stdev per metric."""
    if k < 1:
        raise ValueError("k must be >= 1")
    eval_samples = split.test if split.test else split.train
    values = {"AUC": [], "F1": [], "+Recall": [], "-Recall": []}
    for i in range(k):
        run_hp = dataclasses.replace(hp, seed=derive_seed(hp.seed, f"repeat-{i}"))
        state, _ = train(split, run_hp, backends, options=options)
        report = _evaluate(eval_samples, state, backends).to_record(percent=True)
        for key in values:
            if report[key] is not None:
                values[key].append(report[key])
    summary = {}
    for key, series in values.items():
        if series:
            arr = np.asarray(series)
            summary[key] = {"mean": float(arr.mean()),
                            "stdev": float(arr.std(ddof=1)) if len(series) > 1 else 0.0,
                            "runs": len(series)}
    return summary
