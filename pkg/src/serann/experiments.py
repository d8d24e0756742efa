"""Protocol runners: leave-one-speaker-out, cross-corpus, fixed-split, and
training-set augmentation, each repeated over explicit seeds and aggregated
to mean and standard deviation.

Leave-one-speaker-out folds carry no validation split of their own, so each
run holds out one training speaker (rotated per fold, shifted by the repeat
seed) as validation; train, validation, and test speakers stay disjoint.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .classifier import ClassifierConfig, EmotionClassifier, predict, train
from .corpus import (
    LABEL_INDEX,
    LABELS,
    ConfusionMatrix,
    Fold,
    FoldPlan,
    RunReport,
    SplitError,
    UtteranceRecord,
    aggregate_runs,
    augment_merge,
    config_digest,
    cross_corpus_split,
    fixed_split,
    loso_folds,
    training_label,
    uar,
)
from .coremath.rng import Rng
from .reports import SCHEMA_VERSION


@dataclass
class LabeledSet:
    x: np.ndarray  # (N, bands, frames)
    y: np.ndarray  # (N,)
    ids: tuple[str, ...]


def materialize(
    ids: Sequence[str],
    records_by_id: Mapping[str, UtteranceRecord],
    mels_by_id: Mapping[str, np.ndarray],
    labels_source: str,
) -> LabeledSet:
    xs, ys = [], []
    for uid in ids:
        record = records_by_id[uid]
        if uid not in mels_by_id:
            raise KeyError(f"no mel spectrogram cached for {uid!r}")
        xs.append(mels_by_id[uid])
        ys.append(LABEL_INDEX[training_label(record, labels_source)])
    return LabeledSet(
        x=np.stack(xs) if xs else np.zeros((0, 80, 256), dtype=np.float32),
        y=np.asarray(ys, dtype=np.int64),
        ids=tuple(ids),
    )


def _carve_validation_speaker(
    fold: Fold, records_by_id: Mapping[str, UtteranceRecord], pick: int
) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Split a fold's training ids into train/val by holding out one speaker."""
    speakers = sorted({records_by_id[uid].speaker_id for uid in fold.train_ids})
    if len(speakers) < 2:
        raise SplitError("cannot carve a validation speaker from a single-speaker train set")
    val_speaker = speakers[pick % len(speakers)]
    train_ids = tuple(uid for uid in fold.train_ids if records_by_id[uid].speaker_id != val_speaker)
    val_ids = tuple(uid for uid in fold.train_ids if records_by_id[uid].speaker_id == val_speaker)
    return train_ids, val_ids


def run_fold(
    fold: Fold,
    records_by_id: Mapping[str, UtteranceRecord],
    mels_by_id: Mapping[str, np.ndarray],
    labels_source: str,
    config: ClassifierConfig,
    seed: int,
    fold_index: int = 0,
    artifacts_dir=None,
    tag: str | None = None,
) -> float:
    """Train on one fold and return the test UAR against gold labels.

    With ``artifacts_dir`` set, the best checkpoint and the epoch history are
    written there under ``tag``."""
    if fold.val_ids:
        train_ids, val_ids = fold.train_ids, fold.val_ids
    else:
        train_ids, val_ids = _carve_validation_speaker(fold, records_by_id, seed + fold_index)
    # Validation labels come from the training label source (model selection
    # must not peek at gold when training on machine labels); the test score
    # is always against gold.
    train_set = materialize(train_ids, records_by_id, mels_by_id, labels_source)
    val_set = materialize(val_ids, records_by_id, mels_by_id, labels_source)
    test_set = materialize(fold.test_ids, records_by_id, mels_by_id, "gold")
    model = EmotionClassifier(config, Rng(seed).spawn(f"fold:{fold.name}"))
    history_path = None
    if artifacts_dir is not None:
        base = Path(artifacts_dir)
        base.mkdir(parents=True, exist_ok=True)
        tag = tag or f"{fold.name}_seed{seed}"
        history_path = base / f"{tag}.history.jsonl"
    train(model, train_set.x, train_set.y, val_set.x, val_set.y, seed=seed,
          history_path=history_path)
    if artifacts_dir is not None:
        model.save(base / f"{tag}.serann")
    pred, _ = predict(model, test_set.x)
    confusion = ConfusionMatrix.from_pairs(test_set.y, pred, len(LABELS))
    return uar(confusion)


def run_plan(
    plan: FoldPlan,
    records_by_id: Mapping[str, UtteranceRecord],
    mels_by_id: Mapping[str, np.ndarray],
    labels_source: str,
    config: ClassifierConfig,
    seeds: Sequence[int],
    artifacts_dir=None,
) -> dict:
    """Execute every fold for every seed; the per-repeat score is the mean
    over folds. Returns a schema-shaped classifier_run document."""
    fold_uars: dict[str, list[float]] = {fold.name: [] for fold in plan.folds}
    per_repeat: list[float] = []
    for seed in seeds:
        scores = []
        for i, fold in enumerate(plan.folds):
            score = run_fold(
                fold, records_by_id, mels_by_id, labels_source, config, seed, i,
                artifacts_dir=artifacts_dir, tag=f"{fold.name}_seed{seed}",
            )
            fold_uars[fold.name].append(score)
            scores.append(score)
        per_repeat.append(float(np.mean(scores)))
    digest = config_digest({"classifier": config.to_json(), "protocol": plan.kind})
    report: RunReport = aggregate_runs(per_repeat, digest)
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "classifier_run",
        "protocol": plan.kind,
        "labels_source": labels_source,
        "seeds": [int(s) for s in seeds],
        "config": config.to_json(),
        "aggregate": report.to_json(),
        "folds": [{"name": name, "uars": fold_uars[name]} for name in sorted(fold_uars)],
    }


def run_loso(
    records: Sequence[UtteranceRecord],
    mels_by_id: Mapping[str, np.ndarray],
    labels_source: str,
    config: ClassifierConfig,
    seeds: Sequence[int],
    artifacts_dir=None,
) -> dict:
    records_by_id = {r.utterance_id: r for r in records}
    plan = loso_folds(records)
    return run_plan(plan, records_by_id, mels_by_id, labels_source, config, seeds, artifacts_dir)


def run_cross_corpus(
    train_records: Sequence[UtteranceRecord],
    eval_records: Sequence[UtteranceRecord],
    mels_by_id: Mapping[str, np.ndarray],
    labels_source: str,
    config: ClassifierConfig,
    seeds: Sequence[int],
    val_fraction: float = 0.30,
    artifacts_dir=None,
) -> dict:
    records_by_id = {r.utterance_id: r for r in list(train_records) + list(eval_records)}
    fold_uars: list[float] = []
    for seed in seeds:
        plan = cross_corpus_split(train_records, eval_records, val_fraction, seed=seed)
        score = run_fold(
            plan.folds[0], records_by_id, mels_by_id, labels_source, config, seed,
            artifacts_dir=artifacts_dir, tag=f"cross_seed{seed}",
        )
        fold_uars.append(score)
    digest = config_digest({"classifier": config.to_json(), "protocol": "cross_corpus"})
    report = aggregate_runs(fold_uars, digest)
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "classifier_run",
        "protocol": "cross_corpus",
        "labels_source": labels_source,
        "seeds": [int(s) for s in seeds],
        "config": config.to_json(),
        "aggregate": report.to_json(),
        "folds": [{"name": "cross_corpus", "uars": fold_uars}],
    }


def run_fixed(
    records: Sequence[UtteranceRecord],
    mels_by_id: Mapping[str, np.ndarray],
    labels_source: str,
    config: ClassifierConfig,
    seeds: Sequence[int],
    val_fraction: float = 0.2,
    test_fraction: float = 0.2,
    artifacts_dir=None,
) -> dict:
    records_by_id = {r.utterance_id: r for r in records}
    fold_uars: list[float] = []
    for seed in seeds:
        plan = fixed_split(records, val_fraction, test_fraction, seed=seed)
        score = run_fold(
            plan.folds[0], records_by_id, mels_by_id, labels_source, config, seed,
            artifacts_dir=artifacts_dir, tag=f"fixed_seed{seed}",
        )
        fold_uars.append(score)
    digest = config_digest({"classifier": config.to_json(), "protocol": "fixed"})
    report = aggregate_runs(fold_uars, digest)
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "classifier_run",
        "protocol": "fixed",
        "labels_source": labels_source,
        "seeds": [int(s) for s in seeds],
        "config": config.to_json(),
        "aggregate": report.to_json(),
        "folds": [{"name": "fixed", "uars": fold_uars}],
    }


def run_augment_eval(
    base_records: Sequence[UtteranceRecord],
    extra_records: Sequence[UtteranceRecord],
    mels_by_id: Mapping[str, np.ndarray],
    config: ClassifierConfig,
    seeds: Sequence[int],
    val_fraction: float = 0.2,
    test_fraction: float = 0.2,
) -> dict:
    """Paired comparison: the same seeded base split trained twice per seed,
    once as-is (gold labels) and once with machine-labeled extras added to
    the training side. Validation and test always come from the base corpus
    with gold labels."""
    merged = augment_merge(base_records, extra_records)
    records_by_id = {r.utterance_id: r for r in merged.records}
    extra_ids = tuple(uid for uid, src in merged.provenance.items() if src == "llm")

    base_uars: list[float] = []
    aug_uars: list[float] = []
    for seed in seeds:
        plan = fixed_split(base_records, val_fraction, test_fraction, seed=seed)
        fold = plan.folds[0]
        base_uars.append(
            run_fold(fold, records_by_id, mels_by_id, "gold", config, seed)
        )
        augmented_fold = Fold(
            name="augmented",
            train_ids=fold.train_ids + extra_ids,
            val_ids=fold.val_ids,
            test_ids=fold.test_ids,
        )
        aug_uars.append(
            run_fold(augmented_fold, records_by_id, mels_by_id, "auto", config, seed)
        )
    digest = config_digest({"classifier": config.to_json(), "protocol": "augment_eval"})
    baseline = aggregate_runs(base_uars, digest)
    augmented = aggregate_runs(aug_uars, digest)
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "augment_eval",
        "seeds": [int(s) for s in seeds],
        "config": config.to_json(),
        "baseline": baseline.to_json(),
        "augmented": augmented.to_json(),
        "delta_mean": augmented.mean - baseline.mean,
        "extra_records_used": len(extra_ids),
        "extra_records_excluded": merged.excluded_unparseable,
    }
