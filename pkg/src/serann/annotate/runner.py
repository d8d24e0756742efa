"""Annotation driver: prompt -> cache lookup -> backend -> parsed label.

The cache is an append-only JSONL store keyed by the prompt's cryptographic
hash, so reruns skip every prompt already answered and an interrupted run
resumes where it stopped. Results merge deterministically in manifest order
regardless of request concurrency.
"""

from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

from ..corpus import UNPARSEABLE, UtteranceRecord
from ..coremath.rng import Rng
from ..dsp import UtteranceFeatures
from .backends import Backend, BackendError, CompletionRequest
from .prompts import (
    ContextVariant,
    FewShotExample,
    build_prompt,
    parse_label,
    select_few_shot,
    to_few_shot_examples,
)


class AnnotationRunError(RuntimeError):
    pass


class MissingContextFileError(ValueError):
    pass


@dataclass
class AnnotationResult:
    utterance_id: str
    label: str
    raw_response: str
    backend_id: str
    prompt_hash: str
    template_version: str

    def to_json(self) -> dict:
        return asdict(self)


class AnnotationCache:
    """Append-only JSONL keyed by prompt hash; lookups and appends are
    serialized, so concurrent annotators can share one instance."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, dict] = {}
        if self.path.exists():
            with self.path.open("r", encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    record = json.loads(line)
                    self._entries[record["prompt_hash"]] = record
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, prompt_hash: str) -> dict | None:
        with self._lock:
            return self._entries.get(prompt_hash)

    def put(self, record: dict) -> None:
        with self._lock:
            if record["prompt_hash"] in self._entries:
                return
            self._entries[record["prompt_hash"]] = record
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(json.dumps(record, sort_keys=True) + "\n")


def annotate(
    record: UtteranceRecord,
    variant: ContextVariant,
    backend: Backend,
    cache: AnnotationCache | None = None,
    few_shot: Sequence[FewShotExample] = (),
    features: UtteranceFeatures | None = None,
    codes: Sequence[int] | None = None,
) -> tuple[AnnotationResult, bool]:
    """Annotate one utterance; returns (result, served_from_cache)."""
    spec = build_prompt(record, variant, few_shot, features, codes)
    prompt_hash = spec.prompt_hash()
    if cache is not None:
        hit = cache.get(prompt_hash)
        if hit is not None:
            return (
                AnnotationResult(
                    utterance_id=record.utterance_id,
                    label=hit["label"],
                    raw_response=hit["raw_response"],
                    backend_id=hit["backend_id"],
                    prompt_hash=prompt_hash,
                    template_version=hit["template_version"],
                ),
                True,
            )
    request = CompletionRequest(
        system=spec.system, user=spec.user_text(), utterance_id=record.utterance_id
    )
    try:
        raw = backend.complete(request)
    except BackendError as exc:
        if not str(exc).startswith(record.utterance_id):
            raise type(exc)(f"{record.utterance_id}: {exc}") from exc
        raise
    result = AnnotationResult(
        utterance_id=record.utterance_id,
        label=parse_label(raw),
        raw_response=raw,
        backend_id=backend.backend_id,
        prompt_hash=prompt_hash,
        template_version=spec.template_version,
    )
    if cache is not None:
        cache.put(
            {
                "prompt_hash": prompt_hash,
                "utterance_id": record.utterance_id,
                "label": result.label,
                "raw_response": raw,
                "backend_id": backend.backend_id,
                "template_version": spec.template_version,
            }
        )
    return result, False


@dataclass
class AnnotationSummary:
    total: int
    label_counts: dict[str, int]
    unparseable: int
    cache_hits: int
    failures: list[dict]

    @property
    def unparseable_rate(self) -> float:
        return self.unparseable / self.total if self.total else 0.0

    @property
    def cache_hit_rate(self) -> float:
        return self.cache_hits / self.total if self.total else 0.0

    def to_json(self) -> dict:
        return {
            "total": self.total,
            "label_counts": self.label_counts,
            "unparseable": self.unparseable,
            "unparseable_rate": self.unparseable_rate,
            "cache_hits": self.cache_hits,
            "cache_hit_rate": self.cache_hit_rate,
            "failures": self.failures,
        }


def annotate_corpus(
    records: Sequence[UtteranceRecord],
    variant: ContextVariant,
    backend: Backend,
    shots: str = "zero",
    seed: int = 0,
    features_by_id: Mapping[str, UtteranceFeatures] | None = None,
    codes_by_id: Mapping[str, Sequence[int]] | None = None,
    few_shot_pool: Sequence[UtteranceRecord] | None = None,
    cache: AnnotationCache | None = None,
    balanced_few_shot: bool = False,
    failure_budget: int = 0,
    concurrency: int = 1,
) -> tuple[list[AnnotationResult], AnnotationSummary]:
    """Annotate every record; per-record backend failures are tolerated up to
    ``failure_budget`` and reported in the summary."""
    if shots not in ("zero", "few"):
        raise ValueError(f"shots must be 'zero' or 'few', got {shots!r}")
    features_by_id = dict(features_by_id or {})
    codes_by_id = dict(codes_by_id or {})
    if variant.needs_features:
        missing = [r.utterance_id for r in records if r.utterance_id not in features_by_id]
        if missing:
            raise MissingContextFileError(
                f"features missing for {len(missing)} records (first: {missing[0]!r})"
            )
    if variant.needs_codes:
        missing = [r.utterance_id for r in records if r.utterance_id not in codes_by_id]
        if missing:
            raise MissingContextFileError(
                f"audio codes missing for {len(missing)} records (first: {missing[0]!r})"
            )

    few_shot: tuple[FewShotExample, ...] = ()
    if shots == "few":
        pool = few_shot_pool if few_shot_pool is not None else records
        chosen = select_few_shot(pool, rng=Rng(seed).spawn("few-shot"), balanced=balanced_few_shot)
        few_shot = tuple(to_few_shot_examples(chosen, variant, features_by_id, codes_by_id))

    def work(record: UtteranceRecord):
        return annotate(
            record,
            variant,
            backend,
            cache,
            few_shot,
            features_by_id.get(record.utterance_id),
            codes_by_id.get(record.utterance_id),
        )

    outcomes: list[tuple[UtteranceRecord, AnnotationResult | None, bool, str | None]] = []
    if concurrency <= 1:
        for record in records:
            try:
                result, hit = work(record)
                outcomes.append((record, result, hit, None))
            except BackendError as exc:
                outcomes.append((record, None, False, str(exc)))
    else:
        with ThreadPoolExecutor(max_workers=concurrency) as pool_exec:
            futures = [(record, pool_exec.submit(work, record)) for record in records]
            for record, future in futures:
                try:
                    result, hit = future.result()
                    outcomes.append((record, result, hit, None))
                except BackendError as exc:
                    outcomes.append((record, None, False, str(exc)))

    results: list[AnnotationResult] = []
    failures: list[dict] = []
    counts: dict[str, int] = {}
    unparseable = 0
    hits = 0
    for record, result, hit, error in outcomes:
        if error is not None:
            failures.append({"utterance_id": record.utterance_id, "error": error})
            continue
        assert result is not None
        results.append(result)
        hits += int(hit)
        if result.label == UNPARSEABLE:
            unparseable += 1
        else:
            counts[result.label] = counts.get(result.label, 0) + 1
    if len(failures) > failure_budget:
        detail = "; ".join(f"{f['utterance_id']}: {f['error']}" for f in failures[:5])
        raise AnnotationRunError(
            f"{len(failures)} records failed (budget {failure_budget}): {detail}"
        )
    summary = AnnotationSummary(
        total=len(records),
        label_counts=counts,
        unparseable=unparseable,
        cache_hits=hits,
        failures=failures,
    )
    return results, summary


def write_annotations(path, results: Sequence[AnnotationResult]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ordered = sorted(results, key=lambda r: r.utterance_id)
    with path.open("w", encoding="utf-8") as handle:
        for result in ordered:
            handle.write(json.dumps(result.to_json(), sort_keys=True) + "\n")


def load_annotations(path) -> dict[str, AnnotationResult]:
    out: dict[str, AnnotationResult] = {}
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            out[record["utterance_id"]] = AnnotationResult(**record)
    return out


def apply_annotations(
    records: Sequence[UtteranceRecord], annotations: Mapping[str, AnnotationResult]
) -> list[UtteranceRecord]:
    """Copy records with llm_label filled from annotation results."""
    out = []
    for record in records:
        result = annotations.get(record.utterance_id)
        out.append(replace(record, llm_label=result.label) if result else record)
    return out
