"""Prompt construction and response parsing for emotion labeling.

Prompts are deterministic: the same record, context variant, few-shot seed,
and template version always serialize to identical bytes. A target block
never contains the record's gold label; exemplar blocks mirror the target's
feature lines and end with their label.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from ..corpus import LABELS, UNPARSEABLE, UtteranceRecord
from ..coremath.rng import Rng
from ..dsp import UtteranceFeatures

TEMPLATE_VERSION = "v1"
FEW_SHOT_COUNT = 10
CODE_COUNT = 64

SYSTEM_PREAMBLE = (
    "You label the emotion of spoken utterances. Classify each utterance into "
    "exactly one of: angry, happy, neutral, sad. Answer with the single word."
)

_SYNONYMS = {
    "angry": "angry",
    "anger": "angry",
    "happy": "happy",
    "joy": "happy",
    "neutral": "neutral",
    "sad": "sad",
    "sadness": "sad",
}


class ContextVariant(Enum):
    TEXT_ONLY = "text"
    TEXT_ENERGY_F0 = "text-energy-f0"
    TEXT_ENERGY_F0_GENDER = "text-energy-f0-gender"
    TEXT_ENERGY_F0_GENDER_CODES = "text-energy-f0-gender-codes"

    @property
    def needs_features(self) -> bool:
        return self is not ContextVariant.TEXT_ONLY

    @property
    def needs_gender(self) -> bool:
        return self in (
            ContextVariant.TEXT_ENERGY_F0_GENDER,
            ContextVariant.TEXT_ENERGY_F0_GENDER_CODES,
        )

    @property
    def needs_codes(self) -> bool:
        return self is ContextVariant.TEXT_ENERGY_F0_GENDER_CODES

    @classmethod
    def parse(cls, value: str) -> "ContextVariant":
        aliases = {"full": cls.TEXT_ENERGY_F0_GENDER_CODES}
        if value in aliases:
            return aliases[value]
        for variant in cls:
            if variant.value == value:
                return variant
        raise ValueError(
            f"unknown context variant {value!r}; choose from "
            f"{[v.value for v in cls] + ['full']}"
        )


class PromptContextError(ValueError):
    """A required feature for the chosen variant is missing; names the field."""


@dataclass(frozen=True)
class FewShotExample:
    transcript: str
    label: str
    energy: float | None = None
    pitch_hz: float | None = None
    gender: str | None = None
    codes: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"few-shot label {self.label!r} not in {LABELS}")


def _feature_lines(
    variant: ContextVariant,
    *,
    energy: float | None,
    pitch_hz: float | None,
    gender: str | None,
    codes: Sequence[int] | None,
    owner: str,
) -> list[str]:
    lines: list[str] = []
    if variant.needs_features:
        if energy is None:
            raise PromptContextError(f"{owner}: avg_energy required for variant {variant.value}")
        if pitch_hz is None:
            raise PromptContextError(f"{owner}: avg_pitch_hz required for variant {variant.value}")
        lines.append(f"Average energy (0-1 RMS): {energy:.3f}")
        lines.append(f"Average pitch: {pitch_hz:.0f} Hz")
    if variant.needs_gender:
        if gender is None:
            raise PromptContextError(f"{owner}: gender required for variant {variant.value}")
        lines.append(f"Speaker gender: {gender}")
    if variant.needs_codes:
        if codes is None:
            raise PromptContextError(f"{owner}: audio codes required for variant {variant.value}")
        if len(codes) != CODE_COUNT:
            raise PromptContextError(
                f"{owner}: expected {CODE_COUNT} audio codes, got {len(codes)}"
            )
        lines.append("Audio codes: " + " ".join(str(int(c)) for c in codes))
    return lines


@dataclass(frozen=True)
class PromptSpec:
    system: str
    variant: ContextVariant
    few_shot: tuple[FewShotExample, ...]
    target_block: str
    template_version: str = TEMPLATE_VERSION

    def user_text(self) -> str:
        parts: list[str] = []
        if self.few_shot:
            parts.append("Examples:")
            for example in self.few_shot:
                lines = [f'Transcript: "{example.transcript}"']
                lines += _feature_lines(
                    self.variant,
                    energy=example.energy,
                    pitch_hz=example.pitch_hz,
                    gender=example.gender,
                    codes=example.codes,
                    owner="few-shot example",
                )
                lines.append(f"Label: {example.label}")
                parts.append("\n".join(lines))
            parts.append("---")
        parts.append("Now classify this utterance.")
        parts.append(self.target_block)
        parts.append("Label:")
        return "\n\n".join(parts)

    def prompt_text(self) -> str:
        return f"[{self.template_version}]\n{self.system}\n\n{self.user_text()}"

    def prompt_hash(self) -> str:
        return hashlib.sha256(self.prompt_text().encode("utf-8")).hexdigest()


def build_prompt(
    record: UtteranceRecord,
    variant: ContextVariant,
    few_shot: Sequence[FewShotExample] = (),
    features: UtteranceFeatures | None = None,
    codes: Sequence[int] | None = None,
) -> PromptSpec:
    """Assemble the prompt for one utterance.

    The target block is built only from the transcript and the supplied
    context; the record's labels are never serialized into it.
    """
    few_shot = tuple(few_shot)
    if len(few_shot) not in (0, FEW_SHOT_COUNT):
        raise ValueError(
            f"few-shot block must contain 0 or {FEW_SHOT_COUNT} examples, got {len(few_shot)}"
        )
    lines = [f'Transcript: "{record.transcript}"']
    lines += _feature_lines(
        variant,
        energy=features.avg_energy if features else None,
        pitch_hz=features.avg_pitch_hz if features else None,
        gender=(features.gender if features and features.gender != "unknown" else record.gender)
        if variant.needs_gender
        else None,
        codes=codes,
        owner=record.utterance_id,
    )
    return PromptSpec(
        system=SYSTEM_PREAMBLE,
        variant=variant,
        few_shot=few_shot,
        target_block="\n".join(lines),
    )


def parse_label(raw_response: str) -> str:
    """Fold a free-form response to one of the four labels, or "unparseable".

    Scans case-insensitively for label words and their common synonyms; a
    response naming exactly one distinct class parses, anything else does
    not. Total: every string maps somewhere.
    """
    if not raw_response:
        return UNPARSEABLE
    found: set[str] = set()
    word = []
    for ch in raw_response.lower() + " ":
        if ch.isalpha():
            word.append(ch)
            continue
        if word:
            token = "".join(word)
            if token in _SYNONYMS:
                found.add(_SYNONYMS[token])
            word = []
    if len(found) == 1:
        return found.pop()
    return UNPARSEABLE


def select_few_shot(
    records: Sequence[UtteranceRecord],
    k: int = FEW_SHOT_COUNT,
    rng: Rng | None = None,
    seed: int = 0,
    balanced: bool = False,
) -> list[UtteranceRecord]:
    """Draw ``k`` gold-labeled exemplars without replacement, uniformly by
    default; ``balanced`` draws k / n_classes per class instead."""
    rng = rng if rng is not None else Rng(seed)
    pool = [r for r in records if r.gold_label in LABELS]
    if len(pool) < k:
        raise ValueError(f"few-shot pool has {len(pool)} labeled records; {k} required")
    if not balanced:
        picks = rng.choice_without_replacement(len(pool), k)
        return [pool[i] for i in sorted(picks)]
    per_class = k // len(LABELS)
    remainder = k % len(LABELS)
    chosen: list[UtteranceRecord] = []
    for i, label in enumerate(LABELS):
        members = [r for r in pool if r.gold_label == label]
        want = per_class + (1 if i < remainder else 0)
        if len(members) < want:
            raise ValueError(f"class {label!r} has {len(members)} records; {want} required")
        picks = rng.choice_without_replacement(len(members), want)
        chosen.extend(members[j] for j in sorted(picks))
    return chosen


def to_few_shot_examples(
    records: Sequence[UtteranceRecord],
    variant: ContextVariant,
    features_by_id: dict[str, UtteranceFeatures] | None = None,
    codes_by_id: dict[str, Sequence[int]] | None = None,
) -> list[FewShotExample]:
    """Attach per-variant context to exemplar records, mirroring the target
    block's fields."""
    examples: list[FewShotExample] = []
    for record in records:
        energy = pitch = None
        codes: tuple[int, ...] | None = None
        if variant.needs_features:
            feats = (features_by_id or {}).get(record.utterance_id)
            if feats is None:
                raise PromptContextError(
                    f"{record.utterance_id}: features required for variant {variant.value}"
                )
            energy, pitch = feats.avg_energy, feats.avg_pitch_hz
        if variant.needs_codes:
            raw = (codes_by_id or {}).get(record.utterance_id)
            if raw is None:
                raise PromptContextError(
                    f"{record.utterance_id}: audio codes required for variant {variant.value}"
                )
            codes = tuple(int(c) for c in raw)
        examples.append(
            FewShotExample(
                transcript=record.transcript,
                label=record.gold_label,
                energy=energy,
                pitch_hz=pitch,
                gender=record.gender if variant.needs_gender else None,
                codes=codes,
            )
        )
    return examples
