"""Synthetic test corpus: tone-based utterances with templated transcripts.

Licensed emotion corpora cannot ship with the repo, so tests and the demo
pipeline run on generated audio. Each emotion gets a distinct acoustic
recipe (waveform, pitch range, loudness) and transcripts that carry
emotion-flavored wording without using the class names themselves. Speakers
alternate male/female; female voices are pitched up by a fixed factor.

``two_pattern_mels`` produces the separate two-pattern spectrogram set used
to exercise autoencoder training: two band-limited textures whose active
regions do not overlap.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .corpus import UtteranceRecord, save_manifest
from .coremath.rng import Rng
from .dsp import N_FRAMES, N_MELS, SAMPLE_RATE, write_wav

FEMALE_PITCH_FACTOR = 1.25

# emotion -> (waveform kind, base f0 Hz, f0 jitter, amplitude, duration range s)
EMOTION_RECIPES = {
    "angry": ("saw", 285.0, 15.0, 0.75, (0.60, 0.90)),
    "happy": ("triangle_vibrato", 225.0, 10.0, 0.55, (0.60, 0.90)),
    "neutral": ("sine", 150.0, 8.0, 0.40, (0.60, 0.90)),
    "sad": ("sine_tremolo", 95.0, 6.0, 0.22, (0.60, 0.90)),
}

TRANSCRIPT_TEMPLATES = {
    "angry": (
        "This is absolutely infuriating and I want it fixed right now.",
        "I am furious that you broke it again after everything I said.",
        "Stop wasting my time, this delay is outrageous.",
        "How dare they cancel on us without a single warning.",
    ),
    "happy": (
        "What a delightful surprise this whole day turned out to be.",
        "I am thrilled about the wonderful news we got this morning.",
        "That was the most cheerful party we have thrown in years.",
        "Everything worked out beautifully and I could not be more pleased.",
    ),
    "neutral": (
        "The meeting is scheduled for ten o'clock tomorrow morning.",
        "Please leave the package by the side door when you arrive.",
        "The report covers the second quarter and lists three vendors.",
        "I will take the usual train and arrive around noon.",
    ),
    "sad": (
        "I really miss how things used to be around here.",
        "It has been a gloomy week and I feel completely drained.",
        "We lost something important and nothing feels the same.",
        "I keep thinking about the goodbye we never got to say.",
    ),
}

# Lexicon used by the keyword mock backend; mirrors the transcript wording.
KEYWORD_LEXICON = {
    "angry": ("infuriating", "furious", "outrageous", "dare"),
    "happy": ("delightful", "thrilled", "cheerful", "pleased", "wonderful"),
    "neutral": ("meeting", "package", "report", "train"),
    "sad": ("miss", "gloomy", "lost", "goodbye", "drained"),
}


def synth_wave(emotion: str, gender: str, rng: Rng) -> np.ndarray:
    kind, f0_base, jitter, amp, (dur_lo, dur_hi) = EMOTION_RECIPES[emotion]
    f0 = f0_base + float(rng.uniform(-jitter, jitter, None, np.float64))
    if gender == "female":
        f0 *= FEMALE_PITCH_FACTOR
    duration = float(rng.uniform(dur_lo, dur_hi, None, np.float64))
    t = np.arange(int(duration * SAMPLE_RATE)) / SAMPLE_RATE
    phase = f0 * t
    if kind == "saw":
        wave = 2.0 * (phase % 1.0) - 1.0
    elif kind == "triangle_vibrato":
        vib = phase + 0.004 * np.sin(2.0 * np.pi * 5.0 * t) * f0 / 5.0
        wave = 2.0 * np.abs(2.0 * (vib % 1.0) - 1.0) - 1.0
    elif kind == "sine_tremolo":
        trem = (1.0 + 0.3 * np.sin(2.0 * np.pi * 3.0 * t)) / 1.3
        wave = np.sin(2.0 * np.pi * phase) * trem
    else:
        wave = np.sin(2.0 * np.pi * phase)
    noise = rng.normal(0.0, 0.01, len(t), np.float64)
    return np.clip(amp * wave + noise, -0.999, 0.999)


def build_synthetic_corpus(
    root, speakers: int = 10, per_speaker: int = 8, seed: int = 0
) -> Path:
    """Write WAV files plus a manifest under ``root``; returns the manifest
    path. ``per_speaker`` should be divisible by four so that every speaker
    covers every class (keeps leave-one-speaker-out folds scoreable)."""
    if per_speaker % len(EMOTION_RECIPES) != 0:
        raise ValueError("per_speaker must be divisible by the number of classes")
    root = Path(root)
    rng = Rng(seed)
    records: list[UtteranceRecord] = []
    emotions = sorted(EMOTION_RECIPES)
    for s in range(speakers):
        speaker_id = f"spk{s:02d}"
        gender = "male" if s % 2 == 0 else "female"
        speaker_rng = rng.spawn(speaker_id)
        for u in range(per_speaker):
            emotion = emotions[u % len(emotions)]
            utt_rng = speaker_rng.spawn(f"utt{u:03d}")
            wave = synth_wave(emotion, gender, utt_rng)
            rel_path = f"audio/{speaker_id}/utt{u:03d}.wav"
            write_wav(root / rel_path, wave)
            templates = TRANSCRIPT_TEMPLATES[emotion]
            transcript = templates[int(utt_rng.integers(0, len(templates)))]
            records.append(
                UtteranceRecord(
                    utterance_id=f"{speaker_id}_utt{u:03d}",
                    audio_path=rel_path,
                    transcript=transcript,
                    speaker_id=speaker_id,
                    gender=gender,
                    corpus="synthetic",
                    gold_label=emotion,
                )
            )
    manifest_path = root / "manifest.jsonl"
    save_manifest(manifest_path, records)
    return manifest_path


def two_pattern_mels(n_per_pattern: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """Two well-separated spectral textures shaped like normalized log-mels.

    Pattern 0 is active in bands 8..27, pattern 1 in bands 40..59; the rest
    sits near -1 like padded background. Returns (mels, pattern_ids).
    """
    n = 2 * n_per_pattern
    mels = np.full((n, N_MELS, N_FRAMES), -1.0, dtype=np.float32)
    ids = np.zeros(n, dtype=np.int64)
    cols = np.arange(N_FRAMES)
    for i in range(n):
        pattern = i % 2
        ids[i] = pattern
        lo = 8 if pattern == 0 else 40
        texture = 0.55 + 0.25 * np.sin(2.0 * np.pi * cols / (17.0 if pattern == 0 else 29.0))
        block = texture[None, :] + rng.normal(0.0, 0.05, (20, N_FRAMES), np.float64)
        mels[i, lo : lo + 20, :] = np.clip(block, -1.0, 1.0)
    return mels, ids
