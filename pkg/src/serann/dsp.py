"""Audio front end: 16 kHz mono clips to normalized log-mel spectrograms plus
the scalar prompt features (average energy, average pitch).

Fixed encoding:
- Audio: 16-bit PCM WAV, mono, 16 kHz; no resampling, other formats rejected.
- STFT: 1024-point FFT, hop 256, periodic Hann window of 1024.
- Mel: 80 triangular bands, 0 to 8000 Hz, HTK mel scale, log(x + 1e-6).
- Output: exactly 80 bands x 256 frames, min-max scaled to [-1, 1]. Longer
  clips keep the first 256 frames; shorter clips are padded with the
  utterance's log-mel minimum, which lands at -1 after scaling.
- Energy: mean over 25 ms / 10 ms frames of per-frame RMS, linear 0..1.
- Pitch: per-frame normalized autocorrelation, 50..500 Hz search; frames
  count as voiced when the peak correlation reaches 0.3 and frame RMS 0.01.
"""

from __future__ import annotations

import json
import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16_000
N_FFT = 1024
HOP = 256
WIN = 1024
N_MELS = 80
FMAX_HZ = 8000.0
N_FRAMES = 256
LOG_FLOOR = 1e-6

ENERGY_WIN = int(0.025 * SAMPLE_RATE)  # 400
ENERGY_HOP = int(0.010 * SAMPLE_RATE)  # 160

PITCH_MIN_HZ = 50.0
PITCH_MAX_HZ = 500.0
VOICING_CORR = 0.3
VOICING_RMS = 0.01


class AudioFormatError(ValueError):
    """WAV file is not 16-bit PCM mono at 16 kHz."""


class InsufficientAudioError(ValueError):
    """Clip is shorter than one analysis window."""


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate != SAMPLE_RATE:
            raise AudioFormatError(
                f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}"
            )
        if self.samples.ndim != 1:
            raise AudioFormatError(f"expected mono samples, got shape {self.samples.shape}")
        if len(self.samples) < WIN:
            raise InsufficientAudioError(
                f"clip has {len(self.samples)} samples; at least {WIN} required"
            )
        if not np.all(np.isfinite(self.samples)):
            raise AudioFormatError("samples contain non-finite values")
        peak = float(np.abs(self.samples).max(initial=0.0))
        if peak > 1.0 + 1e-9:
            raise AudioFormatError(f"samples exceed [-1, 1] (peak {peak:.4f})")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class UtteranceFeatures:
    avg_energy: float
    avg_pitch_hz: float
    gender: str = "unknown"


def read_wav(path) -> AudioClip:
    path = Path(path)
    with wave.open(str(path), "rb") as handle:
        channels = handle.getnchannels()
        width = handle.getsampwidth()
        rate = handle.getframerate()
        if channels != 1:
            raise AudioFormatError(f"{path}: expected mono audio, got {channels} channels")
        if width != 2:
            raise AudioFormatError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
        if rate != SAMPLE_RATE:
            raise AudioFormatError(
                f"{path}: expected {SAMPLE_RATE} Hz, got {rate} Hz (resampling is not performed)"
            )
        raw = handle.readframes(handle.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples)


def write_wav(path, samples: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    quantized = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as handle:
        handle.setnchannels(1)
        handle.setsampwidth(2)
        handle.setframerate(SAMPLE_RATE)
        handle.writeframes(quantized.tobytes())


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=1)
def mel_filterbank() -> np.ndarray:
    """(N_MELS, N_FFT // 2 + 1) triangular filters, unit peak, HTK spacing."""
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(FMAX_HZ), N_MELS + 2))
    bin_hz = np.arange(N_FFT // 2 + 1) * (SAMPLE_RATE / N_FFT)
    bank = np.zeros((N_MELS, N_FFT // 2 + 1))
    for b in range(N_MELS):
        lo, center, hi = edges_hz[b], edges_hz[b + 1], edges_hz[b + 2]
        rising = (bin_hz - lo) / (center - lo)
        falling = (hi - bin_hz) / (hi - center)
        bank[b] = np.clip(np.minimum(rising, falling), 0.0, None)
    return bank


def _hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _frames(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    n = 1 + (len(x) - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def stft_power(samples: np.ndarray) -> np.ndarray:
    """Power spectrogram, shape (frames, N_FFT // 2 + 1)."""
    if len(samples) < WIN:
        raise InsufficientAudioError(
            f"need at least {WIN} samples for one window, got {len(samples)}"
        )
    frames = _frames(samples, WIN, HOP) * _hann_periodic(WIN)
    spectrum = np.fft.rfft(frames, n=N_FFT, axis=1)
    return np.abs(spectrum) ** 2


def mel_spectrogram(clip: AudioClip) -> np.ndarray:
    """80 x 256 log-mel matrix, min-max scaled to [-1, 1], float32."""
    power = stft_power(clip.samples)
    mel_power = power @ mel_filterbank().T
    logmel = np.log(mel_power + LOG_FLOOR).T  # (bands, frames)
    n = logmel.shape[1]
    if n >= N_FRAMES:
        logmel = logmel[:, :N_FRAMES]
    else:
        pad = np.full((N_MELS, N_FRAMES - n), logmel.min())
        logmel = np.concatenate([logmel, pad], axis=1)
    lo, hi = logmel.min(), logmel.max()
    if hi - lo < 1e-12:
        return np.zeros((N_MELS, N_FRAMES), dtype=np.float32)
    scaled = 2.0 * (logmel - lo) / (hi - lo) - 1.0
    return scaled.astype(np.float32)


def average_energy(clip: AudioClip) -> float:
    frames = _frames(clip.samples, ENERGY_WIN, ENERGY_HOP)
    rms = np.sqrt(np.mean(frames * frames, axis=1))
    return float(rms.mean())


def _frame_autocorr(frame: np.ndarray, max_lag: int) -> np.ndarray:
    """Normalized autocorrelation r(tau) for tau in 0..max_lag."""
    n = len(frame)
    spectrum = np.fft.rfft(frame, n=2 * n)
    raw = np.fft.irfft(spectrum * np.conj(spectrum))[: max_lag + 1]
    energy = np.concatenate([[0.0], np.cumsum(frame * frame)])
    total = energy[-1]
    lags = np.arange(max_lag + 1)
    head = energy[n - lags]  # sum x[0..n-tau-1]^2
    tail = total - energy[lags]  # sum x[tau..n-1]^2
    denom = np.sqrt(head * tail)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(denom > 0, raw / denom, 0.0)
    return r


def _frame_pitch(frame: np.ndarray) -> float:
    """F0 of one frame in Hz, or 0.0 when unvoiced."""
    rms = float(np.sqrt(np.mean(frame * frame)))
    if rms < VOICING_RMS:
        return 0.0
    lag_min = int(SAMPLE_RATE / PITCH_MAX_HZ)
    lag_max = int(SAMPLE_RATE / PITCH_MIN_HZ)
    r = _frame_autocorr(frame, lag_max + 1)
    window = r[lag_min : lag_max + 1]
    best = float(window.max(initial=0.0))
    if best < VOICING_CORR:
        return 0.0
    # Local maxima only; among those near the global peak take the smallest
    # lag, which resolves period multiples toward the true fundamental.
    peaks = [
        i
        for i in range(1, len(window) - 1)
        if window[i] >= window[i - 1]
        and window[i] >= window[i + 1]
        and window[i] >= 0.9 * best
        and window[i] >= VOICING_CORR
    ]
    if not peaks:
        return 0.0
    i = peaks[0]
    lag = lag_min + i
    left, mid, right = r[lag - 1], r[lag], r[lag + 1]
    curvature = left - 2.0 * mid + right
    delta = 0.5 * (left - right) / curvature if abs(curvature) > 1e-12 else 0.0
    delta = float(np.clip(delta, -0.5, 0.5))
    f0 = SAMPLE_RATE / (lag + delta)
    return float(np.clip(f0, PITCH_MIN_HZ, PITCH_MAX_HZ))


def average_pitch(clip: AudioClip) -> float:
    """Mean F0 over voiced frames in Hz; 0.0 when nothing is voiced."""
    frames = _frames(clip.samples, WIN, HOP)
    pitches = [p for p in (_frame_pitch(f) for f in frames) if p > 0.0]
    if not pitches:
        return 0.0
    return float(np.mean(pitches))


def extract_features(clip: AudioClip, gender: str = "unknown") -> UtteranceFeatures:
    return UtteranceFeatures(
        avg_energy=average_energy(clip),
        avg_pitch_hz=average_pitch(clip),
        gender=gender,
    )


# -- on-disk caches ------------------------------------------------------
#
# Mels go into the binary parameter container (deterministic bytes, one blob
# per utterance id); scalar features go into a JSONL file.


def save_mel_cache(path, mels_by_id: dict) -> None:
    from .coremath.checkpoint import save_checkpoint

    save_checkpoint(path, {uid: np.asarray(m, dtype=np.float32) for uid, m in mels_by_id.items()})


def load_mel_cache(path) -> dict:
    from .coremath.checkpoint import load_checkpoint

    return load_checkpoint(path)


def write_features(path, features_by_id: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for uid in sorted(features_by_id):
            feats = features_by_id[uid]
            record = {
                "utterance_id": uid,
                "avg_energy": feats.avg_energy,
                "avg_pitch_hz": feats.avg_pitch_hz,
                "gender": feats.gender,
            }
            handle.write(json.dumps(record, sort_keys=True) + "\n")


def load_features(path) -> dict:
    out = {}
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            out[record["utterance_id"]] = UtteranceFeatures(
                avg_energy=float(record["avg_energy"]),
                avg_pitch_hz=float(record["avg_pitch_hz"]),
                gender=record.get("gender", "unknown"),
            )
    return out
