import numpy as np
import pytest

from serann import dsp
from serann.dsp import (
    AudioClip,
    AudioFormatError,
    InsufficientAudioError,
    average_energy,
    average_pitch,
    mel_spectrogram,
    read_wav,
    write_wav,
)

SR = dsp.SAMPLE_RATE


def tone(freq, seconds, amp=1.0, kind="sine"):
    t = np.arange(int(seconds * SR)) / SR
    if kind == "saw":
        return amp * (2.0 * ((freq * t) % 1.0) - 1.0)
    if kind == "square":
        return amp * np.sign(np.sin(2.0 * np.pi * freq * t) + 1e-12)
    return amp * np.sin(2.0 * np.pi * freq * t)


# -- independent reference pipeline (naive O(n^2) DFT, no FFT) ----------


def oracle_melspec(samples):
    n_bins = dsp.N_FFT // 2 + 1
    # explicit DFT matrix
    k = np.arange(n_bins)[:, None]
    n = np.arange(dsp.N_FFT)[None, :]
    cos_m = np.cos(-2.0 * np.pi * k * n / dsp.N_FFT)
    sin_m = np.sin(-2.0 * np.pi * k * n / dsp.N_FFT)

    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(dsp.WIN) / dsp.WIN)
    n_frames = 1 + (len(samples) - dsp.WIN) // dsp.HOP
    power = np.empty((n_frames, n_bins))
    for i in range(n_frames):
        frame = samples[i * dsp.HOP : i * dsp.HOP + dsp.WIN] * window
        padded = np.zeros(dsp.N_FFT)
        padded[: dsp.WIN] = frame
        re = cos_m @ padded
        im = sin_m @ padded
        power[i] = re * re + im * im

    # triangular filters on the HTK mel scale, built pointwise
    def mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def inv_mel(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    edges = [inv_mel(mel(0.0) + (mel(dsp.FMAX_HZ) - mel(0.0)) * i / (dsp.N_MELS + 1))
             for i in range(dsp.N_MELS + 2)]
    mel_power = np.zeros((n_frames, dsp.N_MELS))
    for b in range(dsp.N_MELS):
        lo, center, hi = edges[b], edges[b + 1], edges[b + 2]
        for j in range(n_bins):
            f = j * SR / dsp.N_FFT
            if lo < f < hi:
                weight = (f - lo) / (center - lo) if f <= center else (hi - f) / (hi - center)
                mel_power[:, b] += weight * power[:, j]

    logmel = np.log(mel_power + dsp.LOG_FLOOR).T
    if logmel.shape[1] >= dsp.N_FRAMES:
        logmel = logmel[:, : dsp.N_FRAMES]
    else:
        pad = np.full((dsp.N_MELS, dsp.N_FRAMES - logmel.shape[1]), logmel.min())
        logmel = np.concatenate([logmel, pad], axis=1)
    lo_v, hi_v = logmel.min(), logmel.max()
    if hi_v - lo_v < 1e-12:
        return np.zeros((dsp.N_MELS, dsp.N_FRAMES)), mel_power
    return 2.0 * (logmel - lo_v) / (hi_v - lo_v) - 1.0, mel_power


class TestWavIO:
    def test_roundtrip(self, tmp_path):
        samples = tone(440, 0.2, amp=0.5)
        path = tmp_path / "t.wav"
        write_wav(path, samples)
        clip = read_wav(path)
        assert clip.sample_rate == SR
        np.testing.assert_allclose(clip.samples, samples, atol=1.0 / 32000)

    def test_rejects_stereo(self, tmp_path):
        import wave

        path = tmp_path / "stereo.wav"
        with wave.open(str(path), "wb") as handle:
            handle.setnchannels(2)
            handle.setsampwidth(2)
            handle.setframerate(SR)
            handle.writeframes(b"\x00" * 4 * 2000)
        with pytest.raises(AudioFormatError, match="mono"):
            read_wav(path)

    def test_rejects_wrong_rate(self, tmp_path):
        import wave

        path = tmp_path / "wrong.wav"
        with wave.open(str(path), "wb") as handle:
            handle.setnchannels(1)
            handle.setsampwidth(2)
            handle.setframerate(44100)
            handle.writeframes(b"\x00" * 2 * 2000)
        with pytest.raises(AudioFormatError, match="44100"):
            read_wav(path)

    def test_rejects_8bit(self, tmp_path):
        import wave

        path = tmp_path / "8bit.wav"
        with wave.open(str(path), "wb") as handle:
            handle.setnchannels(1)
            handle.setsampwidth(1)
            handle.setframerate(SR)
            handle.writeframes(b"\x00" * 2000)
        with pytest.raises(AudioFormatError, match="16-bit"):
            read_wav(path)

    def test_short_clip_insufficient(self):
        with pytest.raises(InsufficientAudioError):
            AudioClip(np.zeros(512))

    def test_out_of_range_samples_rejected(self):
        with pytest.raises(AudioFormatError, match=r"\[-1, 1\]"):
            AudioClip(2.0 * np.ones(2048))


class TestMelSpectrogram:
    def test_output_shape_and_range(self):
        mel = mel_spectrogram(AudioClip(tone(440, 0.5, 0.5)))
        assert mel.shape == (80, 256)
        assert mel.dtype == np.float32
        assert mel.min() >= -1.0 and mel.max() <= 1.0

    def test_digital_silence_is_all_zeros(self):
        mel = mel_spectrogram(AudioClip(np.zeros(SR)))
        np.testing.assert_array_equal(mel, np.zeros((80, 256), dtype=np.float32))

    def test_matches_naive_dft_oracle(self):
        samples = tone(1000, 4.0, 0.8)
        ours = mel_spectrogram(AudioClip(samples))
        reference, _ = oracle_melspec(samples)
        assert np.max(np.abs(ours - reference)) < 1e-3

    def test_tone_energy_concentrated_near_1khz(self):
        samples = tone(1000, 4.0, 0.8)
        _, mel_power = oracle_melspec(samples)
        centers = dsp.mel_to_hz(
            np.linspace(dsp.hz_to_mel(0.0), dsp.hz_to_mel(dsp.FMAX_HZ), dsp.N_MELS + 2)
        )[1:-1]
        band = int(np.argmin(np.abs(centers - 1000.0)))
        window = mel_power[:, max(band - 1, 0) : band + 2].sum(axis=1)
        ratio = window / mel_power.sum(axis=1)
        assert ratio.min() >= 0.90

    def test_deterministic(self):
        samples = tone(333, 0.7, 0.6)
        a = mel_spectrogram(AudioClip(samples))
        b = mel_spectrogram(AudioClip(samples.copy()))
        assert a.tobytes() == b.tobytes()

    def test_truncation_keeps_first_frames(self):
        # 5 s exceeds the 256-frame horizon (66304 samples); altering the
        # signal beyond that horizon must not change the output, and the
        # output must equal that of the horizon-length prefix alone.
        base = tone(500, 5.0, 0.5)
        head_len = (dsp.N_FRAMES - 1) * dsp.HOP + dsp.WIN
        altered = base.copy()
        altered[head_len:] = tone(2000, 5.0, 0.5)[head_len:]
        a = mel_spectrogram(AudioClip(base))
        b = mel_spectrogram(AudioClip(altered))
        c = mel_spectrogram(AudioClip(base[:head_len]))
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(a, c)

    def test_gain_invariance(self):
        rng = np.random.default_rng(3)
        samples = 0.4 * np.sin(2 * np.pi * 220 * np.arange(int(1.2 * SR)) / SR)
        samples = samples + 0.02 * rng.standard_normal(len(samples))
        samples = np.clip(samples, -0.5, 0.5)
        base = mel_spectrogram(AudioClip(samples))
        for gain in (0.5, 2.0):
            scaled = mel_spectrogram(AudioClip(np.clip(gain * samples, -1.0, 1.0)))
            np.testing.assert_allclose(scaled, base, atol=1e-4)


class TestEnergy:
    def test_silence(self):
        assert average_energy(AudioClip(np.zeros(SR))) == 0.0

    def test_full_scale_square_wave(self):
        clip = AudioClip(tone(100, 1.0, 1.0, kind="square"))
        np.testing.assert_allclose(average_energy(clip), 1.0, atol=1e-9)

    def test_half_scale_sine(self):
        clip = AudioClip(tone(1000, 1.0, 0.5))
        np.testing.assert_allclose(average_energy(clip), 0.5 / np.sqrt(2.0), atol=1e-3)

    def test_proportional_to_gain(self):
        samples = tone(250, 0.8, 0.4)
        base = average_energy(AudioClip(samples))
        np.testing.assert_allclose(average_energy(AudioClip(2.0 * samples)), 2.0 * base, rtol=1e-9)


class TestPitch:
    def test_silence_unvoiced(self):
        assert average_pitch(AudioClip(np.zeros(SR))) == 0.0

    def test_200hz_sawtooth(self):
        clip = AudioClip(tone(200, 2.0, 0.5, kind="saw"))
        assert abs(average_pitch(clip) - 200.0) <= 3.0

    def test_low_vs_high_tones_ordered(self):
        low = average_pitch(AudioClip(tone(120, 1.0, 0.5)))
        high = average_pitch(AudioClip(tone(300, 1.0, 0.5)))
        assert abs(low - 120.0) <= 3.0
        assert abs(high - 300.0) <= 3.0
        assert low < high

    def test_amplitude_invariance(self):
        samples = tone(180, 1.0, 1.0)
        base = average_pitch(AudioClip(0.1 * samples))
        for gain in (0.25, 0.5, 1.0):
            np.testing.assert_allclose(
                average_pitch(AudioClip(gain * samples)), base, atol=1e-6
            )

    def test_quiet_frames_gated_by_rms(self):
        assert average_pitch(AudioClip(tone(200, 1.0, 0.005))) == 0.0


class TestFeatureFiles:
    def test_features_roundtrip(self, tmp_path):
        feats = {
            "a": dsp.UtteranceFeatures(0.25, 190.0, "female"),
            "b": dsp.UtteranceFeatures(0.5, 0.0, "male"),
        }
        path = tmp_path / "features.jsonl"
        dsp.write_features(path, feats)
        loaded = dsp.load_features(path)
        assert loaded.keys() == feats.keys()
        assert loaded["a"].avg_pitch_hz == 190.0
        assert loaded["b"].gender == "male"

    def test_mel_cache_roundtrip_and_determinism(self, tmp_path, rng):
        mels = {f"utt{i}": rng.normal(0, 1, (80, 256), np.float32) for i in range(3)}
        a, b = tmp_path / "a.mels", tmp_path / "b.mels"
        dsp.save_mel_cache(a, mels)
        dsp.save_mel_cache(b, mels)
        assert a.read_bytes() == b.read_bytes()
        loaded = dsp.load_mel_cache(a)
        np.testing.assert_array_equal(loaded["utt1"], mels["utt1"])
