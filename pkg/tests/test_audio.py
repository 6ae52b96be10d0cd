import numpy as np
import pytest

from lowres_tts import audio
from lowres_tts.audio import (AudioConfig, AudioError, MelSpectrogram,
                              dequantize_16bit, griffin_lim, load_wav,
                              mel_filter_centers, mel_filterbank,
                              mel_spectrogram, quantize_16bit, save_wav)

CFG = AudioConfig()


def tone(freq, dur_s=1.0, amp=0.5, sr=16000):
    t = np.arange(int(dur_s * sr)) / sr
    return amp * np.sin(2 * np.pi * freq * t)


class TestWavIO:
    def test_round_trip_zeros(self, tmp_path):
        path = tmp_path / "z.wav"
        save_wav(path, np.zeros(1000))
        samples = load_wav(path)
        assert np.all(samples == 0.0)

    def test_negative_full_scale(self, tmp_path):
        path = tmp_path / "f.wav"
        save_wav(path, np.array([-1.0]))
        assert load_wav(path)[0] == -1.0

    def test_wrong_rate_rejected(self, tmp_path):
        from scipy.io import wavfile
        path = tmp_path / "bad.wav"
        wavfile.write(path, 44100, np.zeros(100, dtype=np.int16))
        with pytest.raises(AudioError, match="44100"):
            load_wav(path)


class TestQuantize:
    def test_zero(self):
        assert quantize_16bit(0.0) == 0
        assert dequantize_16bit(quantize_16bit(0.0)) == 0.0

    def test_positive_edge_clamped(self):
        assert quantize_16bit(1.0) == 32767

    def test_round_trip_error_bounded(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-1.0, 1.0 - 2 ** -15, size=10 ** 6)
        err = np.abs(dequantize_16bit(quantize_16bit(x)) - x)
        assert err.max() <= 1.0 / 32768 + 1e-12

    def test_nan_rejected(self):
        with pytest.raises(AudioError):
            quantize_16bit(np.array([0.0, np.nan]))


class TestMelFilterbank:
    def test_shape(self):
        fb = mel_filterbank(CFG)
        assert fb.shape == (80, 513)

    def test_nonnegative_positive_rows(self):
        fb = mel_filterbank(CFG)
        assert np.all(fb >= 0)
        assert np.all(fb.sum(axis=1) > 0)

    def test_centers_strictly_increasing(self):
        centers = mel_filter_centers(CFG)
        assert np.all(np.diff(centers) > 0)

    def test_coverage_between_fmin_fmax(self):
        fb = mel_filterbank(CFG)
        freqs = np.arange(513) * CFG.sample_rate / CFG.n_fft
        total = fb.sum(axis=0)
        inside = (freqs > mel_filter_centers(CFG)[0]) & \
                 (freqs < mel_filter_centers(CFG)[-1])
        assert np.all(total[inside] > 0)


class TestMelSpectrogram:
    def test_frame_count_one_second(self):
        mel = mel_spectrogram(np.zeros(16000), CFG)
        assert mel.frames.shape == (77, 80)

    def test_silence_hits_floor(self):
        mel = mel_spectrogram(np.zeros(16000), CFG)
        assert np.allclose(mel.frames, np.log(CFG.log_floor))

    def test_tone_argmax_bin(self):
        mel = mel_spectrogram(tone(1000.0), CFG)
        centers = mel_filter_centers(CFG)
        expected = int(np.argmin(np.abs(centers - 1000.0)))
        argmaxes = np.argmax(mel.frames, axis=1)
        assert np.all(np.abs(argmaxes - expected) <= 1)

    def test_frame_count_formula_random_lengths(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            n = int(rng.integers(CFG.win_length, 50000))
            mel = mel_spectrogram(np.zeros(n), CFG)
            assert mel.n_frames == 1 + (n - CFG.win_length) // CFG.hop_length

    def test_too_short_rejected(self):
        with pytest.raises(AudioError):
            mel_spectrogram(np.zeros(CFG.win_length - 1), CFG)

    def test_log_scale_covariance(self):
        x = tone(440.0, 0.5)
        a = mel_spectrogram(x, CFG).frames
        b = mel_spectrogram(2.0 * x, CFG).frames
        floor = np.log(CFG.log_floor)
        above = (a > floor + 1e-6) & (b > floor + 1e-6)
        assert np.allclose(b[above] - a[above], 2 * np.log(2.0), atol=1e-6)


class TestGriffinLim:
    def test_tone_frequency_recovered(self):
        mel = mel_spectrogram(tone(500.0), CFG)
        wav = griffin_lim(mel, CFG, n_iters=30)
        spec = np.abs(np.fft.rfft(wav))
        freq = np.argmax(spec) * CFG.sample_rate / len(wav)
        assert abs(freq - 500.0) <= CFG.sample_rate / CFG.n_fft + 1.0

    def test_floor_mel_is_near_silence(self):
        frames = np.full((40, 80), np.log(CFG.log_floor), dtype=np.float32)
        wav = griffin_lim(MelSpectrogram(frames), CFG, n_iters=5)
        assert np.max(np.abs(wav)) < 0.01

    def test_iterations_reduce_reconstruction_error(self):
        x = tone(700.0, 0.4) + tone(1500.0, 0.4)
        mel = mel_spectrogram(x, CFG)
        target = np.abs(audio.stft(x, CFG))

        def recon_err(n_iters):
            wav = griffin_lim(mel, CFG, n_iters=n_iters)
            back = np.abs(audio.stft(wav, CFG))
            t = min(back.shape[0], target.shape[0])
            return np.mean((back[:t] - target[:t]) ** 2)

        assert recon_err(60) < recon_err(0)


class TestMelFiles:
    def test_round_trip(self, tmp_path):
        mel = mel_spectrogram(tone(300.0, 0.3), CFG)
        path = tmp_path / "a.mel"
        audio.save_mel(path, mel)
        back = audio.load_mel(path)
        assert np.array_equal(back.frames, mel.frames)
        assert back.hop_s == mel.hop_s

    def test_truncated_rejected(self, tmp_path):
        mel = mel_spectrogram(tone(300.0, 0.3), CFG)
        path = tmp_path / "a.mel"
        audio.save_mel(path, mel)
        data = path.read_bytes()
        path.write_bytes(data[:-40])
        with pytest.raises(AudioError):
            audio.load_mel(path)
