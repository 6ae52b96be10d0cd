"""Audio I/O, 80-dim log-mel extraction, 16-bit quantization and Griffin-Lim.

All DSP parameters live in a single :class:`AudioConfig` so that every stage
of the pipeline (corpus prep, acoustic model targets, vocoder conditioning)
agrees on frame geometry.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile


class AudioError(ValueError):
    """Raised for malformed audio inputs (wrong rate, depth, emptiness...)."""


@dataclass(frozen=True)
class AudioConfig:
    sample_rate: int = 16000
    n_fft: int = 1024
    win_length: int = 800   # 50 ms
    hop_length: int = 200   # 12.5 ms
    n_mels: int = 80
    fmin: float = 80.0
    fmax: float = 7600.0
    log_floor: float = 1e-5
    normalize: bool = False  # per-corpus mel normalization, off by default

    def __post_init__(self):
        if not (self.hop_length <= self.win_length <= self.n_fft):
            raise ValueError("require hop <= win <= n_fft")
        if not (0 <= self.fmin < self.fmax <= self.sample_rate / 2):
            raise ValueError("require 0 <= fmin < fmax <= nyquist")

    @property
    def hop_s(self) -> float:
        return self.hop_length / self.sample_rate

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AudioConfig":
        return cls(**d)


@dataclass
class MelSpectrogram:
    """T x n_mels matrix of log-power mel values plus its frame hop."""

    frames: np.ndarray  # (T, n_mels) float32
    hop_s: float = 0.0125

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2:
            raise ValueError("mel frames must be a 2-D array")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]


# ---------------------------------------------------------------------------
# WAV I/O (RIFF PCM, mono, 16 kHz, 16-bit)

def load_wav(path, expected_rate: int = 16000) -> np.ndarray:
    """Load a mono 16-bit PCM wav as float samples in [-1, 1)."""
    rate, data = wavfile.read(str(path))
    if rate != expected_rate:
        raise AudioError(f"{path}: expected {expected_rate} Hz, found {rate} Hz")
    if data.dtype != np.int16:
        raise AudioError(f"{path}: expected 16-bit PCM, found dtype {data.dtype}")
    if data.ndim != 1:
        raise AudioError(f"{path}: expected mono, found {data.shape[1]} channels")
    return data.astype(np.float32) / 32768.0


def save_wav(path, samples: np.ndarray, sample_rate: int = 16000) -> None:
    """Write float samples in [-1, 1] as mono 16-bit PCM."""
    codes = quantize_16bit(np.asarray(samples, dtype=np.float64))
    wavfile.write(str(path), sample_rate, codes)


# ---------------------------------------------------------------------------
# 16-bit quantization

def quantize_16bit(x):
    """Map float samples in [-1, 1] to int16 codes: clamp(round(x*32768))."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.isnan(x)):
        raise AudioError("NaN sample in quantize_16bit input")
    codes = np.clip(np.round(x * 32768.0), -32768, 32767)
    return codes.astype(np.int16)


def dequantize_16bit(codes):
    """Inverse of quantize_16bit: int16 codes to floats code/32768."""
    return np.asarray(codes, dtype=np.float32) / 32768.0


# ---------------------------------------------------------------------------
# STFT / mel filterbank

def _hann(win_length: int) -> np.ndarray:
    # periodic Hann, standard for STFT analysis
    n = np.arange(win_length)
    return (0.5 - 0.5 * np.cos(2.0 * np.pi * n / win_length)).astype(np.float64)


def n_frames_for(n_samples: int, config: AudioConfig) -> int:
    if n_samples < config.win_length:
        raise AudioError(
            f"audio of {n_samples} samples shorter than one window "
            f"({config.win_length})")
    return 1 + (n_samples - config.win_length) // config.hop_length


def stft(samples: np.ndarray, config: AudioConfig) -> np.ndarray:
    """Magnitude-and-phase STFT, shape (T, n_fft//2 + 1), no centering."""
    samples = np.asarray(samples, dtype=np.float64)
    t = n_frames_for(len(samples), config)
    window = _hann(config.win_length)
    frames = np.empty((t, config.n_fft // 2 + 1), dtype=np.complex128)
    for i in range(t):
        start = i * config.hop_length
        chunk = samples[start:start + config.win_length] * window
        frames[i] = np.fft.rfft(chunk, n=config.n_fft)
    return frames


def istft(spec: np.ndarray, config: AudioConfig) -> np.ndarray:
    """Overlap-add inverse of :func:`stft` (windowed, window-square normalized)."""
    spec = np.asarray(spec)
    t = spec.shape[0]
    window = _hann(config.win_length)
    out_len = (t - 1) * config.hop_length + config.win_length
    out = np.zeros(out_len, dtype=np.float64)
    wsum = np.zeros(out_len, dtype=np.float64)
    for i in range(t):
        frame = np.fft.irfft(spec[i], n=config.n_fft)[:config.win_length]
        start = i * config.hop_length
        out[start:start + config.win_length] += frame * window
        wsum[start:start + config.win_length] += window ** 2
    # clamp the normalizer so near-zero window overlap at the edges cannot
    # amplify noise
    wsum = np.maximum(wsum, 1e-2 * wsum.max())
    return out / wsum


def hz_to_mel(f):
    """HTK mel scale: m = 2595 * log10(1 + f/700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: AudioConfig) -> np.ndarray:
    """Triangular mel filters, shape (n_mels, n_fft//2 + 1)."""
    n_bins = config.n_fft // 2 + 1
    fft_freqs = np.arange(n_bins) * config.sample_rate / config.n_fft
    mel_points = np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax),
                             config.n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    fb = np.zeros((config.n_mels, n_bins), dtype=np.float64)
    for i in range(config.n_mels):
        left, center, right = hz_points[i], hz_points[i + 1], hz_points[i + 2]
        up = (fft_freqs - left) / (center - left)
        down = (right - fft_freqs) / (right - center)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb


def mel_filter_centers(config: AudioConfig) -> np.ndarray:
    """Center frequency (Hz) of each mel filter."""
    mel_points = np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax),
                             config.n_mels + 2)
    return mel_to_hz(mel_points)[1:-1]


def mel_spectrogram(samples: np.ndarray, config: AudioConfig) -> MelSpectrogram:
    """Log-power mel spectrogram: log(max(mel . |STFT|^2, log_floor))."""
    spec = stft(samples, config)
    power = np.abs(spec) ** 2
    fb = mel_filterbank(config)
    mel = power @ fb.T
    logmel = np.log(np.maximum(mel, config.log_floor))
    return MelSpectrogram(frames=logmel.astype(np.float32), hop_s=config.hop_s)


# ---------------------------------------------------------------------------
# Griffin-Lim fallback synthesis

def griffin_lim(mel: MelSpectrogram, config: AudioConfig,
                n_iters: int = 60) -> np.ndarray:
    """Reconstruct a waveform from a log-mel spectrogram.

    The mel filterbank is pseudo-inverted (clamped at zero) to estimate a
    linear power spectrum, then iterative phase estimation refines a phase
    consistent with that magnitude.
    """
    fb = mel_filterbank(config)
    inv_fb = np.linalg.pinv(fb)
    power = np.clip(np.exp(mel.frames.astype(np.float64)) @ inv_fb.T, 0.0, None)
    magnitude = np.sqrt(power)

    rng = np.random.default_rng(0)
    phase = np.exp(2j * np.pi * rng.random(magnitude.shape))
    spec = magnitude * phase
    for _ in range(n_iters):
        rebuilt = stft(istft(spec, config), config)
        # audio may be one partial frame short of the original frame count
        t = min(rebuilt.shape[0], magnitude.shape[0])
        angles = np.exp(1j * np.angle(rebuilt[:t]))
        spec = spec.copy()
        spec[:t] = magnitude[:t] * angles
    return istft(spec, config)


# ---------------------------------------------------------------------------
# Mel file format: flat float32 binary + JSON sidecar

def save_mel(path, mel: MelSpectrogram) -> None:
    path = Path(path)
    mel.frames.astype("<f4").tofile(path)
    header = {"frames": int(mel.n_frames), "n_mels": int(mel.n_mels),
              "hop_s": mel.hop_s}
    with open(path.with_suffix(path.suffix + ".json"), "w") as f:
        json.dump(header, f)


def load_mel(path) -> MelSpectrogram:
    path = Path(path)
    with open(path.with_suffix(path.suffix + ".json")) as f:
        header = json.load(f)
    data = np.fromfile(path, dtype="<f4")
    expected = header["frames"] * header["n_mels"]
    if data.size != expected:
        raise AudioError(f"{path}: expected {expected} values, found {data.size}")
    frames = data.reshape(header["frames"], header["n_mels"])
    return MelSpectrogram(frames=frames, hop_s=header["hop_s"])
