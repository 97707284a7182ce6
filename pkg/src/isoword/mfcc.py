"""MFCC front end: STFT power, mel filterbank, log compression and DCT-II."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .audio_io import AudioClip
from .errors import DegenerateBand


@dataclass(frozen=True)
class MfccConfig:
    sample_rate: int = 22050
    fft_size: int = 2048
    hop_length: int = 512
    mel_bands: int = 128
    n_coefficients: int = 40
    target_frames: int = 174
    fmin: float = 0.0
    fmax: Optional[float] = None
    log_floor: float = 1e-10

    def __post_init__(self):
        if not (self.fft_size >= self.hop_length > 0):
            raise ValueError("need fft_size >= hop_length > 0")
        if self.n_coefficients > self.mel_bands:
            raise ValueError("n_coefficients must not exceed mel_bands")
        if self.upper_frequency > self.sample_rate / 2 or self.fmin < 0 or self.fmin >= self.upper_frequency:
            raise ValueError("need 0 <= fmin < fmax <= sample_rate / 2")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")
        if self.target_frames < 1:
            raise ValueError("target_frames must be >= 1")

    @property
    def upper_frequency(self) -> float:
        return self.sample_rate / 2 if self.fmax is None else float(self.fmax)

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray  # (mel_bands, n_bins)
    center_frequencies: np.ndarray


@dataclass
class MfccMatrix:
    """Coefficients (n_coefficients, frames); ``n_frames`` counts frames backed by audio."""

    coefficients: np.ndarray
    n_frames: int

    @property
    def shape(self):
        return self.coefficients.shape


def mel_scale(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def build_mel_filterbank(cfg: MfccConfig) -> MelFilterbank:
    mels = np.linspace(mel_scale(cfg.fmin), mel_scale(cfg.upper_frequency), cfg.mel_bands + 2)
    breaks = mel_to_hz(mels)
    bin_freqs = np.arange(cfg.n_bins) * cfg.sample_rate / cfg.fft_size

    left, center, right = breaks[:-2, None], breaks[1:-1, None], breaks[2:, None]
    rising = (bin_freqs - left) / (center - left)
    falling = (right - bin_freqs) / (right - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))

    empty = np.flatnonzero(weights.max(axis=1) <= 0)
    if empty.size:
        raise DegenerateBand(
            f"{empty.size} of {cfg.mel_bands} mel bands cover no FFT bin "
            f"(first: band {empty[0]}); reduce mel_bands or raise fft_size"
        )
    return MelFilterbank(weights, breaks[1:-1])


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window, the DFT-even variant used for spectral analysis."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_signal(x: np.ndarray, fft_size: int, hop_length: int) -> np.ndarray:
    pad = fft_size // 2
    padded = np.pad(x, pad, mode="reflect") if len(x) > 1 else np.pad(x, pad, mode="edge")
    n_frames = 1 + len(x) // hop_length
    frames = np.lib.stride_tricks.sliding_window_view(padded, fft_size)[::hop_length]
    return frames[:n_frames]


def stft_power(clip: AudioClip, cfg: MfccConfig) -> np.ndarray:
    """Power spectrogram of shape (fft_size // 2 + 1, frames)."""
    frames = frame_signal(clip.samples, cfg.fft_size, cfg.hop_length) * hann_window(cfg.fft_size)
    spec = np.fft.rfft(frames, n=cfg.fft_size, axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T


def dct_matrix(n_out: int, n_in: int) -> np.ndarray:
    """First ``n_out`` rows of the orthonormal DCT-II basis of size ``n_in``."""
    k = np.arange(n_out)[:, None]
    n = np.arange(n_in)[None, :]
    d = np.sqrt(2.0 / n_in) * np.cos(np.pi * k * (2 * n + 1) / (2 * n_in))
    d[0] /= np.sqrt(2.0)
    return d


def power_to_db(power: np.ndarray, log_floor: float) -> np.ndarray:
    return 10.0 * np.log10(np.maximum(power, log_floor))


def fix_frames(m: MfccMatrix, target_frames: int) -> MfccMatrix:
    c = m.coefficients
    if c.shape[1] >= target_frames:
        out = c[:, :target_frames].copy()
    else:
        out = np.zeros((c.shape[0], target_frames), dtype=c.dtype)
        out[:, : c.shape[1]] = c
    return MfccMatrix(out, min(m.n_frames, target_frames))


class MfccExtractor:
    """Caches the filterbank and DCT basis for repeated extraction under one config."""

    def __init__(self, cfg: MfccConfig = MfccConfig()):
        self.cfg = cfg
        self.filterbank = build_mel_filterbank(cfg)
        self.dct = dct_matrix(cfg.n_coefficients, cfg.mel_bands)

    def raw(self, clip: AudioClip) -> MfccMatrix:
        power = stft_power(clip, self.cfg)
        log_mel = power_to_db(self.filterbank.weights @ power, self.cfg.log_floor)
        coeffs = self.dct @ log_mel
        return MfccMatrix(coeffs, coeffs.shape[1])

    def __call__(self, clip: AudioClip) -> MfccMatrix:
        return fix_frames(self.raw(clip), self.cfg.target_frames)


def mfcc(clip: AudioClip, cfg: MfccConfig = MfccConfig()) -> MfccMatrix:
    if clip.sample_rate != cfg.sample_rate:
        raise ValueError(
            f"clip sampled at {clip.sample_rate} Hz, config expects {cfg.sample_rate} Hz; "
            "run normalize_clip first"
        )
    return MfccExtractor(cfg)(clip)


def summarize_mean(m: MfccMatrix) -> np.ndarray:
    """Per-coefficient mean over the frames that carry audio (padding excluded)."""
    n = max(1, m.n_frames)
    return m.coefficients[:, :n].mean(axis=1)
