import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isoword.audio_io import AudioClip
from isoword.errors import DegenerateBand
from isoword.mfcc import (
    MfccConfig,
    MfccExtractor,
    MfccMatrix,
    build_mel_filterbank,
    dct_matrix,
    fix_frames,
    frame_signal,
    hann_window,
    mel_scale,
    mel_to_hz,
    mfcc,
    stft_power,
    summarize_mean,
)

from . import oracles


def random_clips(count, seed=0, max_len=4096):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n = int(rng.integers(2, max_len + 1))
        yield AudioClip(rng.uniform(-1, 1, n) * rng.uniform(0.01, 1.0), 22050)


def test_mel_anchor_values():
    assert float(mel_scale(0.0)) == 0.0
    assert float(mel_scale(700.0)) == pytest.approx(2595 * math.log10(2), abs=1e-9)
    # frozen from a 30-digit decimal evaluation of 2595 * log10(2)
    assert float(mel_scale(700.0)) == pytest.approx(781.17283874803, abs=1e-9)


@given(st.floats(0, 20000))
def test_mel_inverse(f):
    assert float(mel_to_hz(mel_scale(f))) == pytest.approx(f, rel=1e-12, abs=1e-9)


def test_default_shape_and_true_frames():
    clip = AudioClip(np.random.default_rng(3).uniform(-0.5, 0.5, 22050), 22050)
    m = mfcc(clip)
    assert m.shape == (40, 174)
    assert m.n_frames == 44
    assert np.all(m.coefficients[:, 44:] == 0)
    assert np.all(np.isfinite(m.coefficients))


def test_rate_mismatch_is_rejected():
    with pytest.raises(ValueError, match="normalize_clip"):
        mfcc(AudioClip(np.zeros(100), 16000))


def test_fast_pipeline_matches_naive_oracle():
    ext = MfccExtractor()
    worst = 0.0
    for clip in random_clips(8, seed=11):
        fast = ext.raw(clip).coefficients
        slow = oracles.naive_mfcc(clip.samples)
        assert fast.shape == slow.shape
        worst = max(worst, oracles.rel_error(fast, slow))
    assert worst < 1e-6


def test_filterbank_matches_explicit_triangles():
    cfg = MfccConfig()
    fb = build_mel_filterbank(cfg)
    ref = oracles.triangle_weights(22050, 2048, 128, 0.0, 11025.0)
    np.testing.assert_allclose(fb.weights, ref, atol=1e-12)


def test_filterbank_rows_are_triangles():
    fb = build_mel_filterbank(MfccConfig())
    w = fb.weights
    assert np.all(w >= 0) and np.all(w <= 1)
    assert np.all(np.diff(fb.center_frequencies) > 0)
    peaks = w.argmax(axis=1)
    assert np.all(np.diff(peaks) >= 0)
    for row in w:
        nz = np.flatnonzero(row)
        # contiguous support, rising then falling
        assert np.all(np.diff(nz) == 1)
        top = row.argmax()
        assert np.all(np.diff(row[nz[0]:top + 1]) >= 0)
        assert np.all(np.diff(row[top:nz[-1] + 1]) <= 0)


def test_degenerate_band_detected():
    with pytest.raises(DegenerateBand):
        build_mel_filterbank(MfccConfig(sample_rate=8000, fft_size=256, hop_length=64,
                                        mel_bands=128, n_coefficients=40))


def test_dct_is_orthonormal():
    d = dct_matrix(128, 128)
    np.testing.assert_allclose(d @ d.T, np.eye(128), atol=1e-12)
    np.testing.assert_allclose(dct_matrix(40, 128), d[:40])


def test_hann_is_periodic():
    w = hann_window(8)
    assert w[0] == 0.0
    np.testing.assert_allclose(w, np.roll(w[::-1], 1), atol=1e-15)


def test_reflect_padding_matches_oracle():
    x = np.arange(7.0)
    padded = oracles.reflect_pad(x, 5)
    frames = frame_signal(x, 10, 3)
    np.testing.assert_array_equal(frames[0], padded[:10])
    assert len(frames) == 1 + 7 // 3


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.sampled_from([64, 256, 512]))
def test_parseval_on_unwindowed_frame(seed, n):
    x = np.random.default_rng(seed).normal(size=n)
    full = oracles.naive_dft(x)
    assert np.sum(np.abs(full) ** 2) == pytest.approx(n * np.sum(x ** 2), rel=1e-9)
    half = np.abs(np.fft.rfft(x)) ** 2
    # interior bins stand for a conjugate pair
    assert half[0] + 2 * half[1:-1].sum() + half[-1] == pytest.approx(n * np.sum(x ** 2), rel=1e-9)


@pytest.mark.parametrize("k", [5, 40, 200, 700])
def test_sine_peaks_at_its_bin(k):
    cfg = MfccConfig()
    t = np.arange(8192)
    clip = AudioClip(np.sin(2 * np.pi * k * t / cfg.fft_size), cfg.sample_rate)
    power = stft_power(clip, cfg)
    assert power.shape == (1025, 1 + 8192 // 512)
    assert np.all(power.argmax(axis=0)[2:-2] == k)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.05, 20.0))
def test_scaling_shifts_c0(seed, alpha):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-0.04, 0.04, 2048)
    cfg = MfccConfig()
    a = mfcc(AudioClip(x, 22050), cfg).coefficients
    b = mfcc(AudioClip(alpha * x, 22050), cfg).coefficients
    assert np.all(np.isfinite(b))
    # every log-mel band shifts by 20 log10(alpha); only the DC of the DCT sees it
    shift = 20 * math.log10(alpha) * math.sqrt(128)
    np.testing.assert_allclose(b[0, :5] - a[0, :5], shift, atol=1e-6)
    np.testing.assert_allclose(b[1:, :5], a[1:, :5], atol=1e-6)


def test_silence_hits_the_floor():
    m = mfcc(AudioClip(np.zeros(22050), 22050))
    assert m.coefficients[0, 0] == pytest.approx(-100 * math.sqrt(128))
    np.testing.assert_allclose(m.coefficients[1:, :44], 0, atol=1e-9)


def test_fix_frames_pads_and_truncates():
    m = MfccMatrix(np.ones((3, 5)), 5)
    padded = fix_frames(m, 8)
    assert padded.shape == (3, 8) and padded.n_frames == 5
    assert np.all(padded.coefficients[:, 5:] == 0)
    cut = fix_frames(m, 2)
    assert cut.shape == (3, 2) and cut.n_frames == 2


def test_summarize_mean_ignores_padding():
    coeffs = np.zeros((40, 174))
    coeffs[:, :44] = np.arange(40)[:, None]
    v = summarize_mean(MfccMatrix(coeffs, 44))
    np.testing.assert_allclose(v, np.arange(40))


@pytest.mark.parametrize("kwargs", [
    dict(hop_length=0), dict(hop_length=4096), dict(n_coefficients=200),
    dict(fmax=20000.0), dict(log_floor=0.0), dict(target_frames=0),
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        MfccConfig(**kwargs)
