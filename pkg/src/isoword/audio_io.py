"""WAV decoding, clip normalization, dataset scanning and the synthetic corpus.

Only the two encodings the recording pipeline needs are supported:
16-bit PCM and 32-bit IEEE float, mono or stereo.  Anything else raises.
"""
from __future__ import annotations

import json
import os
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Union

import numpy as np

from .errors import (
    EmptyAudio,
    EmptyClass,
    EmptyDataset,
    IoFailure,
    MalformedContainer,
    UnsupportedEncoding,
)

PathLike = Union[str, os.PathLike]

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("clip contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    class_index: int
    class_label: str


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple
    class_count: int

    def __post_init__(self):
        indices = {e.class_index for e in self.entries}
        if indices != set(range(self.class_count)):
            raise ValueError("class indices must form the contiguous range 0..C-1")

    def __len__(self):
        return len(self.entries)

    @property
    def labels(self) -> np.ndarray:
        return np.array([e.class_index for e in self.entries], dtype=np.int64)

    @property
    def class_labels(self) -> List[str]:
        names = [""] * self.class_count
        for e in self.entries:
            names[e.class_index] = e.class_label
        return names

    def to_json(self) -> str:
        return json.dumps(
            [
                {"path": e.path, "class_index": e.class_index, "class_label": e.class_label}
                for e in self.entries
            ],
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        rows = json.loads(text)
        entries = tuple(ManifestEntry(r["path"], int(r["class_index"]), r["class_label"]) for r in rows)
        count = 1 + max(e.class_index for e in entries) if entries else 0
        return cls(entries, count)


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the deterministic formant-tone corpus."""

    class_count: int = 20
    clips_per_class: int = 50
    sample_rate: int = 22050
    duration_seconds: float = 1.0
    noise_level: float = 0.05
    seed: int = 7

    def __post_init__(self):
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if self.clips_per_class < 2:
            raise ValueError("clips_per_class must be >= 2")
        if self.noise_level < 0:
            raise ValueError("noise_level must be >= 0")
        if self.sample_rate <= 0 or self.duration_seconds <= 0:
            raise ValueError("sample_rate and duration_seconds must be positive")


# ---------------------------------------------------------------------------
# WAV container


def _read_chunks(data: bytes):
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedContainer("missing RIFF/WAVE header")
    riff_size = struct.unpack_from("<I", data, 4)[0]
    if riff_size + 8 > len(data):
        raise MalformedContainer(f"RIFF size {riff_size} exceeds file length {len(data)}")
    pos, end = 12, riff_size + 8
    chunks = {}
    while pos + 8 <= end:
        cid = data[pos:pos + 4]
        size = struct.unpack_from("<I", data, pos + 4)[0]
        body = pos + 8
        if body + size > end:
            raise MalformedContainer(f"chunk {cid!r} overruns container")
        chunks.setdefault(cid, data[body:body + size])
        pos = body + size + (size & 1)
    return chunks


def decode_wav(data: bytes) -> AudioClip:
    chunks = _read_chunks(data)
    if b"fmt " not in chunks or b"data" not in chunks:
        raise MalformedContainer("missing fmt or data chunk")
    fmt = chunks[b"fmt "]
    if len(fmt) < 16:
        raise MalformedContainer("fmt chunk too short")
    tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if tag == WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 26:
            raise MalformedContainer("extensible fmt chunk too short")
        tag = struct.unpack_from("<H", fmt, 24)[0]
    if channels not in (1, 2):
        raise UnsupportedEncoding(f"{channels} channels")
    if tag == WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedEncoding(f"format tag {tag:#06x} with {bits} bits per sample")
    if rate == 0:
        raise MalformedContainer("zero sample rate")
    if block_align != channels * dtype.itemsize:
        raise MalformedContainer("block_align inconsistent with channels and sample width")

    payload = chunks[b"data"]
    frames = len(payload) // block_align
    if frames == 0:
        raise EmptyAudio("data chunk holds zero frames")
    raw = np.frombuffer(payload[:frames * block_align], dtype=dtype).astype(np.float64)
    samples = raw.reshape(frames, channels).mean(axis=1) * scale
    if not np.all(np.isfinite(samples)):
        raise MalformedContainer("non-finite float samples")
    return AudioClip(samples, int(rate))


def load_wav(path: PathLike) -> AudioClip:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    try:
        return decode_wav(data)
    except (MalformedContainer, UnsupportedEncoding, EmptyAudio) as exc:
        raise type(exc)(f"{path}: {exc}") from exc


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")


def encode_wav(clip: AudioClip, encoding: str = "pcm16", channels: int = 1) -> bytes:
    if encoding == "pcm16":
        tag, payload = WAVE_FORMAT_PCM, quantize_pcm16(clip.samples)
    elif encoding == "float32":
        tag, payload = WAVE_FORMAT_IEEE_FLOAT, clip.samples.astype("<f4")
    else:
        raise UnsupportedEncoding(encoding)
    if channels == 2:
        payload = np.repeat(payload, 2)
    elif channels != 1:
        raise UnsupportedEncoding(f"{channels} channels")
    body = payload.tobytes()
    width = payload.dtype.itemsize
    fmt = struct.pack(
        "<HHIIHH", tag, channels, clip.sample_rate,
        clip.sample_rate * channels * width, channels * width, 8 * width,
    )
    out = [b"RIFF", struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(body) + (len(body) & 1)), b"WAVE",
           b"fmt ", struct.pack("<I", len(fmt)), fmt,
           b"data", struct.pack("<I", len(body)), body]
    if len(body) & 1:
        out.append(b"\x00")
    return b"".join(out)


def write_wav(path: PathLike, clip: AudioClip, encoding: str = "pcm16") -> None:
    try:
        Path(path).write_bytes(encode_wav(clip, encoding))
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Normalization


def normalize_clip(clip: AudioClip, target_rate: int, target_seconds: float) -> AudioClip:
    """Resample linearly to ``target_rate`` then pad/truncate to a fixed length."""
    if target_rate <= 0 or target_seconds <= 0:
        raise ValueError("target_rate and target_seconds must be positive")
    x = clip.samples
    if clip.sample_rate != target_rate:
        n_out = max(1, int(round(len(x) * target_rate / clip.sample_rate)))
        pos = np.arange(n_out) * (clip.sample_rate / target_rate)
        x = np.interp(pos, np.arange(len(x)), x)
    n_target = int(round(target_rate * target_seconds))
    if len(x) >= n_target:
        x = x[:n_target]
    else:
        x = np.concatenate([x, np.zeros(n_target - len(x))])
    return AudioClip(x, target_rate)


# ---------------------------------------------------------------------------
# Dataset layout


def natural_key(name: str):
    return [int(tok) if tok.isdigit() else tok.lower() for tok in re.split(r"(\d+)", name)]


def scan_dataset(root_dir: PathLike) -> DatasetManifest:
    """One class per subdirectory, natural-sorted so that "fold 2" < "fold 10"."""
    root = Path(root_dir)
    if not root.is_dir():
        raise EmptyDataset(f"{root} is not a directory")
    class_dirs = sorted((p for p in root.iterdir() if p.is_dir() and not p.name.startswith(".")),
                        key=lambda p: natural_key(p.name))
    if not class_dirs:
        raise EmptyDataset(f"{root} has no class subdirectories")
    entries = []
    for idx, d in enumerate(class_dirs):
        wavs = sorted((p for p in d.iterdir() if p.is_file() and p.suffix.lower() == ".wav"),
                      key=lambda p: natural_key(p.name))
        if not wavs:
            raise EmptyClass(f"class directory {d} contains no .wav files")
        entries.extend(ManifestEntry(str(p), idx, d.name) for p in wavs)
    return DatasetManifest(tuple(entries), len(class_dirs))


# ---------------------------------------------------------------------------
# Synthetic corpus

JITTER = 0.03
# geometric steps wider than the +-3% jitter band keep adjacent classes apart
F1_BASE, F1_STEP = 300.0, 1.08
F2_BASE, F2_STEP = 1200.0, 1.05


def formant_frequencies(class_index: int):
    return F1_BASE * F1_STEP ** class_index, F2_BASE * F2_STEP ** class_index


def synth_clip(spec: SynthSpec, class_index: int, clip_index: int) -> AudioClip:
    """Float signal for one utterance; quantization happens at write time."""
    rng = np.random.default_rng([spec.seed, class_index, clip_index])
    n = int(round(spec.sample_rate * spec.duration_seconds))
    t = np.arange(n) / spec.sample_rate
    f1, f2 = formant_frequencies(class_index)
    f1 *= 1.0 + rng.uniform(-JITTER, JITTER)
    f2 *= 1.0 + rng.uniform(-JITTER, JITTER)
    ph1, ph2 = rng.uniform(0.0, 2 * np.pi, size=2)
    gain = rng.uniform(0.8, 1.2)
    tone = 0.45 * np.sin(2 * np.pi * f1 * t + ph1) + 0.3 * np.sin(2 * np.pi * f2 * t + ph2)

    # word-like envelope: raised-cosine attack and release around a random span
    onset = rng.uniform(0.0, 0.2) * spec.duration_seconds
    length = rng.uniform(0.5, 0.7) * spec.duration_seconds
    ramp = 0.03
    env = np.clip(np.minimum((t - onset) / ramp, (onset + length - t) / ramp), 0.0, 1.0)
    env = 0.5 - 0.5 * np.cos(np.pi * env)

    x = gain * env * tone
    if spec.noise_level > 0:
        x = x + spec.noise_level * rng.standard_normal(n)
    return AudioClip(np.clip(x, -1.0, 32767 / 32768), spec.sample_rate)


def class_dir_name(class_index: int) -> str:
    return f"fold {class_index + 1}"


def generate_synthetic_corpus(spec: SynthSpec, out_dir: PathLike) -> DatasetManifest:
    root = Path(out_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
        for k in range(spec.class_count):
            d = root / class_dir_name(k)
            d.mkdir(exist_ok=True)
            for j in range(spec.clips_per_class):
                write_wav(d / f"utt_{j:03d}.wav", synth_clip(spec, k, j))
    except OSError as exc:
        raise IoFailure(f"{root}: {exc}") from exc
    return scan_dataset(root)


def write_manifest(manifest: DatasetManifest, path: PathLike) -> None:
    Path(path).write_text(manifest.to_json())
