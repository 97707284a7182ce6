"""Batch MFCC extraction and the on-disk feature cache.

Cache layout: a little-endian header ``magic, version, n_coefficients,
target_frames, clip_count`` followed by ``clip_count`` row-major float32
matrices.  A JSON sidecar (``<cache>.json``) maps each index to its manifest
entry and the number of frames backed by audio.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List

import numpy as np

from .audio_io import DatasetManifest, ManifestEntry, load_wav, normalize_clip
from .errors import CacheError
from .fsutil import atomic_write
from .mfcc import MfccConfig, MfccExtractor, MfccMatrix, summarize_mean

CACHE_MAGIC = b"MFCCCACH"
CACHE_VERSION = 1
_HEADER = struct.Struct("<8sIIII")


@dataclass
class FeatureSet:
    matrices: np.ndarray  # (clips, n_coefficients, target_frames) float32
    n_frames: np.ndarray  # frames carrying audio, per clip
    labels: np.ndarray
    entries: List[ManifestEntry]
    class_count: int
    config: MfccConfig

    def __len__(self):
        return len(self.labels)

    def mean_vectors(self) -> np.ndarray:
        return np.stack([
            summarize_mean(MfccMatrix(m.astype(np.float64), int(n)))
            for m, n in zip(self.matrices, self.n_frames)
        ])

    def model_inputs(self, architecture: str) -> np.ndarray:
        """MLP gets mean vectors; every other model gets (1, coefficients, frames) maps."""
        if architecture == "mlp":
            return self.mean_vectors()
        return self.matrices[:, None, :, :].astype(np.float64)


def extract_features(manifest: DatasetManifest, cfg: MfccConfig = MfccConfig(),
                     target_seconds: float = 1.0) -> FeatureSet:
    extractor = MfccExtractor(cfg)
    mats = np.empty((len(manifest), cfg.n_coefficients, cfg.target_frames), dtype=np.float32)
    n_frames = np.empty(len(manifest), dtype=np.int64)
    for i, entry in enumerate(manifest.entries):
        clip = normalize_clip(load_wav(entry.path), cfg.sample_rate, target_seconds)
        m = extractor(clip)
        mats[i] = m.coefficients
        n_frames[i] = m.n_frames
    return FeatureSet(mats, n_frames, manifest.labels, list(manifest.entries), manifest.class_count, cfg)


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def save_cache(fs: FeatureSet, path) -> None:
    path = Path(path)
    n, c, t = fs.matrices.shape
    body = _HEADER.pack(CACHE_MAGIC, CACHE_VERSION, c, t, n) + np.ascontiguousarray(fs.matrices, "<f4").tobytes()
    sidecar = {
        "mfcc_config": asdict(fs.config),
        "class_count": fs.class_count,
        "entries": [
            {"index": i, "path": e.path, "class_index": e.class_index,
             "class_label": e.class_label, "n_frames": int(nf)}
            for i, (e, nf) in enumerate(zip(fs.entries, fs.n_frames))
        ],
    }
    atomic_write(path, body)
    atomic_write(sidecar_path(path), (json.dumps(sidecar, indent=1) + "\n").encode())


def load_cache(path) -> FeatureSet:
    path = Path(path)
    try:
        data = path.read_bytes()
        meta = json.loads(sidecar_path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CacheError(f"cannot read feature cache {path}: {exc}") from exc
    if len(data) < _HEADER.size:
        raise CacheError(f"{path}: truncated header")
    magic, version, c, t, n = _HEADER.unpack_from(data)
    if magic != CACHE_MAGIC or version != CACHE_VERSION:
        raise CacheError(f"{path}: not a version-{CACHE_VERSION} feature cache")
    expected = _HEADER.size + 4 * n * c * t
    if len(data) != expected:
        raise CacheError(f"{path}: expected {expected} bytes, found {len(data)}")
    mats = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(n, c, t).astype(np.float32)
    rows = meta["entries"]
    if len(rows) != n:
        raise CacheError(f"{path}: sidecar lists {len(rows)} clips, cache holds {n}")
    entries = [ManifestEntry(r["path"], int(r["class_index"]), r["class_label"]) for r in rows]
    cfg = MfccConfig(**meta["mfcc_config"])
    if (cfg.n_coefficients, cfg.target_frames) != (c, t):
        raise CacheError(f"{path}: header shape ({c}, {t}) disagrees with sidecar config")
    return FeatureSet(
        mats,
        np.array([int(r["n_frames"]) for r in rows], dtype=np.int64),
        np.array([e.class_index for e in entries], dtype=np.int64),
        entries,
        int(meta["class_count"]),
        cfg,
    )
