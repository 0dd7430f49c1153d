"""WAV ingestion and deterministic train/test/validation splitting.

The corpus layout is ``<root>/<keyword>/<file>.wav``. Only 16-bit PCM mono
files are accepted; every sample is scaled to [-1, 1) by dividing by 32768.
"""

from __future__ import annotations

import hashlib
import json
import logging
import wave
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from kwstm.errors import EmptyClassError, MissingClassError, ParseError, UnsupportedFormat

logger = logging.getLogger(__name__)

CLIP_SECONDS = 1
SPLIT_NAMES = ("train", "test", "validation")
# buckets 0-7 train, 8 test, 9 validation
_BUCKET_TO_SPLIT = {**{b: "train" for b in range(8)}, 8: "test", 9: "validation"}


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    label: str = ""
    source_id: str = ""

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class DatasetSplit:
    """Partition of a corpus into train/test/validation lists of source ids."""

    train: list[str]
    test: list[str]
    validation: list[str]
    keywords: list[str]
    seed: int = 0
    labels: dict[str, str] = field(default_factory=dict)

    @property
    def class_index(self) -> dict[str, int]:
        return {kw: i for i, kw in enumerate(self.keywords)}

    def subset(self, name: str) -> list[str]:
        if name not in SPLIT_NAMES:
            raise KeyError(f"unknown split {name!r}")
        return getattr(self, name)

    def assignments(self) -> dict[str, str]:
        out = {}
        for name in SPLIT_NAMES:
            for sid in self.subset(name):
                out[sid] = name
        return dict(sorted(out.items()))

    def to_manifest(self) -> dict:
        return {"seed": self.seed, "keywords": list(self.keywords), "assignments": self.assignments()}

    def save_manifest(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_manifest(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_manifest(cls, data: dict) -> "DatasetSplit":
        parts: dict[str, list[str]] = {name: [] for name in SPLIT_NAMES}
        labels = {}
        for sid, name in sorted(data["assignments"].items()):
            parts[name].append(sid)
            labels[sid] = sid.split("/", 1)[0]
        return cls(keywords=list(data["keywords"]), seed=int(data["seed"]), labels=labels, **parts)

    @classmethod
    def load_manifest(cls, path: str | Path) -> "DatasetSplit":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        return cls.from_manifest(data)


def read_wav(path: str | Path, label: str = "", source_id: str = "") -> AudioClip:
    """Read a 16-bit PCM mono WAV file into an :class:`AudioClip`."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            n = wf.getnframes()
            if channels != 1:
                raise UnsupportedFormat(f"{path}: {channels} channels, only mono is supported")
            if width != 2:
                raise UnsupportedFormat(f"{path}: {8 * width}-bit samples, only 16-bit is supported")
            raw = wf.readframes(n)
    except wave.Error as exc:
        if "unknown format" in str(exc):
            raise UnsupportedFormat(f"{path}: {exc}") from exc
        raise ParseError(f"{path}: {exc}") from exc
    except EOFError as exc:
        raise ParseError(f"{path}: truncated header") from exc
    if rate <= 0:
        raise ParseError(f"{path}: invalid sample rate {rate}")
    if len(raw) % 2:
        raw = raw[:-1]
    pcm = np.frombuffer(raw, dtype="<i2")
    samples = pcm.astype(np.float64) / 32768.0
    return AudioClip(samples=samples, sample_rate=rate, label=label, source_id=source_id or path.name)


def write_wav(path: str | Path, samples: Sequence[float] | np.ndarray, sample_rate: int) -> None:
    """Write amplitudes in [-1, 1] as 16-bit PCM mono. Used for fixtures and tooling."""
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())


def normalize_length(clip: AudioClip, target_samples: int) -> AudioClip:
    """Zero-pad or truncate at the end so the clip holds exactly ``target_samples``."""
    if target_samples <= 0:
        raise ValueError("target_samples must be positive")
    n = len(clip.samples)
    if n == target_samples:
        return clip
    if n > target_samples:
        samples = clip.samples[:target_samples].copy()
    else:
        samples = np.concatenate([clip.samples, np.zeros(target_samples - n)])
    return replace(clip, samples=samples)


def split_bucket(source_id: str, seed: int) -> int:
    """Stable bucket in 0..9 from a 64-bit hash of (seed, source_id)."""
    digest = hashlib.blake2b(f"{seed}\x00{source_id}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % 10


def assign_split(source_id: str, seed: int) -> str:
    return _BUCKET_TO_SPLIT[split_bucket(source_id, seed)]


def list_class_files(corpus_root: str | Path, keyword: str) -> list[str]:
    root = Path(corpus_root)
    class_dir = root / keyword
    if not class_dir.is_dir():
        raise MissingClassError(f"no directory for keyword {keyword!r} under {root}")
    files = sorted(f"{keyword}/{p.name}" for p in class_dir.iterdir() if p.suffix.lower() == ".wav" and p.is_file())
    if not files:
        raise EmptyClassError(f"keyword {keyword!r} has no WAV files")
    if len(files) < 10:
        logger.warning("keyword %r has only %d WAV files", keyword, len(files))
    return files


def build_split(
    corpus_root: str | Path,
    keywords: Iterable[str],
    ratios: tuple[int, int, int] = (8, 1, 1),
    seed: int = 42,
) -> DatasetSplit:
    """Assign every WAV file of each keyword to a split by hashing its relative path."""
    if tuple(ratios) != (8, 1, 1):
        raise ValueError("only the 8:1:1 bucket layout is supported")
    keywords = list(keywords)
    parts: dict[str, list[str]] = {name: [] for name in SPLIT_NAMES}
    labels = {}
    for kw in keywords:
        for sid in list_class_files(corpus_root, kw):
            parts[assign_split(sid, seed)].append(sid)
            labels[sid] = kw
    for name in SPLIT_NAMES:
        parts[name].sort()
    return DatasetSplit(keywords=keywords, seed=seed, labels=labels, **parts)


def load_clip(corpus_root: str | Path, source_id: str, sample_rate: int, label: str = "") -> AudioClip:
    """Read one corpus file and force it to ``CLIP_SECONDS`` of audio."""
    clip = read_wav(Path(corpus_root) / source_id, label=label, source_id=source_id)
    if clip.sample_rate != sample_rate:
        raise UnsupportedFormat(f"{source_id}: sample rate {clip.sample_rate}, expected {sample_rate}")
    return normalize_length(clip, sample_rate * CLIP_SECONDS)
