"""MFCC extraction: pre-emphasis, Hamming framing, FFT power spectrum,
mel filterbank, log and orthonormal DCT-II.

All stages are pure numpy functions. Frames are processed as a 2-D array so a
whole clip goes through each stage in one call.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from kwstm.audio import AudioClip
from kwstm.errors import ConfigError, DimensionError, ParseError

LOG_FLOOR = 1e-10
_CACHE_HEADER = struct.Struct("<QQ")


def is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def next_power_of_two(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


@dataclass(frozen=True)
class MfccConfig:
    window_length_s: float = 0.025
    window_step_s: float = 0.010
    pre_emphasis: float = 0.97
    n_filters: int = 26
    n_ceps: int = 13
    fft_size: int = 512
    sample_rate: int = 16000

    def __post_init__(self):
        if self.window_length_s <= 0 or self.window_step_s <= 0:
            raise ConfigError("window length and step must be positive")
        if not 0 <= self.pre_emphasis < 1:
            raise ConfigError(f"pre_emphasis must lie in [0, 1), got {self.pre_emphasis}")
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if not is_power_of_two(self.fft_size):
            raise ConfigError(f"fft_size must be a power of two, got {self.fft_size}")
        if self.fft_size < self.frame_length:
            raise ConfigError(f"fft_size {self.fft_size} is shorter than the {self.frame_length}-sample window")
        if not 1 <= self.n_ceps <= self.n_filters:
            raise ConfigError("need 1 <= n_ceps <= n_filters")

    @property
    def frame_length(self) -> int:
        return max(1, int(round(self.window_length_s * self.sample_rate)))

    @property
    def frame_step(self) -> int:
        return max(1, int(round(self.window_step_s * self.sample_rate)))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def fitted(cls, **kwargs) -> "MfccConfig":
        """Build a config, growing ``fft_size`` to cover the window when it is not given."""
        if "fft_size" not in kwargs or kwargs["fft_size"] is None:
            defaults = cls()
            rate = kwargs.get("sample_rate", defaults.sample_rate)
            length = kwargs.get("window_length_s", defaults.window_length_s)
            kwargs["fft_size"] = max(defaults.fft_size, next_power_of_two(int(round(length * rate))))
        return cls(**kwargs)


@dataclass(frozen=True)
class MfccMatrix:
    values: np.ndarray
    config: MfccConfig

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def coeffs_per_frame(self) -> int:
        return self.values.shape[1]


def frame_count(n_samples: int, frame_length: int, frame_step: int) -> int:
    if n_samples < frame_length:
        return 1
    return 1 + (n_samples - frame_length) // frame_step


def pre_emphasize(samples, alpha: float) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    return np.concatenate([x[:1], x[1:] - alpha * x[:-1]])


@lru_cache(maxsize=32)
def hamming(length: int) -> np.ndarray:
    if length == 1:
        w = np.ones(1)
    else:
        n = np.arange(length)
        w = 0.54 - 0.46 * np.cos(2 * np.pi * n / (length - 1))
    w.setflags(write=False)
    return w


def frame_and_window(samples, config: MfccConfig) -> np.ndarray:
    """Slice into Hamming-weighted frames of ``config.frame_length`` samples.

    Returns an array of shape ``(frames, frame_length)``. A clip shorter than one
    window yields a single zero-padded frame.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot frame an empty signal")
    length, step = config.frame_length, config.frame_step
    n_frames = frame_count(len(x), length, step)
    needed = (n_frames - 1) * step + length
    if needed > len(x):
        x = np.concatenate([x, np.zeros(needed - len(x))])
    idx = np.arange(n_frames)[:, None] * step + np.arange(length)[None, :]
    return x[idx] * hamming(length)


@lru_cache(maxsize=16)
def _bit_reverse_permutation(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft_radix2(x) -> np.ndarray:
    """Iterative decimation-in-time radix-2 FFT along the last axis."""
    x = np.asarray(x)
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise DimensionError(f"radix-2 FFT needs a power-of-two length, got {n}")
    lead = x.shape[:-1]
    out = x[..., _bit_reverse_permutation(n)].astype(np.complex128)
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = out.reshape(*lead, n // size, size)
        even = blocks[..., :half]
        odd = blocks[..., half:] * twiddle
        out = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
        size *= 2
    return out


def power_spectrum(frame, fft_size: int) -> np.ndarray:
    """``|X[k]|^2 / fft_size`` for k = 0..fft_size/2 of the zero-padded frame(s)."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[-1] > fft_size:
        raise DimensionError(f"frame of {frame.shape[-1]} samples exceeds fft_size {fft_size}")
    pad = [(0, 0)] * (frame.ndim - 1) + [(0, fft_size - frame.shape[-1])]
    spectrum = fft_radix2(np.pad(frame, pad))[..., : fft_size // 2 + 1]
    return (spectrum.real**2 + spectrum.imag**2) / fft_size


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=32)
def mel_filter_weights(n_filters: int, sample_rate: int, fft_size: int) -> np.ndarray:
    """Triangular filter weights, shape ``(n_filters, fft_size // 2 + 1)``.

    Filter j rises from mel point j to j+1 and falls to j+2 of an
    ``n_filters + 2`` point grid spanning 0 Hz to Nyquist. Weights are evaluated
    at bin centre frequencies; a filter too narrow to cover any bin gets unit
    weight on the bin nearest its peak.
    """
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_filters + 2))
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    weights = np.zeros((n_filters, freqs.size))
    for j in range(n_filters):
        lo, mid, hi = edges[j], edges[j + 1], edges[j + 2]
        rising = (freqs - lo) / (mid - lo)
        falling = (hi - freqs) / (hi - mid)
        weights[j] = np.clip(np.minimum(rising, falling), 0.0, None)
        if not weights[j].any():
            weights[j, int(np.argmin(np.abs(freqs - mid)))] = 1.0
    weights.setflags(write=False)
    return weights


def mel_filterbank(power, n_filters: int, sample_rate: int, fft_size: int) -> np.ndarray:
    power = np.asarray(power, dtype=np.float64)
    if power.shape[-1] != fft_size // 2 + 1:
        raise DimensionError(f"spectrum length {power.shape[-1]} does not match fft_size {fft_size}")
    return power @ mel_filter_weights(n_filters, sample_rate, fft_size).T


@lru_cache(maxsize=16)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis; ``dct_matrix(n) @ x`` transforms, ``.T`` inverts."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    basis = np.cos(np.pi * k * (2 * i + 1) / (2 * n)) * np.sqrt(2.0 / n)
    basis[0] /= np.sqrt(2.0)
    basis.setflags(write=False)
    return basis


def dct2(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x @ dct_matrix(x.shape[-1]).T


def idct2(c) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    return c @ dct_matrix(c.shape[-1])


def log_dct(energies, n_ceps: int) -> np.ndarray:
    logged = np.log(np.maximum(np.asarray(energies, dtype=np.float64), LOG_FLOOR))
    return dct2(logged)[..., :n_ceps]


def extract_mfcc(clip: AudioClip, config: MfccConfig) -> MfccMatrix:
    if clip.sample_rate != config.sample_rate:
        raise DimensionError(f"clip sample rate {clip.sample_rate} does not match config {config.sample_rate}")
    frames = frame_and_window(pre_emphasize(clip.samples, config.pre_emphasis), config)
    power = power_spectrum(frames, config.fft_size)
    energies = mel_filterbank(power, config.n_filters, config.sample_rate, config.fft_size)
    return MfccMatrix(values=log_dct(energies, config.n_ceps), config=config)


def write_mfcc_csv(path: str | Path, matrix: MfccMatrix) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in matrix.values:
            writer.writerow([repr(float(v)) for v in row])


def write_matrix_cache(path: str | Path, values: np.ndarray) -> None:
    """Binary dump: ``<u8 frames><u8 coeffs>`` followed by little-endian f64 values."""
    values = np.ascontiguousarray(values, dtype="<f8")
    rows, cols = values.shape
    with open(path, "wb") as fh:
        fh.write(_CACHE_HEADER.pack(rows, cols))
        fh.write(values.tobytes())


def read_matrix_cache(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _CACHE_HEADER.size:
        raise ParseError(f"{path}: truncated header")
    rows, cols = _CACHE_HEADER.unpack_from(data)
    body = data[_CACHE_HEADER.size :]
    if len(body) != rows * cols * 8:
        raise ParseError(f"{path}: expected {rows}x{cols} values, found {len(body)} bytes")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).copy()
