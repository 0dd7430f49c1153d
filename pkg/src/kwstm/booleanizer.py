"""Quantile-bin Booleanization of real-valued features.

Each feature is mapped to the index of the quantile bin it falls in, and the
index is written big-endian in ``ceil(log2(n_bins))`` bits.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from kwstm.errors import DimensionError, InsufficientDataError, ParseError


def bits_for_bins(n_bins: int) -> int:
    if n_bins < 2:
        raise ValueError("n_bins must be at least 2")
    return math.ceil(math.log2(n_bins))


def flatten_mfcc(matrix) -> np.ndarray:
    """Row-major flattening: all coefficients of frame 0, then frame 1, ..."""
    values = getattr(matrix, "values", matrix)
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DimensionError("cannot flatten an empty matrix")
    return values.reshape(-1)


@dataclass
class QuantileEncoder:
    n_bins: int
    boundaries: np.ndarray  # (n_features, n_bins - 1), rows non-decreasing

    @property
    def n_features(self) -> int:
        return self.boundaries.shape[0]

    @property
    def bits_per_feature(self) -> int:
        return bits_for_bins(self.n_bins)

    @property
    def total_booleans(self) -> int:
        return self.n_features * self.bits_per_feature

    @classmethod
    def fit(cls, training_features, n_bins: int) -> "QuantileEncoder":
        """Nearest-rank quantile boundaries per column, fit on training rows only."""
        x = np.asarray(training_features, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if n_bins < 2:
            raise ValueError("n_bins must be at least 2")
        rows = x.shape[0]
        if rows < n_bins:
            raise InsufficientDataError(f"{rows} rows cannot define {n_bins} quantile bins")
        ranks = [math.ceil(rows * j / n_bins) - 1 for j in range(1, n_bins)]
        ordered = np.sort(x, axis=0)
        return cls(n_bins=n_bins, boundaries=np.ascontiguousarray(ordered[ranks].T))

    def bin_indices(self, features) -> np.ndarray:
        """Number of boundaries strictly below each value; accepts one row or a batch."""
        x = np.asarray(features, dtype=np.float64)
        if x.shape[-1] != self.n_features:
            raise DimensionError(f"expected {self.n_features} features, got {x.shape[-1]}")
        return (self.boundaries < x[..., None]).sum(axis=-1)

    def transform(self, features) -> np.ndarray:
        """Encode one feature vector (or a batch of rows) into a uint8 bit array."""
        idx = self.bin_indices(features)
        width = self.bits_per_feature
        shifts = np.arange(width - 1, -1, -1)
        bits = (idx[..., None] >> shifts) & 1
        return bits.reshape(*idx.shape[:-1], self.n_features * width).astype(np.uint8)

    def decode_bins(self, bits) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.int64)
        width = self.bits_per_feature
        grouped = bits.reshape(*bits.shape[:-1], self.n_features, width)
        return grouped @ (1 << np.arange(width - 1, -1, -1))

    def to_dict(self) -> dict:
        return {
            "n_bins": self.n_bins,
            "n_features": self.n_features,
            "boundaries": self.boundaries.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QuantileEncoder":
        try:
            boundaries = np.asarray(data["boundaries"], dtype=np.float64).reshape(
                int(data["n_features"]), int(data["n_bins"]) - 1
            )
            return cls(n_bins=int(data["n_bins"]), boundaries=boundaries)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad encoder record: {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "QuantileEncoder":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        return cls.from_dict(data)
