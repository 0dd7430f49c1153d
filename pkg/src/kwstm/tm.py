"""Multiclass Tsetlin Machine.

TA states live in one integer array of shape ``(K, m, 2F)``: K classes, m
clauses per class, 2F literals (F features followed by their negations). A
state ``v`` in ``1..2N`` means Exclude when ``v <= N`` and Include otherwise.
Even-indexed clauses vote +1, odd-indexed clauses vote -1.

The row-level functions (``evaluate_clause``, ``ta_transition``,
``type_i_feedback``, ``type_ii_feedback``) state the learning rules one clause
at a time. :meth:`TsetlinMachine.update` applies the same rules to all selected
clauses at once and consumes random numbers in the same order, so a serial
loop over the row functions reproduces it exactly.
"""

from __future__ import annotations

import base64
import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping

import numba
import numpy as np

from kwstm.errors import ConfigError, DimensionError, ModelVersionError, ParseError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class Mode(Enum):
    TRAIN = "train"
    INFER = "infer"


class Event(Enum):
    REWARD = "reward"
    PENALTY = "penalty"


@dataclass
class TMHyperparams:
    s: float = 3.9
    T: int = 23
    N: int = 100
    epochs: int = 200
    seed: int = 42
    clauses_per_class: int = 450

    def __post_init__(self):
        if not self.s > 1:
            raise ConfigError(f"s must exceed 1, got {self.s}")
        if self.T < 1:
            raise ConfigError(f"T must be at least 1, got {self.T}")
        if self.N < 1:
            raise ConfigError(f"N must be at least 1, got {self.N}")
        if self.epochs < 0:
            raise ConfigError("epochs cannot be negative")
        if self.clauses_per_class < 2 or self.clauses_per_class % 2:
            raise ConfigError(f"clauses_per_class must be a positive even number, got {self.clauses_per_class}")


@dataclass
class OpCounters:
    clause_evaluations: int = 0
    ta_updates: int = 0
    feedback_events: int = 0

    def snapshot(self) -> "OpCounters":
        return OpCounters(**asdict(self))

    def to_dict(self) -> dict:
        return asdict(self)


def make_literals(features) -> np.ndarray:
    """Features followed by their negations; works on one vector or a batch."""
    x = np.asarray(features, dtype=np.uint8)
    return np.concatenate([x, 1 - x], axis=-1)


def polarities(m: int) -> np.ndarray:
    return np.where(np.arange(m) % 2 == 0, 1, -1)


def evaluate_clause(ta_row, literals, N: int, mode: Mode = Mode.INFER, counters: OpCounters | None = None) -> int:
    ta_row = np.asarray(ta_row)
    literals = np.asarray(literals)
    if ta_row.shape != literals.shape:
        raise DimensionError(f"TA row has {ta_row.size} entries but there are {literals.size} literals")
    if counters is not None:
        counters.clause_evaluations += 1
    include = ta_row > N
    if not include.any():
        return 1 if mode is Mode.TRAIN else 0
    return int(np.all(literals[include] == 1))


def class_sum(clause_outputs, clause_polarities) -> int:
    outputs = np.asarray(clause_outputs)
    pol = np.asarray(clause_polarities)
    if outputs.shape != pol.shape:
        raise DimensionError("clause outputs and polarities differ in length")
    return int(np.dot(outputs.astype(np.int64), pol))


def ta_transition(value: int, event: Event, N: int, counters: OpCounters | None = None) -> int:
    """Reward pushes away from the centre, Penalty towards and across it."""
    if not 1 <= value <= 2 * N:
        raise ValueError(f"TA state {value} outside 1..{2 * N}")
    if counters is not None:
        counters.ta_updates += 1
    include = value > N
    if event is Event.REWARD:
        return min(value + 1, 2 * N) if include else max(value - 1, 1)
    return value - 1 if include else value + 1


def type_i_feedback(
    ta_row,
    literals,
    clause_output: int,
    s: float,
    rng: np.random.Generator,
    N: int,
    counters: OpCounters | None = None,
) -> np.ndarray:
    """Type I feedback; draws one uniform per literal, in literal order."""
    row = np.array(ta_row, dtype=np.int64)
    literals = np.asarray(literals)
    draws = rng.random(row.size)
    strong = (s - 1.0) / s
    weak = 1.0 / s
    for k in range(row.size):
        include = row[k] > N
        if clause_output == 1 and literals[k] == 1:
            if draws[k] < strong:
                row[k] = ta_transition(row[k], Event.REWARD if include else Event.PENALTY, N, counters)
        elif draws[k] < weak:
            row[k] = ta_transition(row[k], Event.PENALTY if include else Event.REWARD, N, counters)
    return row


def type_ii_feedback(ta_row, literals, clause_output: int, N: int, counters: OpCounters | None = None) -> np.ndarray:
    """Type II feedback: a firing clause gets its excluded zero literals pushed towards Include."""
    row = np.array(ta_row, dtype=np.int64)
    if clause_output != 1:
        return row
    literals = np.asarray(literals)
    for k in range(row.size):
        if literals[k] == 0 and row[k] <= N:
            row[k] = ta_transition(row[k], Event.PENALTY, N, counters)
    return row


@numba.njit(cache=True)
def _clause_outputs_kernel(states, literals, N, train):
    m, n_lit = states.shape
    out = np.zeros(m, dtype=np.uint8)
    for j in range(m):
        fires = True
        empty = True
        for k in range(n_lit):
            if states[j, k] > N:
                empty = False
                if literals[k] == 0:
                    fires = False
                    break
        if fires and (train or not empty):
            out[j] = 1
    return out


@numba.njit(cache=True)
def _type_i_kernel(states, idx, outputs, literals, draws, strong_p, weak_p, N):
    fired = 0
    for r in range(idx.shape[0]):
        j = idx[r]
        for k in range(literals.shape[0]):
            v = states[j, k]
            if outputs[j] == 1 and literals[k] == 1:
                if draws[r, k] < strong_p:
                    fired += 1
                    if v < 2 * N:
                        states[j, k] = v + 1
            elif draws[r, k] < weak_p:
                fired += 1
                if v > 1:
                    states[j, k] = v - 1
    return fired


@numba.njit(cache=True)
def _type_ii_kernel(states, idx, outputs, literals, N):
    pushed = 0
    for r in range(idx.shape[0]):
        j = idx[r]
        if outputs[j] != 1:
            continue
        for k in range(literals.shape[0]):
            if literals[k] == 0 and states[j, k] <= N:
                states[j, k] += 1
                pushed += 1
    return pushed


class TsetlinMachine:
    def __init__(
        self,
        n_classes: int,
        n_features: int,
        hyperparams: TMHyperparams | None = None,
        keywords: list[str] | None = None,
        encoder=None,
    ):
        if n_classes < 1 or n_features < 1:
            raise ConfigError("need at least one class and one feature")
        self.hyperparams = hyperparams or TMHyperparams()
        self.n_classes = n_classes
        self.n_features = n_features
        self.keywords = list(keywords) if keywords is not None else []
        if self.keywords and len(self.keywords) != n_classes:
            raise ConfigError("keyword list length must equal the class count")
        self.encoder = encoder
        hp = self.hyperparams
        dtype = np.int16 if 2 * hp.N < 2**15 else np.int64
        self.ta_states = np.full((n_classes, hp.clauses_per_class, 2 * n_features), hp.N, dtype=dtype)
        self.polarity = polarities(hp.clauses_per_class)
        self.counters = OpCounters()

    @property
    def clauses_per_class(self) -> int:
        return self.hyperparams.clauses_per_class

    def _check_features(self, bits) -> np.ndarray:
        x = np.asarray(bits, dtype=np.uint8)
        if x.shape[-1] != self.n_features:
            raise DimensionError(f"expected {self.n_features} Boolean features, got {x.shape[-1]}")
        return x

    def _class_outputs(self, cls: int, literals: np.ndarray, mode: Mode) -> np.ndarray:
        self.counters.clause_evaluations += self.clauses_per_class
        return _clause_outputs_kernel(self.ta_states[cls], literals, self.hyperparams.N, mode is Mode.TRAIN)

    def clause_outputs(self, bits, mode: Mode = Mode.INFER) -> np.ndarray:
        """Clause outputs for every class, shape ``(K, m)``."""
        literals = make_literals(self._check_features(bits))
        return np.stack([self._class_outputs(c, literals, mode) for c in range(self.n_classes)])

    def class_sums(self, bits) -> np.ndarray:
        return self.clause_outputs(bits, Mode.INFER).astype(np.int64) @ self.polarity

    def predict(self, bits) -> int:
        return int(np.argmax(self.class_sums(bits)))

    def class_sums_batch(self, X, chunk: int = 512) -> np.ndarray:
        """Inference-mode class sums for many samples, shape ``(n, K)``."""
        X = self._check_features(X)
        if X.ndim == 1:
            X = X[None, :]
        K, m = self.n_classes, self.clauses_per_class
        include = (self.ta_states > self.hyperparams.N).reshape(K * m, -1)
        nonempty = include.any(axis=1)
        include_f = include.astype(np.float32)
        sums = np.empty((X.shape[0], K), dtype=np.int64)
        for start in range(0, X.shape[0], chunk):
            zeros = 1.0 - make_literals(X[start : start + chunk]).astype(np.float32)
            fires = ((zeros @ include_f.T) == 0) & nonempty
            sums[start : start + chunk] = fires.reshape(-1, K, m).astype(np.int64) @ self.polarity
        self.counters.clause_evaluations += X.shape[0] * K * m
        return sums

    def predict_batch(self, X) -> np.ndarray:
        return np.argmax(self.class_sums_batch(X), axis=1)

    def accuracy(self, X, y) -> float:
        y = np.asarray(y)
        if len(y) == 0:
            return 0.0
        return float(np.mean(self.predict_batch(X) == y) * 100.0)

    def update(self, bits, target: int, rng: np.random.Generator) -> None:
        """One training step on a single sample."""
        if not 0 <= target < self.n_classes:
            raise ValueError(f"target class {target} outside 0..{self.n_classes - 1}")
        hp = self.hyperparams
        T, m = hp.T, self.clauses_per_class
        literals = make_literals(self._check_features(bits))
        positive = self.polarity > 0

        out_t = self._class_outputs(target, literals, Mode.TRAIN)
        v_t = min(max(class_sum(out_t, self.polarity), -T), T)
        sel_t = rng.random(m) < (T - v_t) / (2 * T)
        plan = [(target, sel_t & positive, sel_t & ~positive, out_t)]

        if self.n_classes > 1:
            neg = int(rng.integers(self.n_classes - 1))
            if neg >= target:
                neg += 1
            out_n = self._class_outputs(neg, literals, Mode.TRAIN)
            v_n = min(max(class_sum(out_n, self.polarity), -T), T)
            sel_n = rng.random(m) < (T + v_n) / (2 * T)
            plan.append((neg, sel_n & ~positive, sel_n & positive, out_n))

        type_i_rows = [np.flatnonzero(type_i) for _, type_i, _, _ in plan]
        draws = rng.random((sum(len(r) for r in type_i_rows), literals.size))
        offset = 0
        for (cls, _, type_ii, outputs), rows in zip(plan, type_i_rows):
            states = self.ta_states[cls]
            self.counters.feedback_events += len(rows) + int(type_ii.sum())
            if len(rows):
                self.counters.ta_updates += _type_i_kernel(
                    states, rows, outputs, literals, draws[offset : offset + len(rows)], (hp.s - 1.0) / hp.s, 1.0 / hp.s, hp.N
                )
                offset += len(rows)
            self.counters.ta_updates += _type_ii_kernel(states, np.flatnonzero(type_ii), outputs, literals, hp.N)


EpochCallback = Callable[[int, float, float, float, OpCounters], None]


@dataclass
class EpochRecord:
    epoch: int
    train_acc: float
    test_acc: float
    val_acc: float
    counters: OpCounters = field(default_factory=OpCounters)


def fit(
    model: TsetlinMachine,
    X_train,
    y_train,
    evaluation: Mapping[str, tuple] | None = None,
    callback: EpochCallback | None = None,
    epochs: int | None = None,
) -> list[EpochRecord]:
    """Train for ``epochs`` passes over a seeded shuffle of the training data.

    After each epoch, accuracies (percent) on the train set and on the optional
    ``evaluation["test"]`` / ``evaluation["validation"]`` sets are recorded and
    passed to ``callback``. Per-epoch evaluation is excluded from the op
    counters so they reflect training cost only.
    """
    hp = model.hyperparams
    epochs = hp.epochs if epochs is None else epochs
    X_train = np.asarray(X_train, dtype=np.uint8)
    y_train = np.asarray(y_train, dtype=np.int64)
    evaluation = evaluation or {}
    rng = np.random.default_rng(hp.seed)
    trace = []
    for epoch in range(1, epochs + 1):
        for i in rng.permutation(len(y_train)):
            model.update(X_train[i], int(y_train[i]), rng)
        training_counters = model.counters.snapshot()
        accs = [model.accuracy(X_train, y_train)]
        for name in ("test", "validation"):
            accs.append(model.accuracy(*evaluation[name]) if name in evaluation else float("nan"))
        model.counters = training_counters
        record = EpochRecord(epoch, *accs, counters=training_counters.snapshot())
        trace.append(record)
        logger.debug("epoch %d: train %.2f test %.2f val %.2f", epoch, *accs)
        if callback is not None:
            callback(epoch, *accs, record.counters)
    return trace


def _encode_states(states: np.ndarray, N: int) -> tuple[str, str]:
    dtype = "<u1" if 2 * N <= 256 else "<u2"
    return dtype, base64.b64encode((states.astype(np.int64) - 1).astype(dtype).tobytes()).decode("ascii")


def save_model(model: TsetlinMachine, path: str | Path) -> None:
    hp = model.hyperparams
    dtype, payload = _encode_states(model.ta_states, hp.N)
    encoder = model.encoder
    envelope = {
        "format_version": FORMAT_VERSION,
        "keywords": model.keywords,
        "n_classes": model.n_classes,
        "hyperparams": {"s": hp.s, "T": hp.T, "N": hp.N, "m": hp.clauses_per_class, "epochs": hp.epochs, "seed": hp.seed},
        "feature_meta": {
            "F": model.n_features,
            "n_bins": encoder.n_bins if encoder is not None else None,
            "boundaries": encoder.boundaries.tolist() if encoder is not None else None,
        },
        "ta_dtype": dtype,
        "ta_states": payload,
    }
    Path(path).write_text(json.dumps(envelope, sort_keys=True) + "\n")


def load_model(path: str | Path) -> TsetlinMachine:
    from kwstm.booleanizer import QuantileEncoder

    try:
        data = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: not a model envelope")
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"{path}: format_version {version!r}, expected {FORMAT_VERSION}")
    try:
        h = data["hyperparams"]
        hp = TMHyperparams(s=h["s"], T=h["T"], N=h["N"], clauses_per_class=h["m"], epochs=h["epochs"], seed=h["seed"])
        meta = data["feature_meta"]
        encoder = None
        if meta.get("boundaries") is not None:
            encoder = QuantileEncoder.from_dict(
                {"n_bins": meta["n_bins"], "n_features": len(meta["boundaries"]), "boundaries": meta["boundaries"]}
            )
        model = TsetlinMachine(data["n_classes"], meta["F"], hp, keywords=data["keywords"] or None, encoder=encoder)
        raw = base64.b64decode(data["ta_states"], validate=True)
        states = np.frombuffer(raw, dtype=data["ta_dtype"]).astype(np.int64) + 1
        states = states.reshape(model.ta_states.shape)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if states.min() < 1 or states.max() > 2 * hp.N:
        raise ParseError(f"{path}: TA state out of range")
    model.ta_states[...] = states
    return model
