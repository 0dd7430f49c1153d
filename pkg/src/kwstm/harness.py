"""Experiment orchestration: feature caching, training, evaluation, sweeps."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import shutil
import tempfile
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from kwstm.audio import SPLIT_NAMES, DatasetSplit, build_split, load_clip
from kwstm.booleanizer import QuantileEncoder, flatten_mfcc
from kwstm.errors import ConfigError, KwsError, ModelDataMismatch, ParseError, StaleCacheError
from kwstm.mfcc import MfccConfig, extract_mfcc, next_power_of_two
from kwstm.tm import TMHyperparams, TsetlinMachine, fit, load_model, save_model

logger = logging.getLogger(__name__)

KEYWORD_PRESETS = {
    "baseline3": ["yes", "no", "stop"],
    "baseline4": ["yes", "no", "stop", "seven"],
    "similar4": ["yes", "no", "stop", "go"],
    "nine": ["yes", "no", "stop", "seven", "zero", "nine", "five", "one", "two"],
}

SWEEP_PARAMETERS = ("window_length_s", "window_step_s", "n_bins", "keywords", "clauses_per_class", "T", "s")
_FEATURE_PARAMETERS = {"window_length_s", "window_step_s", "n_bins", "keywords"}

CACHE_META = "cache_meta.json"
SPLIT_MANIFEST = "split.json"
ENCODER_FILE = "encoder.json"


def resolve_keywords(value) -> list[str]:
    if isinstance(value, str):
        if value in KEYWORD_PRESETS:
            return list(KEYWORD_PRESETS[value])
        return [kw.strip() for kw in value.split(",") if kw.strip()]
    return list(value)


@dataclass
class SweepSpec:
    parameter: str
    values: list

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"cannot sweep {self.parameter!r}; choose from {', '.join(SWEEP_PARAMETERS)}")
        if not self.values:
            raise ConfigError("sweep needs at least one value")


@dataclass
class ExperimentConfig:
    corpus_root: str = "data/speech_commands"
    keywords: list[str] = field(default_factory=lambda: list(KEYWORD_PRESETS["baseline4"]))
    mfcc: MfccConfig = field(default_factory=MfccConfig)
    n_bins: int = 2
    hyperparams: TMHyperparams = field(default_factory=TMHyperparams)
    sweep: SweepSpec | None = None
    output_dir: str = "runs/default"
    split_seed: int = 42
    cache_dir: str | None = None

    def __post_init__(self):
        self.keywords = resolve_keywords(self.keywords)
        if not self.keywords:
            raise ConfigError("no keywords given")
        if len(set(self.keywords)) != len(self.keywords):
            raise ConfigError("duplicate keywords")
        if self.n_bins < 2:
            raise ConfigError("n_bins must be at least 2")

    @property
    def cache_path(self) -> Path:
        return Path(self.cache_dir) if self.cache_dir else Path(self.output_dir) / "cache"

    def to_dict(self) -> dict:
        out = asdict(self)
        if self.sweep is None:
            out["sweep"] = None
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        if "mfcc" in data and isinstance(data["mfcc"], dict):
            data["mfcc"] = MfccConfig.fitted(**data["mfcc"])
        if "hyperparams" in data and isinstance(data["hyperparams"], dict):
            data["hyperparams"] = TMHyperparams(**data["hyperparams"])
        if data.get("sweep") is not None and isinstance(data["sweep"], dict):
            data["sweep"] = SweepSpec(**data["sweep"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    def with_value(self, parameter: str, value) -> "ExperimentConfig":
        """Copy with one sweepable parameter replaced."""
        if parameter in ("window_length_s", "window_step_s"):
            mfcc = asdict(self.mfcc)
            mfcc[parameter] = float(value)
            frame = int(round(mfcc["window_length_s"] * mfcc["sample_rate"]))
            mfcc["fft_size"] = max(mfcc["fft_size"], next_power_of_two(frame))
            return replace(self, mfcc=MfccConfig(**mfcc))
        if parameter == "n_bins":
            return replace(self, n_bins=int(value))
        if parameter == "keywords":
            return replace(self, keywords=resolve_keywords(value))
        if parameter == "clauses_per_class":
            return replace(self, hyperparams=replace(self.hyperparams, clauses_per_class=int(value)))
        if parameter == "T":
            return replace(self, hyperparams=replace(self.hyperparams, T=int(value)))
        if parameter == "s":
            return replace(self, hyperparams=replace(self.hyperparams, s=float(value)))
        raise ConfigError(f"cannot sweep {parameter!r}")


def _corpus_fingerprint(corpus_root: Path, split: DatasetSplit) -> list:
    out = []
    for sid in sorted(split.labels):
        st = (corpus_root / sid).stat()
        out.append([sid, st.st_size, st.st_mtime_ns])
    return out


def cache_key(config: ExperimentConfig, split: DatasetSplit) -> str:
    payload = {
        "keywords": config.keywords,
        "mfcc": config.mfcc.to_dict(),
        "n_bins": config.n_bins,
        "split_seed": config.split_seed,
        "files": _corpus_fingerprint(Path(config.corpus_root), split),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _feature_key(config: ExperimentConfig) -> dict:
    return {
        "keywords": config.keywords,
        "mfcc": config.mfcc.to_dict(),
        "n_bins": config.n_bins,
        "split_seed": config.split_seed,
    }


def extract_features(config: ExperimentConfig, source_ids: list[str]) -> np.ndarray:
    rows = []
    for sid in source_ids:
        clip = load_clip(config.corpus_root, sid, config.mfcc.sample_rate)
        rows.append(flatten_mfcc(extract_mfcc(clip, config.mfcc)))
    return np.vstack(rows)


def cmd_prepare(config: ExperimentConfig) -> Path:
    """Extract MFCCs, fit the encoder on the train split and write the feature cache.

    Rerunning with unchanged inputs leaves the existing cache untouched.
    """
    split = build_split(config.corpus_root, config.keywords, seed=config.split_seed)
    key = cache_key(config, split)
    cache = config.cache_path
    meta_path = cache / CACHE_META
    if meta_path.exists():
        try:
            if json.loads(meta_path.read_text()).get("cache_key") == key:
                logger.info("feature cache %s is up to date", cache)
                return cache
        except json.JSONDecodeError:
            pass
    cache.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".prepare-", dir=cache.parent))
    try:
        index = split.class_index
        raw = {}
        for name in SPLIT_NAMES:
            ids = split.subset(name)
            logger.info("extracting %d %s clips", len(ids), name)
            raw[name] = extract_features(config, ids) if ids else None
        if raw["train"] is None:
            raise KwsError("training split is empty")
        encoder = QuantileEncoder.fit(raw["train"], config.n_bins)
        encoder.save(staging / ENCODER_FILE)
        split.save_manifest(staging / SPLIT_MANIFEST)
        for name in SPLIT_NAMES:
            ids = split.subset(name)
            n_feat = encoder.n_features
            features = raw[name] if raw[name] is not None else np.zeros((0, n_feat))
            bits = np.vstack([encoder.transform(features[i : i + 256]) for i in range(0, len(features), 256)]) \
                if len(features) else np.zeros((0, encoder.total_booleans), dtype=np.uint8)
            labels = np.array([index[split.labels[sid]] for sid in ids], dtype=np.int64)
            np.savez(staging / f"{name}.npz", features=features, bits=bits, labels=labels, source_ids=np.array(ids, dtype=str))
        meta = {
            "cache_key": key,
            "feature_key": _feature_key(config),
            "keywords": config.keywords,
            "feature_count": encoder.n_features,
            "total_booleans": encoder.total_booleans,
            "n_bins": config.n_bins,
            "mfcc": config.mfcc.to_dict(),
            "counts": {name: len(split.subset(name)) for name in SPLIT_NAMES},
        }
        (staging / CACHE_META).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        staging.chmod(0o755)
        if cache.exists():
            shutil.rmtree(cache)
        os.replace(staging, cache)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    return cache


@dataclass
class CachedSplit:
    features: np.ndarray
    bits: np.ndarray
    labels: np.ndarray
    source_ids: list[str]


def read_cache_meta(cache: str | Path) -> dict:
    path = Path(cache) / CACHE_META
    if not path.exists():
        raise StaleCacheError(f"no feature cache at {cache}; run prepare first")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def load_cached_split(cache: str | Path, name: str) -> CachedSplit:
    with np.load(Path(cache) / f"{name}.npz") as data:
        return CachedSplit(
            features=data["features"],
            bits=data["bits"],
            labels=data["labels"],
            source_ids=[str(s) for s in data["source_ids"]],
        )


def check_cache(config: ExperimentConfig) -> dict:
    meta = read_cache_meta(config.cache_path)
    if meta.get("feature_key") != _feature_key(config):
        raise StaleCacheError(f"feature cache at {config.cache_path} was built for a different configuration")
    return meta


@dataclass
class MetricsRecord:
    config: dict
    train_acc: float
    test_acc: float
    val_acc: float
    epoch_trace: list[dict]
    op_counters: dict
    inference_clause_evaluations: int
    wall_time_s: float
    feature_count: int
    total_booleans: int

    @property
    def overfit_gap(self) -> float:
        return self.train_acc - self.test_acc

    def to_dict(self) -> dict:
        out = asdict(self)
        out["overfit_gap"] = self.overfit_gap
        return out


def cmd_train(config: ExperimentConfig) -> MetricsRecord:
    """Train on the cached features; writes model.json, metrics.json and trace.csv."""
    meta = check_cache(config)
    cache = config.cache_path
    splits = {name: load_cached_split(cache, name) for name in SPLIT_NAMES}
    encoder = QuantileEncoder.load(cache / ENCODER_FILE)
    hp = config.hyperparams
    model = TsetlinMachine(len(config.keywords), encoder.total_booleans, hp, keywords=config.keywords, encoder=encoder)
    train = splits["train"]
    evaluation = {name: (splits[name].bits, splits[name].labels) for name in ("test", "validation")}
    start = time.perf_counter()
    trace = fit(model, train.bits, train.labels, evaluation=evaluation)
    training_counters = model.counters.snapshot()
    accs = {
        "train": model.accuracy(train.bits, train.labels),
        "test": model.accuracy(*evaluation["test"]),
        "validation": model.accuracy(*evaluation["validation"]),
    }
    inference = model.counters.clause_evaluations - training_counters.clause_evaluations
    wall = time.perf_counter() - start

    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.json")
    record = MetricsRecord(
        config=config.to_dict(),
        train_acc=accs["train"],
        test_acc=accs["test"],
        val_acc=accs["validation"],
        epoch_trace=[
            {"epoch": r.epoch, "train_acc": r.train_acc, "test_acc": r.test_acc, "val_acc": r.val_acc, **r.counters.to_dict()}
            for r in trace
        ],
        op_counters=training_counters.to_dict(),
        inference_clause_evaluations=inference,
        wall_time_s=wall,
        feature_count=meta["feature_count"],
        total_booleans=meta["total_booleans"],
    )
    (out / "metrics.json").write_text(json.dumps(record.to_dict(), indent=2, sort_keys=True) + "\n")
    columns = ["epoch", "train_acc", "test_acc", "val_acc", "clause_evaluations", "ta_updates", "feedback_events"]
    with open(out / "trace.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(record.epoch_trace)
    logger.info("train %.2f%% test %.2f%% validation %.2f%%", accs["train"], accs["test"], accs["validation"])
    return record


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def cmd_eval(
    model_path: str | Path,
    cache: str | Path,
    split: str = "test",
    output_dir: str | Path | None = None,
    keywords: list[str] | None = None,
) -> dict:
    """Accuracy, per-class precision/recall and a confusion matrix (rows = true class)."""
    model = load_model(model_path)
    meta = read_cache_meta(cache)
    data_keywords = list(keywords) if keywords is not None else meta["keywords"]
    if model.keywords != data_keywords:
        raise ModelDataMismatch(f"model keywords {model.keywords} differ from data keywords {data_keywords}")
    if model.keywords != meta["keywords"]:
        raise ModelDataMismatch(f"model keywords {model.keywords} differ from cache keywords {meta['keywords']}")
    data = load_cached_split(cache, split)
    if data.bits.shape[1] != model.n_features:
        raise ModelDataMismatch(f"model expects {model.n_features} Booleans, cache holds {data.bits.shape[1]}")
    pred = model.predict_batch(data.bits)
    cm = confusion_matrix(data.labels, pred, model.n_classes)
    per_class = []
    for i, kw in enumerate(model.keywords):
        tp = int(cm[i, i])
        predicted = int(cm[:, i].sum())
        actual = int(cm[i].sum())
        per_class.append(
            {
                "keyword": kw,
                "support": actual,
                "precision": tp / predicted if predicted else 0.0,
                "recall": tp / actual if actual else 0.0,
            }
        )
    report = {
        "split": split,
        "samples": int(len(data.labels)),
        "accuracy": float(np.mean(pred == data.labels) * 100.0) if len(pred) else 0.0,
        "per_class": per_class,
        "confusion": cm.tolist(),
    }
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / f"confusion_{split}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["true\\predicted", *model.keywords])
            for kw, row in zip(model.keywords, cm):
                writer.writerow([kw, *row.tolist()])
        (out / f"eval_{split}.json").write_text(json.dumps(report, indent=2) + "\n")
    return report


SWEEP_COLUMNS = [
    "parameter",
    "value",
    "status",
    "error",
    "train_acc",
    "test_acc",
    "val_acc",
    "overfit_gap",
    "feature_count",
    "total_booleans",
    "clause_evaluations",
    "ta_updates",
    "feedback_events",
    "inference_clause_evaluations",
    "wall_time_s",
]


def _sweep_sort_key(value):
    if isinstance(value, (int, float)):
        return (0, float(value), "")
    keywords = resolve_keywords(value)
    return (1, float(len(keywords)), ",".join(keywords))


def _value_label(value) -> str:
    if isinstance(value, (int, float)):
        return f"{value:g}"
    return "-".join(resolve_keywords(value))


def cmd_sweep(config: ExperimentConfig) -> list[dict[str, Any]]:
    """Run prepare and train once per sweep value and write ``sweep_<parameter>.csv``.

    Points share the base feature cache when only Tsetlin Machine parameters
    change. A failing point becomes a row with status ``error``.
    """
    if config.sweep is None:
        raise ConfigError("sweep subcommand needs a sweep parameter and values")
    param = config.sweep.parameter
    base = Path(config.output_dir)
    rows = []
    for value in sorted(config.sweep.values, key=_sweep_sort_key):
        label = _value_label(value)
        row: dict[str, Any] = {"parameter": param, "value": label if param == "keywords" else value}
        try:
            point = config.with_value(param, value)
            point_dir = base / f"{param}_{label}"
            cache_dir = point_dir / "cache" if param in _FEATURE_PARAMETERS else config.cache_path
            point = replace(point, output_dir=str(point_dir), cache_dir=str(cache_dir), sweep=None)
            cmd_prepare(point)
            record = cmd_train(point)
            row.update(
                status="ok",
                error="",
                train_acc=record.train_acc,
                test_acc=record.test_acc,
                val_acc=record.val_acc,
                overfit_gap=record.overfit_gap,
                feature_count=record.feature_count,
                total_booleans=record.total_booleans,
                inference_clause_evaluations=record.inference_clause_evaluations,
                wall_time_s=round(record.wall_time_s, 3),
                **record.op_counters,
            )
        except Exception as exc:  # noqa: BLE001 - a failed point must not stop the sweep
            logger.exception("sweep point %s=%s failed", param, value)
            row.update(status="error", error=f"{type(exc).__name__}: {exc}")
        rows.append(row)
    base.mkdir(parents=True, exist_ok=True)
    with open(base / f"sweep_{param}.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, restval="")
        writer.writeheader()
        writer.writerows(rows)
    return rows


def feature_stats(features: np.ndarray, coeffs_per_frame: int | None = None) -> list[dict]:
    features = np.asarray(features, dtype=np.float64)
    mean = features.mean(axis=0)
    var = features.var(axis=0)
    constant = features.max(axis=0) == features.min(axis=0)
    rows = []
    for j in range(features.shape[1]):
        row = {"feature": j}
        if coeffs_per_frame:
            row["frame"], row["coeff"] = divmod(j, coeffs_per_frame)
        row.update(mean=float(mean[j]), variance=0.0 if constant[j] else float(var[j]), zero_variance=int(constant[j]))
        rows.append(row)
    return rows


def cmd_feature_stats(cache: str | Path, output: str | Path | None = None) -> list[dict]:
    """Per-feature mean and variance over the cached training split."""
    meta = read_cache_meta(cache)
    train = load_cached_split(cache, "train")
    rows = feature_stats(train.features, meta.get("mfcc", {}).get("n_ceps"))
    if output is not None:
        with open(output, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    return rows


def xor_dataset(repeats: int = 100) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]] * repeats, dtype=np.uint8)
    return X, X[:, 0] ^ X[:, 1]


def xor_selftest(seeds=(0, 1, 2, 3, 4), epochs: int = 200) -> dict[int, float]:
    """Train the XOR fixture once per seed; returns final training accuracy per seed."""
    X, y = xor_dataset()
    results = {}
    for seed in seeds:
        hp = TMHyperparams(s=3.9, T=10, N=100, clauses_per_class=20, epochs=epochs, seed=seed)
        model = TsetlinMachine(2, 2, hp)
        fit(model, X, y)
        results[seed] = model.accuracy(X, y)
    return results

