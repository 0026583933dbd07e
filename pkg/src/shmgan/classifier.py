"""Damage classifier: the critic architecture with a sigmoid head and no dropout."""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import AdamWState, Tensor, adamw_step, grad, no_grad, ops
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint
from .signals import ScenarioSplit, Segment, stack
from .wdcgan import ConfigError, DivergenceError, GanConfig, build_critic

BCE_CLAMP = 1e-12


@dataclass
class ClassifierConfig:
    seg_len: int = 1024
    channel_widths: list[int] = field(default_factory=lambda: [256, 128, 64, 32, 1])
    lr: float = 8e-4
    minibatch: int = 30
    epochs: int = 300
    threshold: float = 0.49
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    leaky_alpha: float = 0.2
    init_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        self.channel_widths = list(self.channel_widths)
        self.validate()

    def validate(self) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.lr < 0 or self.minibatch < 1 or self.epochs < 1:
            raise ConfigError("lr must be >= 0, minibatch and epochs >= 1")
        self.architecture()

    def architecture(self) -> GanConfig:
        return GanConfig(seg_len=self.seg_len, channel_widths=self.channel_widths,
                         leaky_alpha=self.leaky_alpha, init_std=self.init_std,
                         critic_dropout_p=0.0, seed=self.seed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown classifier config keys: {sorted(unknown)}")
        return cls(**d)


def build_classifier(cfg: ClassifierConfig, rng: np.random.Generator | None = None):
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    return build_critic(cfg.architecture(), head="sigmoid", use_dropout=False, rng=rng)


def bce_loss(scores, truths) -> Tensor:
    """-mean(t log s + (1 - t) log(1 - s)), with s clamped 1e-12 away from 0 and 1."""
    scores = scores if isinstance(scores, Tensor) else Tensor(scores)
    t = np.asarray(truths.data if isinstance(truths, Tensor) else truths, dtype=np.float64)
    if scores.shape != t.shape:
        raise ValueError(f"scores {scores.shape} and truths {t.shape} differ in shape")
    if np.any((scores.data < 0) | (scores.data > 1)) or not np.all(np.isfinite(scores.data)):
        raise ValueError("scores must lie in [0, 1]")
    s = ops.clip(scores, BCE_CLAMP, 1.0 - BCE_CLAMP)
    tt = Tensor(t)
    ll = ops.add(ops.mul(tt, ops.log(s)), ops.mul(Tensor(1.0 - t), ops.log(ops.sub(1.0, s))))
    return ops.neg(ops.mean(ll))


@dataclass
class ClassifierHistory:
    losses: list[float] = field(default_factory=list)

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss"])
            for i, v in enumerate(self.losses, start=1):
                w.writerow([i, repr(float(v))])
        return path


def _split_arrays(pairs: Sequence[tuple[Segment, int]]):
    return stack([s for s, _ in pairs]), np.array([lab for _, lab in pairs], dtype=np.float64)


def train_classifier(cfg: ClassifierConfig, split: ScenarioSplit | Sequence[tuple[Segment, int]],
                     progress=None):
    """Minibatch AdamW on BCE. Returns ``(checkpoint, history, model)``."""
    pairs = split.train if isinstance(split, ScenarioSplit) else split
    if not pairs:
        raise ValueError("training set is empty")
    x, y = _split_arrays(pairs)
    if x.shape[-1] != cfg.seg_len:
        raise ConfigError(f"segments have length {x.shape[-1]}, config expects {cfg.seg_len}")
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    init_rng, shuffle_rng = (np.random.Generator(np.random.PCG64(s)) for s in seeds)
    model = build_classifier(cfg, init_rng)
    model.train()
    params = model.parameters()
    opt = AdamWState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, weight_decay=cfg.weight_decay)
    history = ClassifierHistory()
    n = x.shape[0]
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.minibatch):
            idx = order[start:start + cfg.minibatch]
            loss = bce_loss(model(Tensor(x[idx])), y[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(f"classifier loss non-finite at epoch {epoch}", epoch, start)
            grads = grad(loss, params)
            adamw_step(params, [grads[p] for p in params], opt)
            total += value * idx.size
        history.losses.append(total / n)
        if progress is not None:
            progress(epoch + 1, history.losses[-1])
    ckpt = Checkpoint(kind="classifier", config=cfg.to_dict(),
                      arch={"classifier": model.describe()},
                      weights={"classifier": model.state_dict()},
                      optimizers={"classifier": opt},
                      rng_state={"shuffle": shuffle_rng.bit_generator.state})
    return ckpt, history, model


def load_classifier(ckpt: Checkpoint | str | Path):
    if not isinstance(ckpt, Checkpoint):
        ckpt = load_checkpoint(ckpt)
    if ckpt.kind != "classifier":
        raise CheckpointError(f"expected a classifier checkpoint, got {ckpt.kind!r}")
    cfg = ClassifierConfig.from_dict(ckpt.config)
    model = build_classifier(cfg)
    model.load_state_dict(ckpt.weights["classifier"])
    model.eval()
    return cfg, model


def predict_batch(model, values: np.ndarray, strict: bool = False, tol: float = 1e-9) -> np.ndarray:
    """Eval-mode scores for a [N, L] or [N, 1, L] array of normalised segments."""
    x = np.asarray(values, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, None, :]
    if np.any(np.abs(x) > 1.0 + tol):
        msg = "input is not normalised to [-1, 1]"
        if strict:
            raise ValueError(msg)
        warnings.warn(msg, stacklevel=2)
    model.eval()
    with no_grad():
        return model(Tensor(x)).data.copy()


def predict(checkpoint, segment: Segment, strict: bool = False) -> float:
    """Damage score in (0, 1) for one normalised segment."""
    model = checkpoint if not isinstance(checkpoint, (Checkpoint, str, Path)) else load_classifier(checkpoint)[1]
    return float(predict_batch(model, segment.values[None, :], strict=strict)[0])


def assign_label(score: float, threshold: float = 0.49) -> int:
    """1 (damaged) iff score > threshold."""
    return int(score > threshold)


@dataclass
class PredictionRecord:
    record_id: int
    score: float
    truth: int
    label: int
    source: str = "real"


@dataclass
class ClassifierMetrics:
    classification_accuracy: float
    mean_absolute_error: float
    records: list[PredictionRecord]
    threshold: float

    def summary(self) -> dict:
        return {"classification_accuracy": self.classification_accuracy,
                "mean_absolute_error": self.mean_absolute_error,
                "threshold": self.threshold, "count": len(self.records),
                "correct": sum(r.label == r.truth for r in self.records)}

    def write(self, directory, stem: str = "test") -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        table, summary = directory / f"{stem}_records.csv", directory / f"{stem}_metrics.json"
        with open(table, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["record_id", "score", "truth", "label", "source"])
            for r in self.records:
                w.writerow([r.record_id, repr(r.score), r.truth, r.label, r.source])
        summary.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return [table, summary]


def make_records(scores: Sequence[float], truths: Sequence[int], threshold: float = 0.49,
                 sources: Sequence[str] | None = None) -> list[PredictionRecord]:
    sources = sources or ["real"] * len(scores)
    return [PredictionRecord(i, float(s), int(t), assign_label(s, threshold), src)
            for i, (s, t, src) in enumerate(zip(scores, truths, sources))]


def evaluate(records: Sequence[PredictionRecord], threshold: float = 0.49) -> ClassifierMetrics:
    """Classification accuracy at ``threshold`` and mean absolute error of the scores."""
    if not records:
        raise ValueError("no records to evaluate")
    recs = [PredictionRecord(r.record_id, r.score, r.truth, assign_label(r.score, threshold), r.source)
            for r in records]
    ca = sum(r.label == r.truth for r in recs) / len(recs)
    mae = float(np.mean([abs(r.score - r.truth) for r in recs]))
    return ClassifierMetrics(ca, mae, recs, threshold)


def test_classifier(model, split: ScenarioSplit, threshold: float = 0.49,
                    strict: bool = False) -> ClassifierMetrics:
    x, y = _split_arrays(split.test)
    scores = predict_batch(model, x, strict=strict)
    sources = [s.source for s, _ in split.test]
    return evaluate(make_records(scores, y.astype(int), threshold, sources), threshold)


test_classifier.__test__ = False  # keep pytest from collecting it
