"""Stratified k-fold cross-validation, mini-batch training and the summary report."""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ReportError, TooFewExamples
from .models import DISPLAY_NAMES, Model, ModelSpec, build_model, canonical_architecture
from .nn import Adam, softmax_cross_entropy
from .nn.functional import cross_entropy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def optimizer(self) -> Adam:
        return Adam(lr=self.lr, beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon)


# epochs, batch size per architecture; the MLP epoch count is not given and set to 100
_DEFAULTS = {
    "mlp": (100, 32),
    "cnn": (80, 84),
    "lstm": (100, 64),
    "cnn+lstm": (100, 64),
    "cnn+blstm": (100, 64),
}


def default_train_config(architecture: str, **overrides) -> TrainConfig:
    epochs, batch = _DEFAULTS[canonical_architecture(architecture)]
    return replace(TrainConfig(epochs=epochs, batch_size=batch), **overrides)


@dataclass
class EvalResult:
    accuracy: float
    loss: float
    confusion: np.ndarray


@dataclass
class FoldResult:
    fold_index: int
    train_accuracy: float
    train_loss: float
    test_accuracy: float
    test_loss: float
    confusion: np.ndarray

    def to_dict(self):
        return {
            "fold": self.fold_index,
            "train_acc": self.train_accuracy,
            "train_loss": self.train_loss,
            "test_acc": self.test_accuracy,
            "test_loss": self.test_loss,
            "confusion": self.confusion.tolist(),
        }


METRICS = ("train_acc", "train_loss", "test_acc", "test_loss")


@dataclass
class CrossValReport:
    model: str
    seed: int
    folds: List[FoldResult]
    wall_time_seconds: Optional[float] = None

    @property
    def averages(self) -> dict:
        rows = [f.to_dict() for f in self.folds]
        return {m: float(np.mean([r[m] for r in rows])) for m in METRICS}

    @property
    def summed_confusion(self) -> np.ndarray:
        return np.sum([f.confusion for f in self.folds], axis=0)

    def to_dict(self):
        return {
            "model": self.model,
            "seed": self.seed,
            "fold_count": len(self.folds),
            "folds": [f.to_dict() for f in self.folds],
            "averages": self.averages,
            "summed_confusion": self.summed_confusion.tolist(),
            "wall_time_seconds": self.wall_time_seconds,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, d) -> "CrossValReport":
        try:
            folds = [
                FoldResult(int(f["fold"]), float(f["train_acc"]), float(f["train_loss"]),
                           float(f["test_acc"]), float(f["test_loss"]), np.asarray(f["confusion"], dtype=np.int64))
                for f in d["folds"]
            ]
            report = cls(canonical_architecture(d["model"]), int(d["seed"]), folds, d.get("wall_time_seconds"))
            fold_count = int(d.get("fold_count", len(folds)))
            summed = np.asarray(d["summed_confusion"], dtype=np.int64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ReportError(f"malformed report: {exc}") from exc
        if not folds:
            raise ReportError("report has no folds")
        if fold_count != len(folds):
            raise ReportError(f"fold_count {fold_count} but {len(folds)} fold entries")
        shapes = {f.confusion.shape for f in folds}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2:
            raise ReportError("fold confusion matrices are not square and uniform")
        if summed.shape != folds[0].confusion.shape or not np.array_equal(summed, report.summed_confusion):
            raise ReportError("summed_confusion is not the sum of the fold confusions")
        return report

    @classmethod
    def from_json(cls, text: str) -> "CrossValReport":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ReportError(f"report is not valid JSON: {exc}") from exc
        return cls.from_dict(d)


def confusion_csv(confusion: np.ndarray, title: str = "") -> str:
    """Rows are true classes, columns predicted, both numbered from 1."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    k = confusion.shape[0]
    w.writerow([title] + list(range(1, k + 1)))
    for i, row in enumerate(confusion):
        w.writerow([i + 1] + [int(v) for v in row])
    return buf.getvalue()


TABLE_HEADER = ("Model", "AvgTrainAcc", "AvgTrainLoss", "AvgTestAcc", "AvgTestLoss")


def format_table(reports: Sequence[CrossValReport]) -> str:
    """Aligned text table, best average test accuracy first. Accuracies in percent."""
    rows = [TABLE_HEADER]
    for r in sorted(reports, key=lambda r: -r.averages["test_acc"]):
        a = r.averages
        rows.append((DISPLAY_NAMES[r.model], f"{100 * a['train_acc']:.3f}", f"{a['train_loss']:.4f}",
                     f"{100 * a['test_acc']:.3f}", f"{a['test_loss']:.4f}"))
    widths = [max(len(row[i]) for row in rows) for i in range(len(TABLE_HEADER))]
    return "\n".join(" | ".join(c.ljust(wd) for c, wd in zip(row, widths)).rstrip() for row in rows)


# ---------------------------------------------------------------------------


def stratified_kfold(labels, k: int, seed: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Shuffle each class with a seeded generator, then deal its indices round-robin to folds.

    Dealing for each class resumes at the fold after the one the previous
    class ended on, which keeps fold sizes within one of each other.
    """
    labels = np.asarray(getattr(labels, "labels", labels))
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(labels), dtype=np.int64)
    start = 0
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if len(members) < k:
            raise TooFewExamples(f"class {cls} has {len(members)} examples, need >= {k}")
        members = rng.permutation(members)
        fold_of[members] = (start + np.arange(len(members))) % k
        start = (start + len(members)) % k
    everything = np.arange(len(labels))
    return [(everything[fold_of != f], everything[fold_of == f]) for f in range(k)]


def train_fold(spec: ModelSpec, train_set, cfg: TrainConfig, model: Optional[Model] = None):
    """Mini-batch Adam on mean softmax cross-entropy.

    History entries hold the running mean loss/accuracy over each epoch's
    batches, measured in training mode (dropout active).
    """
    x, y = train_set
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if model is None:
        model = build_model(spec)
        model.fit_input_stats(x)
    rng = np.random.default_rng([cfg.seed, 1])
    opt = cfg.optimizer()
    params = model.parameters()
    history = []
    n = len(x)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        loss_sum = 0.0
        correct = 0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            logits = model.forward(x[idx], training=True, rng=rng)
            loss, probs, grad = softmax_cross_entropy(logits, y[idx])
            model.backward(grad)
            opt.step(params, model.gradients())
            loss_sum += loss * len(idx)
            correct += int(np.sum(probs.argmax(axis=1) == y[idx]))
        history.append({"epoch": epoch + 1, "loss": loss_sum / n, "accuracy": correct / n})
        log.debug("epoch %d loss %.4f acc %.4f", epoch + 1, loss_sum / n, correct / n)
    model.clear()
    return model, history


def evaluate(model: Model, test_set, class_count: Optional[int] = None, batch_size: int = 256) -> EvalResult:
    x, y = test_set
    y = np.asarray(y, dtype=np.int64)
    k = class_count or model.spec.class_count
    probs = model.predict_proba(x, batch_size=batch_size)
    pred = probs.argmax(axis=1)
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (y, pred), 1)
    correct = int(np.trace(confusion))
    return EvalResult(correct / len(y), float(np.mean(cross_entropy(probs, y))), confusion)


def _run_fold(args):
    spec, features, labels, train_idx, test_idx, cfg, fold = args
    fold_spec = replace(spec, seed=cfg.seed + fold)
    fold_cfg = replace(cfg, seed=cfg.seed + fold)
    model, history = train_fold(fold_spec, (features[train_idx], labels[train_idx]), fold_cfg)
    ev = evaluate(model, (features[test_idx], labels[test_idx]), spec.class_count)
    last = history[-1]
    return FoldResult(fold, last["accuracy"], last["loss"], ev.accuracy, ev.loss, ev.confusion), model


def cross_validate(spec: ModelSpec, features, labels, k: int, cfg: TrainConfig,
                   workers: int = 1, keep_models: bool = False):
    """k-fold cross-validation; fold ``f`` trains a fresh model seeded ``cfg.seed + f``.

    Folds may run in separate processes; results are assembled in fold order so
    the report does not depend on ``workers``.  Returns the report, plus the
    trained models when ``keep_models`` is set.
    """
    features = np.asarray(features)
    labels = np.asarray(labels, dtype=np.int64)
    splits = stratified_kfold(labels, k, cfg.seed)
    jobs = [(spec, features, labels, tr, te, cfg, f) for f, (tr, te) in enumerate(splits)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_fold, jobs))
    else:
        outcomes = []
        for job in jobs:
            outcomes.append(_run_fold(job))
            log.info("%s fold %d: test acc %.4f", spec.architecture, job[-1], outcomes[-1][0].test_accuracy)
            if not keep_models:
                outcomes[-1] = (outcomes[-1][0], None)
    report = CrossValReport(spec.architecture, cfg.seed, [o[0] for o in outcomes])
    if keep_models:
        return report, [o[1] for o in outcomes]
    return report
