"""Classification metrics: confusion matrices, per-class P/R/F1, macro and
support-weighted averages, and report serialization (JSON, aligned text table,
confusion CSV).

Conventions: rows of the confusion matrix are true labels, columns are
predictions; any 0/0 ratio is defined as 0; the weighted F1 is the
support-weighted mean of per-class F1 values (not derived from weighted P/R).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import model as mdl
from . import preprocess
from .corpus import CorpusStore, LabelTaxonomy, task_label
from .errors import DigestMismatch, LabelOutOfRange, LengthMismatch
from .tokenizer import Vocab, encode


@dataclass(frozen=True)
class ClassMetrics:
    label: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class EvalReport:
    task_id: str
    per_class: tuple[ClassMetrics, ...]
    accuracy: float
    macro_avg: tuple[float, float, float]
    weighted_avg: tuple[float, float, float]
    confusion: np.ndarray
    total_samples: int

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "per_class": [
                {
                    "label": c.label,
                    "precision": c.precision,
                    "recall": c.recall,
                    "f1": c.f1,
                    "support": c.support,
                }
                for c in self.per_class
            ],
            "accuracy": self.accuracy,
            "macro_avg": {"precision": self.macro_avg[0], "recall": self.macro_avg[1], "f1": self.macro_avg[2]},
            "weighted_avg": {"precision": self.weighted_avg[0], "recall": self.weighted_avg[1], "f1": self.weighted_avg[2]},
            "confusion": self.confusion.tolist(),
            "total_samples": self.total_samples,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2, sort_keys=True)

    def format_table(self) -> str:
        """Aligned text table: Class, Precision, Recall, F1-Score, Number of Samples."""
        rows = [("Class", "Precision", "Recall", "F1-Score", "Number of Samples")]
        for c in self.per_class:
            rows.append((c.label, f"{c.precision:.4f}", f"{c.recall:.4f}", f"{c.f1:.4f}", str(c.support)))
        rows.append(("", "", "", "", ""))
        rows.append(("Accuracy", "", "", f"{self.accuracy:.4f}", str(self.total_samples)))
        rows.append(
            ("Macro Avg", f"{self.macro_avg[0]:.4f}", f"{self.macro_avg[1]:.4f}", f"{self.macro_avg[2]:.4f}", str(self.total_samples))
        )
        rows.append(
            ("Weighted Avg", f"{self.weighted_avg[0]:.4f}", f"{self.weighted_avg[1]:.4f}", f"{self.weighted_avg[2]:.4f}", str(self.total_samples))
        )
        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows)

    def confusion_csv(self) -> str:
        labels = [c.label for c in self.per_class]
        lines = ["true\\pred," + ",".join(labels)]
        for i, label in enumerate(labels):
            lines.append(label + "," + ",".join(str(int(v)) for v in self.confusion[i]))
        return "\n".join(lines) + "\n"


def confusion_matrix(preds, truths, num_classes: int) -> np.ndarray:
    """Count matrix with entry (t, p) = samples of true class t predicted as p."""
    preds = np.asarray(preds, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if preds.shape != truths.shape:
        raise LengthMismatch(f"{preds.shape} predictions vs {truths.shape} truths")
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(truths, preds):
        if not (0 <= t < num_classes and 0 <= p < num_classes):
            raise LabelOutOfRange(f"label pair ({t}, {p}) outside [0, {num_classes})")
        matrix[t, p] += 1
    return matrix


def _safe_div(num: float, den: float) -> float:
    return num / den if den else 0.0


def prf_report(confusion: np.ndarray, taxonomy: LabelTaxonomy) -> EvalReport:
    """Per-class precision/recall/F1 with macro and support-weighted averages."""
    confusion = np.asarray(confusion)
    if confusion.ndim != 2 or confusion.shape[0] != confusion.shape[1]:
        raise LengthMismatch(f"confusion matrix must be square, got {confusion.shape}")
    k = confusion.shape[0]
    if k != taxonomy.num_labels:
        raise LengthMismatch(f"{k}x{k} matrix vs {taxonomy.num_labels} labels")

    total = int(confusion.sum())
    per_class = []
    for c in range(k):
        tp = float(confusion[c, c])
        col = float(confusion[:, c].sum())
        row = float(confusion[c, :].sum())
        precision = _safe_div(tp, col)
        recall = _safe_div(tp, row)
        f1 = _safe_div(2 * precision * recall, precision + recall)
        per_class.append(ClassMetrics(taxonomy.name(c), precision, recall, f1, int(row)))

    accuracy = _safe_div(float(np.trace(confusion)), total)
    macro = tuple(
        sum(getattr(c, m) for c in per_class) / k for m in ("precision", "recall", "f1")
    )
    weighted = tuple(
        _safe_div(sum(getattr(c, m) * c.support for c in per_class), total)
        for m in ("precision", "recall", "f1")
    )
    return EvalReport(
        task_id=taxonomy.task_id,
        per_class=tuple(per_class),
        accuracy=accuracy,
        macro_avg=macro,
        weighted_avg=weighted,
        confusion=confusion.astype(np.int64),
        total_samples=total,
    )


def predict_corpus(ckpt, corpus: CorpusStore, taxonomy: LabelTaxonomy, vocab: Vocab):
    """(pred_id, truth_id) pairs over the records that carry the task label."""
    if ckpt.vocab_digest != vocab.digest():
        raise DigestMismatch("vocab content does not match the checkpoint's digest")
    if taxonomy.task_id not in ckpt.head_tasks():
        raise LabelOutOfRange(f"checkpoint has no head for task {taxonomy.task_id}")
    config = ckpt.model_config
    params = ckpt.to_params()
    head_w, head_b = params.heads[taxonomy.task_id]

    preds, truths = [], []
    with ag.no_grad():
        for record in corpus.records:
            label = task_label(record, taxonomy.task_id)
            if label is None:
                continue
            line = preprocess.preprocess_verse(record).line
            hidden = mdl.encoder_forward(encode(line, vocab, config.max_len), config, params)
            logits = mdl.classify(hidden, head_w, head_b)
            preds.append(mdl.predicted_label(logits))
            truths.append(taxonomy.index(label))
    return preds, truths


def evaluate(ckpt, corpus: CorpusStore, taxonomy: LabelTaxonomy, vocab: Vocab) -> EvalReport:
    """Classify every labeled record and assemble the full report."""
    preds, truths = predict_corpus(ckpt, corpus, taxonomy, vocab)
    matrix = confusion_matrix(preds, truths, taxonomy.num_labels)
    return prf_report(matrix, taxonomy)
