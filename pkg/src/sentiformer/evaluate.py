"""Metrics, confusion matrix, and embedding export."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import model as M
from .data import to_arrays
from .errors import UsageError
from .tensor import Tensor, no_grad


@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    per_class_f1: list
    confusion: np.ndarray
    n: int

    def format(self) -> str:
        lines = [
            f"samples: {self.n}",
            f"accuracy: {self.accuracy:.6f}",
            f"macro_f1: {self.macro_f1:.6f}",
            "per_class_f1: " + " ".join(f"{x:.6f}" for x in self.per_class_f1),
            "confusion (rows = true, cols = predicted):",
        ]
        for row in self.confusion:
            lines.append("  " + " ".join(f"{int(x):6d}" for x in row))
        return "\n".join(lines)


def _per_class_f1(confusion: np.ndarray) -> list:
    scores = []
    for c in range(confusion.shape[0]):
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = confusion[c, :].sum() - tp
        denom = 2 * tp + fp + fn
        scores.append(float(2 * tp / denom) if denom else 0.0)
    return scores


def _batched_forward(params, arrays, cfg, batch_size):
    """Yields (slice, logits ndarray, token ndarray) without recording a graph.

    Ties in the downstream argmax resolve to the lowest class index
    (numpy argmax takes the first maximum).
    """
    n = len(arrays["ids"])
    with no_grad():
        for start in range(0, n, batch_size):
            sl = slice(start, start + batch_size)
            logits, token = M.forward_parts(
                Tensor(arrays["e_v"][sl]),
                Tensor(arrays["e_c"][sl]),
                Tensor(arrays["e_p"][sl]),
                params,
                cfg,
            )
            yield sl, logits.data, token.data


def evaluate(params, dataset, cfg, batch_size: int = 256) -> EvalReport:
    if not dataset:
        raise UsageError("evaluation dataset is empty")
    arrays = to_arrays(dataset)
    M._check_labels(arrays["labels"], cfg.n_classes, arrays["ids"])
    confusion = np.zeros((cfg.n_classes, cfg.n_classes), dtype=np.int64)
    for sl, logits, _ in _batched_forward(params, arrays, cfg, batch_size):
        preds = logits.argmax(axis=-1)
        np.add.at(confusion, (arrays["labels"][sl], preds), 1)
    per_class = _per_class_f1(confusion)
    n = len(dataset)
    return EvalReport(
        accuracy=float(np.trace(confusion) / n),
        macro_f1=float(np.mean(per_class)),
        per_class_f1=per_class,
        confusion=confusion,
        n=n,
    )


def predict(params, dataset, cfg, batch_size: int = 256):
    """Per-sample probability rows, in dataset order."""
    arrays = to_arrays(dataset)
    probs = np.zeros((len(dataset), cfg.n_classes))
    for sl, logits, _ in _batched_forward(params, arrays, cfg, batch_size):
        shifted = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        probs[sl] = e / e.sum(axis=-1, keepdims=True)
    return probs


def export_embeddings(params, dataset, cfg, stage: str, path, batch_size: int = 256) -> None:
    """JSONL dump of per-sample vectors with labels.

    stage "pre": the three raw encoder streams concatenated (width 3*d_e).
    stage "post": the fused extra-token representation (width d_h).
    """
    if stage not in ("pre", "post"):
        raise UsageError(f"stage must be 'pre' or 'post', got {stage!r}")
    arrays = to_arrays(dataset, dtype=np.float64 if stage == "pre" else np.float32)
    if stage == "pre":
        vectors = np.concatenate([arrays["e_v"], arrays["e_c"], arrays["e_p"]], axis=1)
    else:
        vectors = np.zeros((len(dataset), cfg.d_h))
        for sl, _, token in _batched_forward(params, arrays, cfg, batch_size):
            vectors[sl] = token
    with open(path, "w", encoding="utf-8") as fh:
        for i, rec in enumerate(dataset):
            doc = {
                "id": rec.id,
                "label": int(rec.label),
                "vector": [float(x) for x in vectors[i]],
            }
            fh.write(json.dumps(doc) + "\n")
