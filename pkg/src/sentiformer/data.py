"""Feature-record I/O, the prompt template, synthetic data, and splits.

The JSONL schema here is the interchange contract with the feature
extractor: one record per line, UTF-8, fields id/label/e_v/e_c/e_p and
optional caption/scene/objects. Floats round-trip at full precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, UsageError

PROMPT_PREFIX = "the scene or background of the image is "
PROMPT_MIDDLE = ", and the image contains the following objects: "

REQUIRED_FIELDS = ("id", "label", "e_v", "e_c", "e_p")


def build_prompt(scene: str, objects) -> str:
    """Render the fixed prompt sentence embedding scene and object tags."""
    if not scene:
        raise UsageError("build_prompt: scene must be nonempty")
    objects = list(objects)
    if not objects:
        raise UsageError("build_prompt: at least one object tag is required")
    return PROMPT_PREFIX + scene + PROMPT_MIDDLE + ", ".join(objects)


@dataclass
class FeatureRecord:
    id: str
    label: int
    e_v: np.ndarray
    e_c: np.ndarray
    e_p: np.ndarray
    caption: str | None = None
    scene: str | None = None
    objects: list | None = None

    def to_json(self) -> str:
        doc = {
            "id": self.id,
            "label": int(self.label),
            "e_v": [float(x) for x in self.e_v],
            "e_c": [float(x) for x in self.e_c],
            "e_p": [float(x) for x in self.e_p],
        }
        if self.caption is not None:
            doc["caption"] = self.caption
        if self.scene is not None:
            doc["scene"] = self.scene
        if self.objects is not None:
            doc["objects"] = list(self.objects)
        return json.dumps(doc, ensure_ascii=False)


def _parse_record(doc: dict, lineno: int, expected_de: int | None) -> FeatureRecord:
    for name in REQUIRED_FIELDS:
        if name not in doc:
            raise DataError(f"line {lineno}: missing field {name!r}")
    if not isinstance(doc["id"], str):
        raise DataError(f"line {lineno}: field 'id' must be a string")
    label = doc["label"]
    if not isinstance(label, int) or isinstance(label, bool) or label < 0:
        raise DataError(f"line {lineno}: field 'label' must be a nonnegative integer")
    vecs = {}
    for name in ("e_v", "e_c", "e_p"):
        v = doc[name]
        if not isinstance(v, list):
            raise DataError(f"line {lineno}: field {name!r} must be a list of numbers")
        arr = np.asarray(v, dtype=np.float64)
        if arr.ndim != 1 or not np.isfinite(arr).all():
            raise DataError(f"line {lineno}: field {name!r} must be a finite 1-D vector")
        vecs[name] = arr
    d_e = len(vecs["e_v"])
    for name in ("e_v", "e_c", "e_p"):
        want = expected_de if expected_de is not None else d_e
        if len(vecs[name]) != want:
            raise DataError(
                f"line {lineno}: field {name!r} has length {len(vecs[name])}, expected {want}"
            )
    return FeatureRecord(
        id=doc["id"],
        label=label,
        e_v=vecs["e_v"],
        e_c=vecs["e_c"],
        e_p=vecs["e_p"],
        caption=doc.get("caption"),
        scene=doc.get("scene"),
        objects=doc.get("objects"),
    )


def read_jsonl(path) -> list[FeatureRecord]:
    records = []
    seen_ids = set()
    expected_de = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
            rec = _parse_record(doc, lineno, expected_de)
            if rec.id in seen_ids:
                raise DataError(f"line {lineno}: duplicate id {rec.id!r}")
            seen_ids.add(rec.id)
            if expected_de is None:
                expected_de = len(rec.e_v)
            records.append(rec)
    return records


def write_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json())
            fh.write("\n")


@dataclass
class SyntheticSpec:
    classes: int = 8
    per_class: int = 125
    d_e: int = 512
    separation: float = 5.0
    noise_std: float = 1.0
    informative_streams: set = field(default_factory=lambda: {"v", "c", "p"})
    seed: int = 0

    def validate(self) -> "SyntheticSpec":
        if self.classes < 2:
            raise UsageError("synthetic spec needs at least 2 classes")
        if self.per_class < 1 or self.d_e < 1:
            raise UsageError("per_class and d_e must be positive")
        if self.separation < 0:
            raise UsageError("separation must be >= 0")
        bad = set(self.informative_streams) - {"v", "c", "p"}
        if bad:
            raise UsageError(f"unknown streams in informative_streams: {sorted(bad)}")
        return self


def gen_synthetic(spec: SyntheticSpec) -> list[FeatureRecord]:
    """Gaussian clusters: informative streams get a class-mean direction of
    norm `separation` plus noise; the rest are pure noise."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    means = {}
    for s in ("v", "c", "p"):
        if s in spec.informative_streams:
            dirs = rng.standard_normal((spec.classes, spec.d_e))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            means[s] = dirs * spec.separation
        else:
            means[s] = np.zeros((spec.classes, spec.d_e))
    records = []
    for c in range(spec.classes):
        for k in range(spec.per_class):
            vecs = {}
            for s in ("v", "c", "p"):
                vecs[s] = means[s][c] + rng.standard_normal(spec.d_e) * spec.noise_std
            records.append(
                FeatureRecord(
                    id=f"syn-{c}-{k}",
                    label=c,
                    e_v=vecs["v"],
                    e_c=vecs["c"],
                    e_p=vecs["p"],
                )
            )
    return records


def train_test_split(records, test_fraction: float, seed: int):
    if not 0.0 < test_fraction < 1.0:
        raise UsageError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(records))
    n_test = round(len(records) * test_fraction)
    test = [records[i] for i in perm[:n_test]]
    train = [records[i] for i in perm[n_test:]]
    return train, test


def to_arrays(records, dtype=np.float32):
    """Stack a dataset into contiguous arrays for batched evaluation."""
    if not records:
        raise UsageError("dataset is empty")
    return {
        "e_v": np.stack([r.e_v for r in records]).astype(dtype),
        "e_c": np.stack([r.e_c for r in records]).astype(dtype),
        "e_p": np.stack([r.e_p for r in records]).astype(dtype),
        "labels": np.asarray([r.label for r in records], dtype=np.int64),
        "ids": [r.id for r in records],
    }
