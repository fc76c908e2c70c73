"""Offline stand-in for the model pipeline.

Emits schema-valid feature records whose vectors and metadata are
deterministic functions of (seed, image id), so the downstream engine
can be integration-tested without downloading any pretrained weights.
No image is ever decoded.
"""

from __future__ import annotations

import hashlib
import json
import logging

import numpy as np

from .job import ExtractionJob, list_images, read_label_manifest
from .prompt import build_prompt

log = logging.getLogger(__name__)

EMBED_DIM = 512

_SCENES = ["beach", "forest", "city street", "kitchen", "mountain", "office",
           "park", "stadium", "harbor", "desert"]
_OBJECTS = ["person", "dog", "car", "tree", "bicycle", "bench", "umbrella",
            "boat", "bird", "ball", "chair", "kite", "horse", "backpack",
            "lamp", "sign"]
_CAPTION_TEMPLATES = [
    "a photo of a {o0} near a {o1}",
    "a {o0} and a {o1} in the {s}",
    "an image showing a {o0} next to a {o1}",
]


def _rng_for(seed: int, image_id: str, purpose: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{image_id}:{purpose}".encode("utf-8")).digest()
    return np.random.default_rng(np.frombuffer(digest, dtype=np.uint64))


def _pseudo_vector(seed: int, image_id: str, stream: str) -> np.ndarray:
    return _rng_for(seed, image_id, f"vec-{stream}").standard_normal(EMBED_DIM)


def _pseudo_metadata(seed: int, image_id: str, k: int):
    rng = _rng_for(seed, image_id, "meta")
    scene = _SCENES[rng.integers(len(_SCENES))]
    count = min(k, len(_OBJECTS))
    objects = [_OBJECTS[i] for i in rng.choice(len(_OBJECTS), size=count, replace=False)]
    template = _CAPTION_TEMPLATES[rng.integers(len(_CAPTION_TEMPLATES))]
    caption = template.format(o0=objects[0], o1=objects[-1], s=scene)
    return caption, scene, objects


def stub_record(job: ExtractionJob, image_id: str, label: int) -> dict:
    caption, scene, objects = _pseudo_metadata(job.seed, image_id, job.k)
    prompt = build_prompt(scene, objects)
    # text-stream vectors hash the text itself, mirroring the real pipeline
    # where e_c / e_p are encodings of the caption and prompt strings
    return {
        "id": image_id,
        "label": int(label),
        "e_v": [float(x) for x in _pseudo_vector(job.seed, image_id, "image")],
        "e_c": [float(x) for x in _pseudo_vector(job.seed, image_id, "text:" + caption)],
        "e_p": [float(x) for x in _pseudo_vector(job.seed, image_id, "text:" + prompt)],
        "caption": caption,
        "scene": scene,
        "objects": objects,
    }


def stub_extract(job: ExtractionJob) -> int:
    """Write one record per labeled image; returns the record count."""
    job.validate()
    labels = read_label_manifest(job.label_file)
    written = 0
    with open(job.output_path, "w", encoding="utf-8") as fh:
        for image_id, _path in list_images(job.image_dir):
            if image_id not in labels:
                log.warning("skipping %s: no label in manifest", image_id)
                continue
            fh.write(json.dumps(stub_record(job, image_id, labels[image_id]),
                                ensure_ascii=False) + "\n")
            written += 1
    return written
