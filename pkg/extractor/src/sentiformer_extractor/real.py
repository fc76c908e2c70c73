"""Pretrained-model extraction path.

Requires the optional [models] dependencies (torch, transformers,
pillow). The joint image-text encoder and the captioner are mandatory;
the object detector and scene classifier are optional — without them the
prompt degrades to the caption text, with a logged notice.
"""

from __future__ import annotations

import json
import logging

from .job import ExtractionJob, ExtractorError, list_images, read_label_manifest
from .prompt import build_prompt

log = logging.getLogger(__name__)

_DOWNLOAD_HINT = (
    "pretrained weights are unavailable. Install the model extras with\n"
    "    pip install 'sentiformer-extractor[models]'\n"
    "and pre-download the checkpoints, e.g.\n"
    "    python -c \"from transformers import CLIPModel; CLIPModel.from_pretrained('{enc}')\"\n"
    "    python -c \"from transformers import BlipForConditionalGeneration; "
    "BlipForConditionalGeneration.from_pretrained('{cap}')\""
)


class _Models:
    """Lazily loaded pretrained components for one job."""

    def __init__(self, job: ExtractionJob):
        try:
            import torch
            from transformers import (AutoProcessor, BlipForConditionalGeneration,
                                      CLIPModel, CLIPProcessor)
        except ImportError as exc:
            raise ExtractorError(
                f"missing model dependencies ({exc}); "
                + _DOWNLOAD_HINT.format(enc=job.encoder_id, cap=job.captioner_id)
            ) from exc
        self.torch = torch
        try:
            self.clip = CLIPModel.from_pretrained(job.encoder_id).to(job.device).eval()
            self.clip_proc = CLIPProcessor.from_pretrained(job.encoder_id)
            self.blip = (BlipForConditionalGeneration
                         .from_pretrained(job.captioner_id).to(job.device).eval())
            self.blip_proc = AutoProcessor.from_pretrained(job.captioner_id)
        except Exception as exc:  # weight download/load failures are fatal
            raise ExtractorError(
                f"cannot load pretrained weights ({exc}); "
                + _DOWNLOAD_HINT.format(enc=job.encoder_id, cap=job.captioner_id)
            ) from exc
        self.device = job.device
        self.tagger = _load_optional_taggers(job)

    def encode_image(self, image):
        inputs = self.clip_proc(images=image, return_tensors="pt").to(self.device)
        with self.torch.no_grad():
            feats = self.clip.get_image_features(**inputs)
        return feats[0].cpu().numpy()

    def encode_text(self, text: str):
        inputs = self.clip_proc(text=[text], return_tensors="pt",
                                truncation=True).to(self.device)
        with self.torch.no_grad():
            feats = self.clip.get_text_features(**inputs)
        return feats[0].cpu().numpy()

    def caption(self, image) -> str:
        inputs = self.blip_proc(images=image, return_tensors="pt").to(self.device)
        with self.torch.no_grad():
            out = self.blip.generate(**inputs, max_new_tokens=30)
        return self.blip_proc.decode(out[0], skip_special_tokens=True).strip()


def _load_optional_taggers(job: ExtractionJob):
    """Returns (detector, scene classifier) callables or None.

    Both are optional; any load failure downgrades to caption-only
    prompting rather than aborting the job.
    """
    if not job.detector_id and not job.scene_id:
        return None
    try:
        from transformers import pipeline

        detector = (pipeline("object-detection", model=job.detector_id,
                             device=job.device) if job.detector_id else None)
        scene = (pipeline("image-classification", model=job.scene_id,
                          device=job.device) if job.scene_id else None)
        return detector, scene
    except Exception as exc:
        log.warning("taggers unavailable (%s); falling back to caption-only prompts", exc)
        return None


def _prompt_for(models: _Models, image, caption: str, k: int):
    """(prompt text, scene, objects); scene/objects are None on fallback."""
    if models.tagger is None:
        return caption, None, None
    detector, scene_clf = models.tagger
    scene = None
    objects = []
    if scene_clf is not None:
        preds = scene_clf(image, top_k=1)
        if preds:
            scene = preds[0]["label"].lower()
    if detector is not None:
        dets = sorted(detector(image), key=lambda d: d["score"], reverse=True)
        seen = set()
        for det in dets:
            name = det["label"].lower()
            if name not in seen:
                seen.add(name)
                objects.append(name)
            if len(objects) == k:
                break
    if scene and objects:
        return build_prompt(scene, objects), scene, objects
    log.warning("incomplete tags (scene=%r, %d objects); using caption-only prompt",
                scene, len(objects))
    return caption, None, None


def extract(job: ExtractionJob) -> int:
    """Run the pretrained pipeline; returns the number of records written."""
    job.validate()
    try:
        from PIL import Image
    except ImportError as exc:
        raise ExtractorError(f"missing pillow ({exc}); install the [models] extras") from exc
    labels = read_label_manifest(job.label_file)
    models = _Models(job)
    written = 0
    with open(job.output_path, "w", encoding="utf-8") as fh:
        for image_id, path in list_images(job.image_dir):
            if image_id not in labels:
                log.warning("skipping %s: no label in manifest", image_id)
                continue
            try:
                image = Image.open(path).convert("RGB")
            except Exception as exc:
                log.warning("skipping %s: cannot decode (%s)", image_id, exc)
                continue
            caption = models.caption(image)
            prompt, scene, objects = _prompt_for(models, image, caption, job.k)
            doc = {
                "id": image_id,
                "label": int(labels[image_id]),
                "e_v": [float(x) for x in models.encode_image(image)],
                "e_c": [float(x) for x in models.encode_text(caption)],
                "e_p": [float(x) for x in models.encode_text(prompt)],
                "caption": caption,
            }
            if scene is not None:
                doc["scene"] = scene
                doc["objects"] = objects
            fh.write(json.dumps(doc, ensure_ascii=False) + "\n")
            written += 1
    return written
