"""Extraction job description and label-manifest parsing."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png", ".bmp", ".gif", ".webp"}


class ExtractorError(Exception):
    """Fatal extraction problem (bad manifest, missing weights, ...)."""


@dataclass
class ExtractionJob:
    image_dir: str
    label_file: str
    output_path: str
    k: int = 10
    device: str = "cpu"
    encoder_id: str = "openai/clip-vit-base-patch32"
    captioner_id: str = "Salesforce/blip-image-captioning-base"
    detector_id: str | None = None
    scene_id: str | None = None
    seed: int = 0

    def validate(self) -> "ExtractionJob":
        if self.k < 1:
            raise ExtractorError("k (object-tag count) must be >= 1")
        if not os.path.isdir(self.image_dir):
            raise ExtractorError(f"image directory not found: {self.image_dir}")
        return self


def read_label_manifest(path) -> dict[str, int]:
    """Parse `id <separator> class-index` lines; separator is whitespace or a
    comma. Blank lines and #-comments are skipped."""
    labels: dict[str, int] = {}
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise ExtractorError(f"cannot read label file {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 2:
                raise ExtractorError(f"{path}:{lineno}: expected 'id label'")
            image_id, raw = parts
            try:
                label = int(raw)
            except ValueError as exc:
                raise ExtractorError(
                    f"{path}:{lineno}: label must be an integer, got {raw!r}"
                ) from exc
            if label < 0:
                raise ExtractorError(f"{path}:{lineno}: label must be >= 0")
            if image_id in labels:
                raise ExtractorError(f"{path}:{lineno}: duplicate id {image_id!r}")
            labels[image_id] = label
    return labels


def list_images(image_dir) -> list[tuple[str, str]]:
    """(image id, path) pairs sorted by id; the id is the filename stem."""
    entries = []
    for name in sorted(os.listdir(image_dir)):
        stem, ext = os.path.splitext(name)
        if ext.lower() in IMAGE_EXTENSIONS:
            entries.append((stem, os.path.join(image_dir, name)))
    return entries
