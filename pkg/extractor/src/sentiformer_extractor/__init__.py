"""Feature extraction pipeline for the sentiment engine.

Turns a directory of labeled images into the engine's JSONL feature
records: caption, top-k object tags, scene tag, the fixed prompt
sentence, and 512-d embeddings of image/caption/prompt. A deterministic
stub path produces schema-identical records without any model downloads.
"""

from .job import ExtractionJob, ExtractorError, read_label_manifest
from .prompt import build_prompt
from .stub import stub_extract

__version__ = "0.1.0"

__all__ = [
    "ExtractionJob", "ExtractorError", "read_label_manifest",
    "build_prompt", "stub_extract", "__version__",
]
