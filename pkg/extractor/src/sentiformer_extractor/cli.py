"""Command-line entry point for the feature extractor.

Exit codes: 0 success, 1 usage/configuration error, 2 extraction failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .job import ExtractionJob, ExtractorError
from .prompt import build_prompt


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sentiformer-extract", description=__doc__,
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="extract features for a labeled image directory",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--images", required=True, help="image directory")
    p.add_argument("--labels", required=True, help="manifest with 'id label' lines")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--k", type=int, default=10, help="object tags per prompt")
    p.add_argument("--device", default="cpu")
    p.add_argument("--encoder", default="openai/clip-vit-base-patch32",
                   help="joint image-text encoder id")
    p.add_argument("--captioner", default="Salesforce/blip-image-captioning-base")
    p.add_argument("--detector", default=None, help="optional object-detector id")
    p.add_argument("--scene-model", default=None, help="optional scene-classifier id")
    p.add_argument("--stub", action="store_true",
                   help="deterministic pseudo-embeddings; no model downloads")
    p.add_argument("--seed", type=int, default=0, help="stub-mode seed")

    q = sub.add_parser("prompt", help="print the prompt for scene and object tags")
    q.add_argument("--scene", required=True)
    q.add_argument("--objects", required=True, help="comma-separated object tags")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(format="%(levelname)s: %(message)s", level=logging.INFO)
    args = build_parser().parse_args(argv)
    try:
        if args.command == "prompt":
            objects = [o.strip() for o in args.objects.split(",") if o.strip()]
            try:
                print(build_prompt(args.scene, objects))
            except ValueError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return 1
            return 0
        job = ExtractionJob(
            image_dir=args.images,
            label_file=args.labels,
            output_path=args.out,
            k=args.k,
            device=args.device,
            encoder_id=args.encoder,
            captioner_id=args.captioner,
            detector_id=args.detector,
            scene_id=args.scene_model,
            seed=args.seed,
        )
        if args.stub:
            from .stub import stub_extract

            count = stub_extract(job)
        else:
            from .real import extract

            count = extract(job)
        print(f"wrote {count} records to {job.output_path}")
        return 0
    except ExtractorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
