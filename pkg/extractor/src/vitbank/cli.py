"""CLI: extract PEAD banks from image datasets with pretrained backbones."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .backbones import REGISTRY, ModelUnavailable
from .extract import ExtractSpec, LayoutViolation, RigidTransform, extract, extract_warped


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vitbank")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("extract", "extract-warped"):
        p = sub.add_parser(name)
        p.add_argument("--model-id", required=True, choices=sorted(REGISTRY))
        p.add_argument("--dataset-root", required=True)
        p.add_argument("--out-path", required=True)
        p.add_argument("--image-size", type=int, default=448)
        p.add_argument("--split", choices=["train_good", "test_all"], default="train_good")
        if name == "extract-warped":
            p.add_argument(
                "--transforms", required=True,
                help="JSON file: list of {angle_deg, dx, dy}, one per image",
            )

    sub.add_parser("models")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "models":
        for model_id, config in sorted(REGISTRY.items()):
            print(f"{model_id}: patch {config.patch_size}, dim {config.embed_dim}")
        return 0
    spec = ExtractSpec(
        model_id=args.model_id,
        dataset_root=args.dataset_root,
        out_path=args.out_path,
        image_size=args.image_size,
        split=args.split,
    )
    try:
        if args.command == "extract":
            names = extract(spec)
        else:
            doc = json.loads(Path(args.transforms).read_text())
            transforms = [RigidTransform(t["angle_deg"], t["dx"], t["dy"]) for t in doc]
            names = extract_warped(spec, transforms)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ModelUnavailable, LayoutViolation, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {spec.out_path} ({len(names)} images)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
