"""Command-line interface.

Subcommands: score, eval, heatmap, gen-fixtures, inspect.
Exit codes: 0 success, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bank import BankError, concat_banks, read_bank, write_bank
from .dataset import DatasetError
from .pipeline import (
    ConfigError,
    RunConfig,
    labels_sidecar_path,
    render_query_heatmap,
    run_eval,
    run_score,
)
from .report import write_json
from .synthetic import SyntheticSpec, gen_synthetic

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(",") if p != "")
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {text!r}") from exc


def _grid(text: str) -> tuple[int, int]:
    for sep in ("x", ","):
        if sep in text:
            a, b = text.split(sep, 1)
            return int(a), int(b)
    raise argparse.ArgumentTypeError(f"expected ROWSxCOLS: {text!r}")


def _setting(text: str) -> str:
    return text.replace("-", "_")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crosspatch",
        description="Training-free cross-patch anomaly scoring, evaluation and rendering",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score a bank of query images")
    p.add_argument("--bank-path", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument(
        "--setting",
        type=_setting,
        choices=["few_shot", "batch_zero_shot"],
        default="few_shot",
    )
    p.add_argument("--shots", type=_int_list, default=(1, 2, 4))
    p.add_argument("--seeds", type=_int_list, default=(0, 1, 2))
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--align", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--mask", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--rho", type=float, default=1e-9)
    p.add_argument("--kp-fraction", type=float, default=0.3)
    p.add_argument("--reduction", choices=["nearest", "farthest"], default="nearest")
    p.add_argument("--dataset-root", default=None)
    p.add_argument("--policy", default=None, help="JSON file of per-dataset align/mask defaults")
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("eval", help="compute AUROC/AP/AUPRO from a results file")
    p.add_argument("--results", required=True)
    p.add_argument("--dataset-root", default=None)
    p.add_argument("--output-dir", default=None)
    p.add_argument("--shots", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sigma", type=float, default=4.0)

    p = sub.add_parser("heatmap", help="render one query's anomaly heatmap PNG")
    p.add_argument("--results", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma", type=float, default=4.0)

    p = sub.add_parser("gen-fixtures", help="write a synthetic bank with planted anomalies")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-images", type=int, default=16)
    p.add_argument("--grid", type=_grid, default=(8, 8))
    p.add_argument("--embed-dim", type=int, default=16)
    p.add_argument("--anomaly-rate", type=float, default=0.25)
    p.add_argument("--anomaly-patch-count", type=int, default=4)
    p.add_argument("--cluster-separation", type=float, default=np.pi / 3)
    p.add_argument("--jitter", type=float, default=0.08)
    p.add_argument("--train-images", type=int, default=0,
                   help="extra all-normal images named train/good/* for few-shot runs")
    p.add_argument("--dataset-tag", default="synthetic")

    p = sub.add_parser("inspect", help="print a bank's metadata")
    p.add_argument("--bank-path", required=True)

    return parser


def cmd_score(args) -> int:
    policy = None
    if args.policy:
        policy = json.loads(Path(args.policy).read_text())
    cfg = RunConfig(
        bank_path=args.bank_path,
        output_dir=args.output_dir,
        setting=args.setting,
        shots=args.shots,
        seeds=args.seeds,
        batch_size=args.batch_size,
        align=args.align,
        mask=args.mask,
        rho=args.rho,
        kp_fraction=args.kp_fraction,
        reduction=args.reduction,
        dataset_root=args.dataset_root,
    )
    run_score(cfg, policy=policy, n_threads=args.threads)
    print(f"wrote {Path(args.output_dir) / 'results.json'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    report = run_eval(
        args.results,
        args.dataset_root,
        args.output_dir,
        shots=args.shots,
        seed=args.seed,
        sigma=args.sigma,
    )
    for c in report.per_category:
        print(
            f"{c.category}: image_auroc={c.image_auroc:.4f} image_ap={c.image_ap:.4f} "
            f"pixel_auroc={c.pixel_auroc:.4f} aupro={c.aupro:.4f}"
        )
    macro = report.macro_average
    print(
        "macro_average: "
        + " ".join(f"{k}={macro[k]:.4f}" for k in sorted(macro))
    )
    return EXIT_OK


def cmd_heatmap(args) -> int:
    render_query_heatmap(args.results, args.image, args.out, sigma=args.sigma)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_gen_fixtures(args) -> int:
    spec = SyntheticSpec(
        seed=args.seed,
        n_images=args.n_images,
        grid=args.grid,
        embed_dim=args.embed_dim,
        anomaly_rate=args.anomaly_rate,
        anomaly_patch_count=args.anomaly_patch_count,
        cluster_separation=args.cluster_separation,
        jitter=args.jitter,
    )
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    bank, image_labels, patch_labels = gen_synthetic(
        spec, name_prefix="test/img_", dataset_tag=args.dataset_tag
    )
    names = list(bank.meta.image_names)
    if args.train_images > 0:
        train_spec = SyntheticSpec(
            seed=args.seed,
            n_images=args.train_images,
            grid=args.grid,
            embed_dim=args.embed_dim,
            anomaly_rate=0.0,
            anomaly_patch_count=args.anomaly_patch_count,
            cluster_separation=args.cluster_separation,
            jitter=args.jitter,
        )
        train_bank, t_labels, t_patch = gen_synthetic(
            train_spec, name_prefix="train/good/img_", image_index_offset=100000,
            dataset_tag=args.dataset_tag,
        )
        bank = concat_banks(bank, train_bank)
        names = list(bank.meta.image_names)
        image_labels = np.concatenate([image_labels, t_labels])
        patch_labels = np.concatenate([patch_labels, t_patch])

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_bank(bank, out)
    sidecar = {
        "image_labels": {n: int(l) for n, l in zip(names, image_labels)},
        "patch_labels": {n: patch_labels[i].tolist() for i, n in enumerate(names)},
    }
    write_json(sidecar, labels_sidecar_path(out))
    print(f"wrote {out} and {labels_sidecar_path(out)}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    bank = read_bank(args.bank_path)
    meta = json.loads(bank.meta.to_json())
    meta["n_images"] = bank.meta.n_images
    meta["n_patches"] = bank.meta.n_patches
    print(json.dumps(meta, indent=2, sort_keys=True))
    return EXIT_OK


_COMMANDS = {
    "score": cmd_score,
    "eval": cmd_eval,
    "heatmap": cmd_heatmap,
    "gen-fixtures": cmd_gen_fixtures,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BankError, DatasetError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
