"""Command-line entry points for the continual anomaly detection harness.

Subcommands:
    run-sequence    sequential task training + per-stage evaluation
    run-joint       pooled training over all tasks at once
    score-one       score one stored embedding grid against a saved bank
    export-coreset  dump a run's final bank plus its per-task histogram
    gen-synthetic   write a seeded synthetic dataset tree
    metrics         recompute metric values from stored score files

Run parameters can come from a flat key=value config file (--config);
explicit flags override file values. On failure every subcommand prints a
single "error: ..." line to stderr and exits nonzero.
"""

import argparse
import sys
from pathlib import Path

from .coreset import MemoryBank, export_coreset
from .pipeline import (
    JOINT_SAMPLERS,
    RunConfig,
    config_from_file,
    recompute_metrics,
    run_joint,
    run_sequence,
    score_one,
)
from .synthetic import generate_dataset
from .tensor_io import load_bank, save_bank


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="flat key=value config file")
    p.add_argument("--dataset-root", default=None, help="dataset directory")
    p.add_argument("--tasks", default=None,
                   help="comma-separated task order, e.g. bottle,cable")
    p.add_argument("--output-dir", default=None, help="run artifact directory")
    p.add_argument("--capacity", type=int, default=None,
                   help="coreset capacity (default 10000)")
    p.add_argument("--neighbor-b", type=int, default=None,
                   help="neighborhood size for the image score (default 9)")
    p.add_argument("--smoothing-sigma", type=float, default=None,
                   help="anomaly map Gaussian sigma, 0 disables (default 4.0)")
    p.add_argument("--batch-rows", type=int, default=None,
                   help="max embedding rows per update batch (default 784)")
    p.add_argument("--eval-every-stage", default=None,
                   help="true/false: evaluate after every stage (default true)")
    p.add_argument("--rng-seed", type=int, default=None, help="seed (default 0)")


def _build_config(args) -> RunConfig:
    overrides = {
        "dataset_root": args.dataset_root,
        "task_order": args.tasks,
        "output_dir": args.output_dir,
        "coreset_capacity": args.capacity,
        "neighbor_b": args.neighbor_b,
        "smoothing_sigma": args.smoothing_sigma,
        "batch_rows": args.batch_rows,
        "eval_every_stage": args.eval_every_stage,
        "rng_seed": args.rng_seed,
    }
    if args.config:
        return config_from_file(args.config, overrides)
    missing = [k for k in ("dataset_root", "task_order", "output_dir")
               if overrides.get(k) is None]
    if missing:
        raise ValueError(
            "missing required options (give --config or flags): "
            + ", ".join(missing)
        )
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if isinstance(overrides.get("task_order"), str):
        overrides["task_order"] = [
            t.strip() for t in overrides["task_order"].split(",") if t.strip()
        ]
    if isinstance(overrides.get("eval_every_stage"), str):
        from .pipeline import _parse_bool
        overrides["eval_every_stage"] = _parse_bool(overrides["eval_every_stage"])
    return RunConfig(**overrides)


def _cmd_run_sequence(args) -> int:
    cfg = _build_config(args)
    records = run_sequence(cfg, resume=not args.no_resume, log=print)
    print(f"done, {len(records)} stages; report at {Path(cfg.output_dir) / 'report.txt'}")
    return 0


def _cmd_run_joint(args) -> int:
    cfg = _build_config(args)
    run_joint(cfg, sampler=args.sampler, log=print)
    print(f"done; report at {Path(cfg.output_dir) / 'report.txt'}")
    return 0


def _cmd_score_one(args) -> int:
    image_size = None
    if args.image_size:
        parts = args.image_size.split("x")
        if len(parts) != 2:
            raise ValueError(f"--image-size must look like 224x224, got {args.image_size!r}")
        image_size = (int(parts[0]), int(parts[1]))
    amap = score_one(args.bank, args.embedding, args.out,
                     neighbor_b=args.neighbor_b,
                     smoothing_sigma=args.smoothing_sigma,
                     image_size=image_size)
    print(f"{amap.source_id}: image score {amap.image_score:.6f}")
    return 0


def _cmd_export_coreset(args) -> int:
    snapshot = load_bank(args.bank)
    bank = MemoryBank.from_snapshot(snapshot)
    snap, counts = export_coreset(bank)
    save_bank(snap, args.out)
    lines = [f"{task}\t{count}" for task, count in sorted(counts.items())]
    hist_path = Path(str(args.out) + ".counts")
    hist_path.write_text(("\n".join(lines) + "\n") if lines else "", encoding="utf-8")
    print(f"exported {len(bank)} elements to {args.out}; histogram at {hist_path}")
    for line in lines:
        print(line.replace("\t", "  "))
    return 0


def _cmd_gen_synthetic(args) -> int:
    tasks = [t.strip() for t in args.tasks.split(",") if t.strip()]
    if not tasks:
        raise ValueError("--tasks must name at least one task")
    generate_dataset(
        args.out, tasks,
        n_train=args.n_train,
        n_test_normal=args.n_test_normal,
        n_test_anomalous=args.n_test_anomalous,
        dim=args.dim,
        grid=(args.grid, args.grid),
        image_size=args.image_size,
        margin=args.margin,
        n_clusters=args.clusters,
        seed=args.seed,
    )
    print(f"wrote {len(tasks)} tasks under {args.out}")
    return 0


def _cmd_metrics(args) -> int:
    print(recompute_metrics(args.run_dir, dataset_root=args.dataset_root), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corebank",
        description="Continual anomaly detection over a shared fixed-capacity coreset",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run-sequence", help="sequential task training + evaluation")
    _add_run_flags(p)
    p.add_argument("--no-resume", action="store_true",
                   help="recompute stages even if artifacts exist")
    p.set_defaults(func=_cmd_run_sequence)

    p = sub.add_parser("run-joint", help="train on all tasks pooled")
    _add_run_flags(p)
    p.add_argument("--sampler", choices=JOINT_SAMPLERS, default="incremental",
                   help="how the joint bank is built")
    p.set_defaults(func=_cmd_run_joint)

    p = sub.add_parser("score-one", help="score one embedding grid against a bank")
    p.add_argument("--bank", required=True, help="bank snapshot path (.cadt)")
    p.add_argument("--embedding", required=True, help="embedding grid tensor path")
    p.add_argument("--out", required=True, help="output prefix for map/score files")
    p.add_argument("--neighbor-b", type=int, default=9)
    p.add_argument("--smoothing-sigma", type=float, default=4.0)
    p.add_argument("--image-size", default=None, help="HxW, default 8 px per cell")
    p.set_defaults(func=_cmd_score_one)

    p = sub.add_parser("export-coreset", help="copy a bank and dump per-task counts")
    p.add_argument("--bank", required=True, help="bank snapshot path (.cadt)")
    p.add_argument("--out", required=True, help="output snapshot path")
    p.set_defaults(func=_cmd_export_coreset)

    p = sub.add_parser("gen-synthetic", help="write a seeded synthetic dataset")
    p.add_argument("--out", required=True, help="dataset root to create")
    p.add_argument("--tasks", required=True, help="comma-separated task names")
    p.add_argument("--n-train", type=int, default=100)
    p.add_argument("--n-test-normal", type=int, default=50)
    p.add_argument("--n-test-anomalous", type=int, default=50)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--grid", type=int, default=8, help="patch grid side length")
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--margin", type=float, default=6.0,
                   help="anomaly displacement in noise sigmas")
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gen_synthetic)

    p = sub.add_parser("metrics", help="recompute metrics from stored score files")
    p.add_argument("--run-dir", required=True, help="run artifact directory")
    p.add_argument("--dataset-root", default=None,
                   help="dataset root (enables pixel AUPR recompute)")
    p.set_defaults(func=_cmd_metrics)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
