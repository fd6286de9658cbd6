"""cadt-extract: dump frozen-ViT patch embeddings as CADT tensor trees."""

import argparse
import sys

import torch

from .backbone import ExtractorConfig, load_backbone
from .extract import extract_dataset

PREPROCESSING = (
    "preprocessing is fixed: resize to 224x224 (bilinear), scale to [0, 1], "
    "normalize (x - 0.5) / 0.5 per channel"
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cadt-extract",
        description="Convert MVTec-style image trees into patch-embedding "
                    "tensor datasets using a frozen ViT backbone.",
        epilog=PREPROCESSING,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="embed a dataset tree",
                       epilog=PREPROCESSING)
    p.add_argument("--images", required=True, help="image dataset root")
    p.add_argument("--out", required=True, help="output tensor root")
    p.add_argument("--layer", type=int, default=9,
                   help="encoder layer whose output is dumped (1..12, default 9)")
    p.add_argument("--categories", default=None,
                   help="comma-separated subset (default: every category found)")
    p.add_argument("--model-id", default=ExtractorConfig.model_id,
                   help="pretrained checkpoint id")
    p.add_argument("--weights", default=None,
                   help="load a saved state_dict instead of downloading")
    p.add_argument("--random-weights", action="store_true",
                   help="seeded random init (offline smoke runs, tests)")
    p.add_argument("--init-seed", type=int, default=0,
                   help="seed for --random-weights")
    p.add_argument("--save-weights", default=None,
                   help="save the loaded state_dict here (for exact reruns)")
    p.add_argument("--apply-layernorm", action="store_true",
                   help="pass the layer output through the encoder's final "
                        "LayerNorm (default: raw layer output)")
    p.add_argument("--batch-size", type=int, default=8)
    p.set_defaults(func=_cmd_extract)
    return parser


def _cmd_extract(args) -> int:
    cfg = ExtractorConfig(
        model_id=args.model_id,
        layer_index=args.layer,
        apply_layernorm=args.apply_layernorm,
        random_weights=args.random_weights,
        weights_path=args.weights,
        init_seed=args.init_seed,
        batch_size=args.batch_size,
    )
    model = load_backbone(cfg)
    if args.save_weights:
        torch.save(model.state_dict(), args.save_weights)
        print(f"weights saved to {args.save_weights}")
    categories = None
    if args.categories:
        categories = [c.strip() for c in args.categories.split(",") if c.strip()]
    done = extract_dataset(args.images, args.out, cfg, categories=categories,
                           model=model, log=print)
    print(f"extracted {len(done)} categories to {args.out}")
    return 0


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
