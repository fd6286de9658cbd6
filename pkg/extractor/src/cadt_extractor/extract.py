"""Walk an MVTec-style image tree and emit the embedding dataset layout.

Input per category (VisA's one-class reorganization uses the same shape):

    <images>/<category>/train/good/*.png
    <images>/<category>/test/<class>/*.png        class "good" = normal
    <images>/<category>/ground_truth/<class>/<stem>_mask.png

Output per category:

    <out>/<category>/train/train_0000.cadt ...    f32 [28, 28, 768]
    <out>/<category>/test/test_0000.cadt ...
    <out>/<category>/test/labels.txt              one 0/1 per test image
    <out>/<category>/masks/test_0000.cadt         u8, original resolution,
                                                  only for anomalous images
    <out>/<category>/meta.txt                     image_size = H W

Test images are ordered by sorted class directory then sorted file name,
so labels and masks line up with the zero-padded tensor names. Masks are
written at their stored resolution untouched; image_size comes from the
first test image's original size (every category in these datasets is
shot at one resolution).
"""

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .backbone import ExtractError, ExtractorConfig, embed_batch, preprocess
from .tensor_file import write_tensor

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


def find_categories(images_root) -> list:
    """Category directories under the root that have a train/good split."""
    root = Path(images_root)
    if not root.is_dir():
        raise ExtractError(f"{root}: not a directory")
    cats = sorted(p.name for p in root.iterdir()
                  if (p / "train" / "good").is_dir())
    if not cats:
        raise ExtractError(f"{root}: no category with a train/good split found")
    return cats


def _image_files(d: Path) -> list:
    return sorted(p for p in d.iterdir()
                  if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())


def _load_image(path: Path) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
        return img
    except Exception as exc:
        raise ExtractError(f"unreadable image {path}: {exc}") from exc


def _mask_path(category_dir: Path, class_name: str, stem: str):
    gt = category_dir / "ground_truth" / class_name
    for candidate in (gt / f"{stem}_mask.png", gt / f"{stem}.png"):
        if candidate.is_file():
            return candidate
    return None


def _extract_split(model, cfg: ExtractorConfig, files, out_dir: Path,
                   prefix: str, log=None) -> list:
    """Embed files in batches, write <prefix>_%04d.cadt, return original sizes."""
    out_dir.mkdir(parents=True, exist_ok=True)
    sizes = []
    for start in range(0, len(files), cfg.batch_size):
        chunk = files[start : start + cfg.batch_size]
        pixel_list = []
        for path in chunk:
            img = _load_image(path)
            sizes.append((img.height, img.width))
            pixel_list.append(preprocess(img))
        grids = embed_batch(model, torch.stack(pixel_list), cfg.layer_index,
                            cfg.apply_layernorm)
        for offset, _ in enumerate(chunk):
            idx = start + offset
            write_tensor(grids[offset], out_dir / f"{prefix}_{idx:04d}.cadt")
        if log:
            log(f"  {prefix}: {min(start + len(chunk), len(files))}/{len(files)}")
    return sizes


def extract_category(model, cfg: ExtractorConfig, category_dir: Path,
                     out_dir: Path, log=None) -> None:
    train_files = _image_files(category_dir / "train" / "good")
    if not train_files:
        raise ExtractError(f"{category_dir}: train/good has no images")

    test_entries = []  # (path, label, class name)
    test_root = category_dir / "test"
    if test_root.is_dir():
        for class_dir in sorted(p for p in test_root.iterdir() if p.is_dir()):
            label = 0 if class_dir.name == "good" else 1
            for path in _image_files(class_dir):
                test_entries.append((path, label, class_dir.name))

    _extract_split(model, cfg, train_files, out_dir / "train", "train", log=log)
    sizes = _extract_split(model, cfg, [p for p, _, _ in test_entries],
                           out_dir / "test", "test", log=log)

    labels = [str(label) for _, label, _ in test_entries]
    if labels:
        (out_dir / "test" / "labels.txt").write_text(
            "\n".join(labels) + "\n", encoding="utf-8"
        )

    masks_dir = out_dir / "masks"
    for idx, (path, label, class_name) in enumerate(test_entries):
        if label == 0:
            continue
        mask_file = _mask_path(category_dir, class_name, path.stem)
        if mask_file is None:
            raise ExtractError(f"{path}: anomalous test image has no ground-truth mask")
        mask = np.asarray(_load_image(mask_file).convert("L"), dtype=np.uint8)
        masks_dir.mkdir(parents=True, exist_ok=True)
        write_tensor(mask, masks_dir / f"test_{idx:04d}.cadt")

    h, w = sizes[0] if sizes else (
        _load_image(train_files[0]).height, _load_image(train_files[0]).width
    )
    (out_dir / "meta.txt").write_text(f"image_size = {h} {w}\n", encoding="utf-8")


def extract_dataset(images_root, out_root, cfg: ExtractorConfig,
                    categories=None, model=None, log=None) -> list:
    """Extract every category (or the given subset); returns the task ids."""
    from .backbone import load_backbone

    images_root = Path(images_root)
    out_root = Path(out_root)
    available = find_categories(images_root)
    if categories is None:
        categories = available
    else:
        missing = [c for c in categories if c not in available]
        if missing:
            raise ExtractError(
                f"categories not found under {images_root}: {', '.join(missing)}"
            )
    if model is None:
        model = load_backbone(cfg)
    for cat in categories:
        if log:
            log(f"[{cat}]")
        extract_category(model, cfg, images_root / cat, out_root / cat, log=log)
    return list(categories)
