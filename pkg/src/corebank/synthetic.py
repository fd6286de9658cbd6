"""Seeded synthetic embedding datasets for exercising the full pipeline.

Each task gets a handful of isotropic Gaussian cluster centers drawn far
apart. A normal image is a grid of patches sampled around those centers
with unit-ish noise; an anomalous image takes one rectangular block of
grid cells and pushes their patches away from the cluster center by a
fixed margin (in units of the noise sigma) along a random direction. With
a margin of several sigma the displaced patches sit well outside the
normal cloud, so nearest-neighbor distances separate the classes and the
ground-truth masks mark exactly the displaced block.

Everything is driven by one numpy Generator, so a (seed, parameters) pair
pins the entire dataset tree byte for byte.
"""

from pathlib import Path

import numpy as np

from .tensor_io import write_tensor


def make_task_arrays(rng, n_train: int, n_test_normal: int, n_test_anomalous: int,
                     dim: int = 8, grid: tuple[int, int] = (8, 8),
                     image_size: int = 64, margin: float = 6.0,
                     noise_sigma: float = 1.0, n_clusters: int = 4,
                     center_spread: float = 100.0):
    """Sample one task's train/test tensors in memory.

    Returns (train, test, labels, masks): train is a list of [Hp,Wp,D]
    float32 arrays, test likewise, labels a list of 0/1, masks a list of
    [image_size, image_size] uint8 arrays (all zero for normal images).
    """
    hp, wp = grid
    n_patches = hp * wp
    centers = rng.normal(0.0, center_spread, size=(n_clusters, dim))

    def normal_image():
        assign = rng.integers(0, n_clusters, size=n_patches)
        pts = centers[assign] + rng.normal(0.0, noise_sigma, size=(n_patches, dim))
        return pts.astype(np.float32).reshape(hp, wp, dim), assign

    def anomalous_image():
        emb, assign = normal_image()
        bh = int(rng.integers(1, max(2, hp // 3) + 1))
        bw = int(rng.integers(1, max(2, wp // 3) + 1))
        r0 = int(rng.integers(0, hp - bh + 1))
        c0 = int(rng.integers(0, wp - bw + 1))
        direction = rng.normal(0.0, 1.0, size=dim)
        direction /= np.linalg.norm(direction)
        shift = (margin * noise_sigma * direction).astype(np.float32)
        emb[r0 : r0 + bh, c0 : c0 + bw] += shift
        mask = np.zeros((image_size, image_size), dtype=np.uint8)
        cell_h = image_size // hp
        cell_w = image_size // wp
        mask[r0 * cell_h : (r0 + bh) * cell_h, c0 * cell_w : (c0 + bw) * cell_w] = 1
        return emb, mask

    train = [normal_image()[0] for _ in range(n_train)]
    test, labels, masks = [], [], []
    zero_mask = np.zeros((image_size, image_size), dtype=np.uint8)
    for _ in range(n_test_normal):
        test.append(normal_image()[0])
        labels.append(0)
        masks.append(zero_mask)
    for _ in range(n_test_anomalous):
        emb, mask = anomalous_image()
        test.append(emb)
        labels.append(1)
        masks.append(mask)
    return train, test, labels, masks


def generate_dataset(root, task_ids, n_train: int = 100, n_test_normal: int = 50,
                     n_test_anomalous: int = 50, dim: int = 8,
                     grid: tuple[int, int] = (8, 8), image_size: int = 64,
                     margin: float = 6.0, noise_sigma: float = 1.0,
                     n_clusters: int = 4, seed: int = 0) -> Path:
    """Write a full dataset tree under root, one directory per task.

    File names are zero-padded so lexicographic order equals generation
    order. Returns the root path.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    for task_id in task_ids:
        train, test, labels, masks = make_task_arrays(
            rng, n_train, n_test_normal, n_test_anomalous,
            dim=dim, grid=grid, image_size=image_size, margin=margin,
            noise_sigma=noise_sigma, n_clusters=n_clusters,
        )
        task_dir = root / task_id
        (task_dir / "train").mkdir(parents=True, exist_ok=True)
        (task_dir / "test").mkdir(parents=True, exist_ok=True)
        (task_dir / "masks").mkdir(parents=True, exist_ok=True)
        for i, emb in enumerate(train):
            write_tensor(emb, task_dir / "train" / f"train_{i:04d}.cadt")
        for i, emb in enumerate(test):
            write_tensor(emb, task_dir / "test" / f"test_{i:04d}.cadt")
            write_tensor(masks[i], task_dir / "masks" / f"test_{i:04d}.cadt")
        lines = "\n".join(str(lab) for lab in labels) + "\n"
        (task_dir / "test" / "labels.txt").write_text(lines, encoding="utf-8")
        (task_dir / "meta.txt").write_text(
            f"image_size = {image_size} {image_size}\n", encoding="utf-8"
        )
    return root
