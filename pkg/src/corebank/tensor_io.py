"""On-disk tensor container, dataset directory layout, and memory-bank persistence.

Tensor container (bit-exact, little-endian):

    bytes 0-3   magic "CADT"
    byte  4     dtype: 0 = float32-le, 1 = uint8
    byte  5     rank: 1, 2 or 3
    next        rank x uint32-le dims, each >= 1
    rest        row-major payload, exactly prod(dims) * itemsize bytes

Dataset directory layout (one task per directory under a dataset root):

    root/<task_id>/train/*.cadt          float32 [n, D] or [Hp, Wp, D], one per image
    root/<task_id>/test/*.cadt           same shapes
    root/<task_id>/test/labels.txt       one 0/1 integer per line, lexicographic file order
    root/<task_id>/masks/<stem>.cadt     optional uint8 [H, W] ground-truth mask per test image
    root/<task_id>/meta.txt              optional flat key=value file (image_size = H W)

Memory-bank snapshots are a float32 [m, D] tensor plus a human-readable
"<path>.meta" sidecar carrying version, capacity, dim and per-element
provenance. An empty bank stores no tensor payload (dims must be >= 1),
only the sidecar with count = 0.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

MAGIC = b"CADT"
DTYPE_F32 = 0
DTYPE_U8 = 1
TENSOR_SUFFIX = ".cadt"
SNAPSHOT_VERSION = 1

_DTYPE_CODES = {DTYPE_F32: np.dtype("<f4"), DTYPE_U8: np.dtype("u1")}
_DTYPE_NAMES = {DTYPE_F32: "f32-le", DTYPE_U8: "u8"}


class TensorIOError(Exception):
    """Base error for the tensor container; carries path and byte offset."""

    def __init__(self, message: str, path=None, offset: Optional[int] = None):
        self.path = str(path) if path is not None else None
        self.offset = offset
        loc = f" [{self.path}" + (f" @ byte {offset}]" if offset is not None else "]")
        super().__init__(message + (loc if path is not None else ""))


class BadMagicError(TensorIOError):
    pass


class DtypeMismatchError(TensorIOError):
    pass


class SizeMismatchError(TensorIOError):
    pass


class DatasetError(Exception):
    """Raised for malformed dataset directories (missing split, label/mask mismatch)."""


class SnapshotError(Exception):
    """Raised for unreadable memory-bank snapshots (bad version, corrupt payload)."""


def write_tensor(arr: np.ndarray, path) -> None:
    """Write an array in the container format. Byte-exact round trip with read_tensor."""
    arr = np.asarray(arr)
    if arr.dtype == np.float32:
        code = DTYPE_F32
    elif arr.dtype == np.uint8:
        code = DTYPE_U8
    else:
        raise ValueError(f"unsupported dtype {arr.dtype}; use float32 or uint8")
    if arr.ndim not in (1, 2, 3):
        raise ValueError(f"rank must be 1..3, got {arr.ndim}")
    if any(d < 1 for d in arr.shape):
        raise ValueError(f"all dims must be >= 1, got shape {arr.shape}")
    header = MAGIC + struct.pack("<BB", code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False)
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(payload.tobytes())
    except OSError as exc:
        raise TensorIOError(f"write failed: {exc}", path=path) from exc


def read_tensor(path, dtype: Optional[str] = None) -> np.ndarray:
    """Read a container file into an array (float32 or uint8).

    `dtype` may be "f32" or "u8" to require a specific payload type.
    Truncated or oversized payloads are rejected; NaN/Inf values are
    preserved (finiteness is a dataset-level check, not a container one).
    """
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as exc:
        raise TensorIOError(f"read failed: {exc}", path=path) from exc

    if len(blob) < 6:
        raise TensorIOError("file shorter than fixed header", path=path, offset=len(blob))
    if blob[:4] != MAGIC:
        raise BadMagicError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}", path=path, offset=0)
    code, rank = struct.unpack_from("<BB", blob, 4)
    if code not in _DTYPE_CODES:
        raise DtypeMismatchError(f"unknown dtype code {code}", path=path, offset=4)
    if dtype is not None:
        want = DTYPE_F32 if dtype == "f32" else DTYPE_U8
        if code != want:
            raise DtypeMismatchError(
                f"expected {_DTYPE_NAMES[want]}, file is {_DTYPE_NAMES[code]}",
                path=path,
                offset=4,
            )
    if rank not in (1, 2, 3):
        raise TensorIOError(f"rank must be 1..3, got {rank}", path=path, offset=5)
    dims_end = 6 + 4 * rank
    if len(blob) < dims_end:
        raise SizeMismatchError("truncated dims header", path=path, offset=len(blob))
    dims = struct.unpack_from(f"<{rank}I", blob, 6)
    if any(d < 1 for d in dims):
        raise TensorIOError(f"all dims must be >= 1, got {dims}", path=path, offset=6)
    np_dtype = _DTYPE_CODES[code]
    expected = int(np.prod(dims)) * np_dtype.itemsize
    actual = len(blob) - dims_end
    if actual != expected:
        raise SizeMismatchError(
            f"payload has {actual} bytes, dims {dims} require {expected}",
            path=path,
            offset=dims_end,
        )
    arr = np.frombuffer(blob, dtype=np_dtype, offset=dims_end).reshape(dims)
    # native byte order, writable copy
    return np.ascontiguousarray(arr.astype(np_dtype.newbyteorder("="), copy=True))


@dataclass
class EmbeddingBatch:
    """A set of D-dimensional patch embeddings, optionally grid-shaped for one image.

    With a grid (Hp, Wp), Hp*Wp == n and row i corresponds to patch
    (i // Wp, i % Wp) in row-major order.
    """

    embeddings: np.ndarray
    grid: Optional[tuple[int, int]] = None
    source_id: str = ""
    task_id: str = ""

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float32)
        if emb.ndim != 2 or emb.shape[0] < 1 or emb.shape[1] < 1:
            raise ValueError(f"embeddings must be a non-empty n x D matrix, got {emb.shape}")
        if not np.isfinite(emb).all():
            raise ValueError(f"embeddings for {self.source_id!r} contain NaN/Inf")
        if self.grid is not None:
            hp, wp = self.grid
            if hp * wp != emb.shape[0]:
                raise ValueError(f"grid {self.grid} does not cover {emb.shape[0]} embeddings")
            self.grid = (int(hp), int(wp))
        self.embeddings = emb

    @property
    def n(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


@dataclass
class TestSample:
    batch: EmbeddingBatch
    label: int
    mask: Optional[np.ndarray] = None


@dataclass
class TaskDataset:
    task_id: str
    train: list[EmbeddingBatch]
    test: list[TestSample]
    image_size: tuple[int, int]


@dataclass
class MemoryBankSnapshot:
    embeddings: np.ndarray
    capacity: int
    provenance: list[tuple[str, str]] = field(default_factory=list)
    format_version: int = SNAPSHOT_VERSION

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float32)
        if emb.ndim != 2:
            raise ValueError(f"snapshot embeddings must be m x D, got shape {emb.shape}")
        if emb.shape[0] > self.capacity:
            raise ValueError(f"snapshot holds {emb.shape[0]} > capacity {self.capacity}")
        if len(self.provenance) != emb.shape[0]:
            raise ValueError(
                f"provenance length {len(self.provenance)} != element count {emb.shape[0]}"
            )
        self.embeddings = emb


def _batch_from_tensor(arr: np.ndarray, source_id: str, task_id: str, path) -> EmbeddingBatch:
    if arr.ndim == 3:
        hp, wp, d = arr.shape
        flat = arr.reshape(hp * wp, d)
        grid = (hp, wp)
    elif arr.ndim == 2:
        flat = arr
        grid = None
    else:
        raise DatasetError(f"embedding tensor must be rank 2 or 3: {path}")
    try:
        return EmbeddingBatch(flat, grid=grid, source_id=source_id, task_id=task_id)
    except ValueError as exc:
        raise DatasetError(f"{exc} ({path})") from exc


def _list_tensors(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix == TENSOR_SUFFIX)


def read_kv_file(path) -> dict[str, str]:
    """Parse a flat key = value UTF-8 text file; '#' starts a comment line."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def load_task(root, task_id: str) -> TaskDataset:
    """Load one task from the dataset layout, in deterministic lexicographic order."""
    task_dir = Path(root) / task_id
    train_dir = task_dir / "train"
    test_dir = task_dir / "test"
    if not train_dir.is_dir():
        raise DatasetError(f"missing split: {train_dir}")
    if not test_dir.is_dir():
        raise DatasetError(f"missing split: {test_dir}")

    train = [
        _batch_from_tensor(read_tensor(p, dtype="f32"), p.stem, task_id, p)
        for p in _list_tensors(train_dir)
    ]

    test_files = _list_tensors(test_dir)
    labels_path = test_dir / "labels.txt"
    if not labels_path.is_file():
        raise DatasetError(f"missing labels file: {labels_path}")
    with open(labels_path, "r", encoding="utf-8") as f:
        labels = [int(line) for line in f.read().split()]
    if len(labels) != len(test_files):
        raise DatasetError(
            f"label count mismatch: {len(labels)} labels for {len(test_files)} test tensors"
        )
    if any(lab not in (0, 1) for lab in labels):
        raise DatasetError("test labels must be 0 or 1")

    image_size = None
    meta_path = task_dir / "meta.txt"
    if meta_path.is_file():
        meta = read_kv_file(meta_path)
        if "image_size" in meta:
            h, w = meta["image_size"].split()
            image_size = (int(h), int(w))

    masks_dir = task_dir / "masks"
    test = []
    for path, label in zip(test_files, labels):
        batch = _batch_from_tensor(read_tensor(path, dtype="f32"), path.stem, task_id, path)
        mask = None
        mask_path = masks_dir / path.name
        if masks_dir.is_dir() and mask_path.is_file():
            mask = read_tensor(mask_path, dtype="u8")
            if mask.ndim != 2:
                raise DatasetError(f"mask must be rank 2: {mask_path}")
            if image_size is None:
                image_size = (mask.shape[0], mask.shape[1])
            elif mask.shape != image_size:
                raise DatasetError(
                    f"mask shape {mask.shape} != image size {image_size}: {mask_path}"
                )
        test.append(TestSample(batch=batch, label=label, mask=mask))

    if image_size is None:
        image_size = (224, 224)
    return TaskDataset(task_id=task_id, train=train, test=test, image_size=image_size)


def save_bank(snapshot: MemoryBankSnapshot, path) -> None:
    """Persist a snapshot: tensor payload at `path` (if non-empty) plus '<path>.meta'."""
    path = Path(path)
    m, d = snapshot.embeddings.shape
    lines = [
        f"version = {snapshot.format_version}",
        f"capacity = {snapshot.capacity}",
        f"dim = {d}",
        f"count = {m}",
    ]
    for task_id, source_id in snapshot.provenance:
        lines.append(f"{task_id}\t{source_id}")
    meta_path = Path(str(path) + ".meta")
    os.makedirs(path.parent, exist_ok=True)
    with open(meta_path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    if m > 0:
        write_tensor(snapshot.embeddings, path)
    elif path.exists():
        path.unlink()


def load_bank(path) -> MemoryBankSnapshot:
    path = Path(path)
    meta_path = Path(str(path) + ".meta")
    if not meta_path.is_file():
        raise SnapshotError(f"missing snapshot sidecar: {meta_path}")
    with open(meta_path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    header: dict[str, str] = {}
    provenance: list[tuple[str, str]] = []
    for line in lines:
        if "\t" in line:
            task_id, _, source_id = line.partition("\t")
            provenance.append((task_id, source_id))
        elif "=" in line:
            key, _, value = line.partition("=")
            header[key.strip()] = value.strip()
    try:
        version = int(header["version"])
        capacity = int(header["capacity"])
        dim = int(header["dim"])
        count = int(header["count"])
    except (KeyError, ValueError) as exc:
        raise SnapshotError(f"corrupt snapshot sidecar {meta_path}: {exc}") from exc
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    if len(provenance) != count:
        raise SnapshotError(
            f"corrupt snapshot: {len(provenance)} provenance rows for count {count}"
        )
    if count == 0:
        embeddings = np.zeros((0, dim), dtype=np.float32)
    else:
        embeddings = read_tensor(path, dtype="f32")
        if embeddings.ndim != 2 or embeddings.shape != (count, dim):
            raise SnapshotError(
                f"corrupt snapshot: tensor shape {embeddings.shape}, sidecar says ({count}, {dim})"
            )
        if not np.isfinite(embeddings).all():
            raise SnapshotError("corrupt snapshot: non-finite embeddings")
    if count > capacity:
        raise SnapshotError(f"corrupt snapshot: count {count} > capacity {capacity}")
    return MemoryBankSnapshot(
        embeddings=embeddings,
        capacity=capacity,
        provenance=provenance,
        format_version=version,
    )
