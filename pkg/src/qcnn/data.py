"""Dataset ingestion: IDX files, 16x16 resize, bipartition-aware flattening.

The on-disk layout is ``<data_dir>/<dataset>/{train,test}-{images,labels}``
(decompressed IDX).  Flattening a 16x16 image to a 256-vector follows one of
two orders whose first/second half split realizes the left/right or the
up/down division of the image at the top of the pooling tree.
"""
from __future__ import annotations

import gzip
import hashlib
import os
import shutil
import struct
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ORDER_LEFT_RIGHT, ORDER_UP_DOWN

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
IMAGE_SIZE = 16
DATA_DIR_ENV = "QCNN_DATA_DIR"

# Published artifact checksums; URLs are the maintained mirrors.
DATASET_REGISTRY: dict[str, dict] = {
    "mnist": {
        "base": "https://ossci-datasets.s3.amazonaws.com/mnist/",
        "files": {
            "train-images": ("train-images-idx3-ubyte.gz", "f68b3c2dcbeaaa9fbdd348bbdeb94873"),
            "train-labels": ("train-labels-idx1-ubyte.gz", "d53e105ee54ea40749a09fcbcd1e9432"),
            "test-images": ("t10k-images-idx3-ubyte.gz", "9fb629c4189551a2d022fa330f9573f3"),
            "test-labels": ("t10k-labels-idx1-ubyte.gz", "ec29112dd5afa0611ce80d1b7f02629c"),
        },
    },
    "fashion-mnist": {
        "base": "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
        "files": {
            "train-images": ("train-images-idx3-ubyte.gz", "8d4fb7e6c68d591d4c3dfef9ec88bf0d"),
            "train-labels": ("train-labels-idx1-ubyte.gz", "25c81989df183df01b3e8a0aad5dffbe"),
            "test-images": ("t10k-images-idx3-ubyte.gz", "bef4ecab320f06d8554ea6380940ec79"),
            "test-labels": ("t10k-labels-idx1-ubyte.gz", "bb300cfdad3c16e7a12a480ee83cd310"),
        },
    },
}


class IdxFormatError(ValueError):
    """Malformed IDX payload; the message carries the byte offset."""


class ChecksumError(IOError):
    """Downloaded file does not match its expected checksum."""


class DataError(RuntimeError):
    """Dataset files missing or unusable."""


def read_idx(data: bytes, kind: str) -> np.ndarray:
    """Parse big-endian IDX bytes: images -> (count, rows, cols) uint8,
    labels -> (count,) uint8."""
    if kind not in ("images", "labels"):
        raise ValueError(f"kind must be 'images' or 'labels', got {kind!r}")
    expected_magic = IMAGE_MAGIC if kind == "images" else LABEL_MAGIC
    ndim = 3 if kind == "images" else 1
    header_len = 4 + 4 * ndim
    if len(data) < 4:
        raise IdxFormatError(f"truncated header at byte offset {len(data)} (need 4)")
    magic = struct.unpack(">i", data[:4])[0]
    if magic != expected_magic:
        raise IdxFormatError(f"unexpected magic {magic} at byte offset 0 "
                             f"(expected {expected_magic} for {kind})")
    if len(data) < header_len:
        raise IdxFormatError(f"truncated dimension fields at byte offset {len(data)} "
                             f"(need {header_len})")
    dims = struct.unpack(f">{ndim}i", data[4:header_len])
    if any(d < 0 for d in dims):
        raise IdxFormatError(f"negative dimension {dims} at byte offset 4")
    count = int(np.prod(dims)) if dims else 0
    if len(data) != header_len + count:
        raise IdxFormatError(f"payload size mismatch at byte offset {len(data)}: "
                             f"dimensions {dims} require {header_len + count} bytes")
    payload = np.frombuffer(data, dtype=np.uint8, offset=header_len)
    return payload.reshape(dims)


def resize_bilinear(images, out_size: int = IMAGE_SIZE) -> np.ndarray:
    """Pixel-center-aligned bilinear resize of square images in [0, 1].

    Sample centers sit at ``(i + 0.5) * src / dst - 0.5``; the result is a
    convex combination of neighbors, clamped back to [0, 1].
    """
    arr = np.asarray(images, dtype=np.float64)
    single = arr.ndim == 2
    if single:
        arr = arr[np.newaxis]
    src = arr.shape[-1]
    if arr.shape[-2] != src:
        raise ValueError(f"expected square images, got {arr.shape[-2:]}")
    centers = (np.arange(out_size) + 0.5) * src / out_size - 0.5
    lo = np.clip(np.floor(centers).astype(int), 0, src - 1)
    hi = np.clip(lo + 1, 0, src - 1)
    frac = np.clip(centers - lo, 0.0, 1.0)
    rows = arr[:, lo, :] * (1.0 - frac)[np.newaxis, :, np.newaxis] \
        + arr[:, hi, :] * frac[np.newaxis, :, np.newaxis]
    out = rows[:, :, lo] * (1.0 - frac)[np.newaxis, np.newaxis, :] \
        + rows[:, :, hi] * frac[np.newaxis, np.newaxis, :]
    out = np.clip(out, 0.0, 1.0)
    return out[0] if single else out


def flatten_indices(order: str, side: int = IMAGE_SIZE) -> np.ndarray:
    """Row-major flat positions, half by half, so that the first half of the
    output is the left (or top) half of the image."""
    half = side // 2
    rows_first: list[int] = []
    if order == ORDER_LEFT_RIGHT:
        for c0 in (0, half):
            for r in range(side):
                for c in range(c0, c0 + half):
                    rows_first.append(r * side + c)
    elif order == ORDER_UP_DOWN:
        for r0 in (0, half):
            for r in range(r0, r0 + half):
                for c in range(side):
                    rows_first.append(r * side + c)
    else:
        raise ValueError(f"order must be {ORDER_LEFT_RIGHT!r} or {ORDER_UP_DOWN!r}, got {order!r}")
    return np.asarray(rows_first, dtype=np.int64)


def flatten_image(image, order: str) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    side = arr.shape[-1]
    idx = flatten_indices(order, side)
    return arr.reshape(arr.shape[:-2] + (side * side,))[..., idx]


def batches(num_samples: int, batch_size: int = 50, seed: int | None = None,
            rng: np.random.Generator | None = None):
    """Yield index arrays covering every sample exactly once, shuffled; the
    final short batch is kept."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if rng is None:
        rng = np.random.default_rng(seed)
    perm = rng.permutation(num_samples)
    for start in range(0, num_samples, batch_size):
        yield perm[start:start + batch_size]


def _checksum(path: Path, algorithm: str) -> str:
    digest = hashlib.new(algorithm)
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def fetch(url: str, dest: Path, checksum: str, algorithm: str = "md5") -> Path:
    """Download ``url`` to ``dest`` unless a checksum-valid copy exists.
    A mismatching download is removed before the error is raised."""
    dest = Path(dest)
    if dest.exists():
        if _checksum(dest, algorithm) == checksum:
            return dest
        dest.unlink()
    dest.parent.mkdir(parents=True, exist_ok=True)
    tmp = dest.with_name(dest.name + ".part")
    try:
        with urllib.request.urlopen(url) as response, open(tmp, "wb") as fh:
            shutil.copyfileobj(response, fh)
        got = _checksum(tmp, algorithm)
        if got != checksum:
            raise ChecksumError(f"{url}: checksum mismatch (expected {checksum}, got {got})")
        os.replace(tmp, dest)
    finally:
        tmp.unlink(missing_ok=True)
    return dest


def default_data_dir(data_dir: str | Path | None = None) -> Path:
    if data_dir is not None:
        return Path(data_dir)
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


def dataset_paths(name: str, data_dir: str | Path | None = None) -> dict[str, Path]:
    base = default_data_dir(data_dir) / name
    return {key: base / key for key in ("train-images", "train-labels", "test-images", "test-labels")}


def dataset_available(name: str, data_dir: str | Path | None = None) -> bool:
    return all(p.exists() for p in dataset_paths(name, data_dir).values())


def prepare_dataset(name: str, data_dir: str | Path | None = None,
                    registry: dict | None = None) -> dict[str, int]:
    """Fetch, verify, decompress, and parse one dataset; returns sample
    counts.  Already-prepared files are reused without network access."""
    registry = registry if registry is not None else DATASET_REGISTRY
    if name not in registry:
        raise DataError(f"unknown dataset {name!r}; registry has {sorted(registry)}")
    entry = registry[name]
    paths = dataset_paths(name, data_dir)
    for key, path in paths.items():
        if path.exists():
            continue
        filename, checksum = entry["files"][key]
        url = entry["base"] + filename
        algorithm = entry.get("algorithm", "md5")
        gz_path = path.parent / filename
        fetch(url, gz_path, checksum, algorithm)
        tmp = path.with_name(path.name + ".tmp")
        with gzip.open(gz_path, "rb") as src, open(tmp, "wb") as dst:
            shutil.copyfileobj(src, dst)
        os.replace(tmp, path)
    counts = {}
    for split in ("train", "test"):
        images = read_idx(paths[f"{split}-images"].read_bytes(), "images")
        labels = read_idx(paths[f"{split}-labels"].read_bytes(), "labels")
        if images.shape[0] != labels.shape[0]:
            raise DataError(f"{name}/{split}: {images.shape[0]} images vs "
                            f"{labels.shape[0]} labels")
        counts[split] = int(images.shape[0])
    return counts


def load_split(name: str, split: str, order: str,
               data_dir: str | Path | None = None,
               chunk: int = 8192) -> tuple[np.ndarray, np.ndarray]:
    """Load one split as ``(samples, labels)`` with samples in [0,1]^256,
    resized to 16x16 and flattened in the requested order."""
    paths = dataset_paths(name, data_dir)
    img_path, lab_path = paths[f"{split}-images"], paths[f"{split}-labels"]
    for p in (img_path, lab_path):
        if not p.exists():
            raise DataError(f"missing dataset file {p}; run the data command first")
    images = read_idx(img_path.read_bytes(), "images")
    labels = read_idx(lab_path.read_bytes(), "labels").astype(np.int64)
    idx = flatten_indices(ORDER_LEFT_RIGHT if order == ORDER_LEFT_RIGHT else ORDER_UP_DOWN)
    out = np.empty((images.shape[0], IMAGE_SIZE * IMAGE_SIZE))
    for start in range(0, images.shape[0], chunk):
        block = images[start:start + chunk].astype(np.float64) / 255.0
        resized = resize_bilinear(block, IMAGE_SIZE)
        out[start:start + chunk] = resized.reshape(resized.shape[0], -1)[:, idx]
    return out, labels


@dataclass(frozen=True)
class ProcessedDataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    order: str
    name: str


def load_dataset(name: str, order: str, data_dir: str | Path | None = None) -> ProcessedDataset:
    train_x, train_y = load_split(name, "train", order, data_dir)
    test_x, test_y = load_split(name, "test", order, data_dir)
    return ProcessedDataset(train_x, train_y, test_x, test_y, order, name)
