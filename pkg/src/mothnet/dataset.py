"""Raw image ingestion and the vectorized feature sets fed to the AL.

MNIST pipeline
    1. crop a 2-pixel border (28 -> 24) and average 2x2 blocks (-> 12x12)
    2. subtract the pixel-wise mean of a seeded set-aside pool (50 digits per
       class) and clamp negatives to zero
    3. keep ``n_features`` pixels: border pixels of the grid are excluded,
       then pixels are taken round-robin over classes in order of each
       class's set-aside average (class 0's best, class 1's best, ...,
       class 0's second best, ...), skipping duplicates, until exactly
       ``n_features`` are chosen.  Equal averages rank by pixel index.
    4. vectorize and scale each sample (``by_sum``: features sum to 6;
       ``by_percentile``: 90th-percentile feature equals 0.5)

Omniglot characters (binary 105x105) are smeared with a Gaussian, reduced to
a 20x20 grid and sent through steps 2-4 with 200 features.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .sde import make_rng

FORMAT_VERSION = 1
SUM_TARGET = 6.0
PERCENTILE = 90
PERCENTILE_TARGET = 0.5

_IDX_DTYPES = {
    0x08: np.dtype("u1"),
    0x09: np.dtype("i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049


class IdxFormatError(ValueError):
    pass


@dataclass
class RawImageSet:
    images: np.ndarray  # (n, H, W)
    labels: np.ndarray  # (n,)
    source: str = "mnist"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )


@dataclass
class FeatureDataset:
    features: np.ndarray  # (n, n_features), non-negative
    labels: np.ndarray
    sample_ids: np.ndarray  # indices into the raw set
    pixel_mask: np.ndarray  # retained pixel indices into the flattened grid
    grid_shape: tuple
    scaling_mode: str
    manifest: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1


# -- IDX -------------------------------------------------------------------

def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Parse an IDX file (optionally gzipped) into an array."""
    with _open(path) as fh:
        data = fh.read()
    if len(data) < 4:
        raise IdxFormatError(f"{path}: file too short for an IDX header")
    zero, code, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0 or code not in _IDX_DTYPES or ndim == 0:
        raise IdxFormatError(f"{path}: bad magic number {data[:4].hex()}")
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxFormatError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    dtype = _IDX_DTYPES[code]
    expected = int(np.prod(dims)) * dtype.itemsize
    payload = data[header:]
    if len(payload) != expected:
        raise IdxFormatError(
            f"{path}: payload has {len(payload)} bytes, header promises {expected}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def idx_magic(path) -> int:
    with _open(path) as fh:
        return struct.unpack(">I", fh.read(4))[0]


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    codes = {v.str.lstrip("<>|="): k for k, v in _IDX_DTYPES.items()}
    code = {np.dtype("u1"): 0x08, np.dtype("i1"): 0x09}.get(array.dtype)
    if code is None:
        be = array.dtype.newbyteorder(">")
        code = codes.get(be.str.lstrip("<>|="))
        if code is None:
            raise ValueError(f"dtype {array.dtype} has no IDX code")
        array = array.astype(be)
    blob = struct.pack(">HBB", 0, code, array.ndim)
    blob += struct.pack(f">{array.ndim}I", *array.shape) + array.tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".gz":
        # mtime=0 keeps the archive byte-stable across runs
        with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
            fh.write(blob)
    else:
        path.write_bytes(blob)


def load_mnist(images_path, labels_path) -> RawImageSet:
    if idx_magic(images_path) != IMAGES_MAGIC:
        raise IdxFormatError(f"{images_path}: not an IDX image file")
    if idx_magic(labels_path) != LABELS_MAGIC:
        raise IdxFormatError(f"{labels_path}: not an IDX label file")
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if len(images) != len(labels):
        raise IdxFormatError(f"{len(images)} images but {len(labels)} labels")
    return RawImageSet(images, labels.astype(int), "mnist")


def find_mnist(data_dir) -> RawImageSet:
    """Load the training split from ``data_dir`` (plain or gzipped files)."""
    data_dir = Path(data_dir)
    for suffix in ("", ".gz"):
        img = data_dir / f"train-images-idx3-ubyte{suffix}"
        lab = data_dir / f"train-labels-idx1-ubyte{suffix}"
        if img.exists() and lab.exists():
            return load_mnist(img, lab)
    raise FileNotFoundError(f"no MNIST IDX files under {data_dir}")


# -- image -> grid ---------------------------------------------------------

def crop_downsample(image: np.ndarray) -> np.ndarray:
    """28x28 -> 12x12: drop a 2-pixel border, then average 2x2 blocks.

    Accepts a stack ``(..., 28, 28)``.
    """
    image = np.asarray(image, dtype=float)
    if image.shape[-2:] != (28, 28):
        raise ValueError(f"expected 28x28 images, got {image.shape[-2:]}")
    core = image[..., 2:26, 2:26]
    return core.reshape(core.shape[:-2] + (12, 2, 12, 2)).mean(axis=(-3, -1))


def smear_omniglot(image: np.ndarray, sigma: float = 2.0, strict: bool = True) -> np.ndarray:
    """Blur a binary character with a normalized Gaussian truncated at 3 sigma."""
    image = np.asarray(image)
    if strict and not np.isin(image, (0, 1)).all():
        raise ValueError("omniglot images must be binary (0/1)")
    return ndimage.gaussian_filter(image.astype(float), sigma, mode="constant", cval=0.0,
                                   truncate=3.0)


def omniglot_to_grid(image: np.ndarray) -> np.ndarray:
    """105x105 smeared character -> 20x20 by a centred 100x100 crop and 5x5 averaging."""
    image = np.asarray(image, dtype=float)
    if image.shape[-2:] != (105, 105):
        raise ValueError(f"expected 105x105 images, got {image.shape[-2:]}")
    core = image[..., 2:102, 2:102]
    return core.reshape(core.shape[:-2] + (20, 5, 20, 5)).mean(axis=(-3, -1))


def load_omniglot(root, max_characters: int | None = None) -> RawImageSet:
    """Read ``root/<alphabet>/<character>/*.png``; one class per character.

    Ink (dark) pixels become 1.
    """
    from PIL import Image

    root = Path(root)
    char_dirs = sorted(p for p in root.glob("*/*") if p.is_dir())[:max_characters]
    images, labels = [], []
    for label, d in enumerate(char_dirs):
        for png in sorted(d.glob("*.png")):
            arr = np.asarray(Image.open(png).convert("L"))
            images.append((arr < 128).astype(np.uint8))
            labels.append(label)
    if not images:
        raise FileNotFoundError(f"no omniglot characters under {root}")
    return RawImageSet(np.stack(images), np.array(labels), "omniglot")


def to_grid(raw: RawImageSet) -> np.ndarray:
    if raw.source == "mnist":
        return crop_downsample(raw.images)
    if raw.source == "omniglot":
        return omniglot_to_grid(np.stack([smear_omniglot(im) for im in raw.images]))
    raise ValueError(f"unknown source {raw.source!r}")


# -- features --------------------------------------------------------------

def interior_pixels(grid_shape) -> np.ndarray:
    h, w = grid_shape
    idx = np.arange(h * w).reshape(h, w)
    return idx[1:-1, 1:-1].ravel()


def select_pixels(class_means: np.ndarray, grid_shape, n_features: int) -> np.ndarray:
    """Round-robin union of per-class top pixels; returns sorted flat indices."""
    candidates = interior_pixels(grid_shape)
    if n_features > candidates.size:
        raise ValueError(
            f"n_features={n_features} exceeds the {candidates.size} non-border pixels"
        )
    flat = class_means.reshape(len(class_means), -1)[:, candidates]
    # lexsort: last key is primary -> descending activity, then pixel index
    rankings = [candidates[np.lexsort((candidates, -row))] for row in flat]
    chosen: list[int] = []
    seen = set()
    for rank in range(candidates.size):
        for ranking in rankings:
            px = int(ranking[rank])
            if px not in seen:
                seen.add(px)
                chosen.append(px)
                if len(chosen) == n_features:
                    return np.array(sorted(chosen))
    raise AssertionError("unreachable: candidates exhausted")


def scale_features(x: np.ndarray, mode: str) -> np.ndarray:
    """Per-sample scaling.  All-zero rows stay zero."""
    x = np.asarray(x, dtype=float)
    if mode == "by_sum":
        ref = x.sum(axis=1) / SUM_TARGET
    elif mode == "by_percentile":
        ref = np.percentile(x, PERCENTILE, axis=1) / PERCENTILE_TARGET
    else:
        raise ValueError(f"unknown scaling mode {mode!r}")
    # rows whose reference statistic is zero are left unscaled
    ref = np.where(ref > 0, ref, 1.0)
    return x / ref[:, None]


def build_feature_dataset(raw: RawImageSet, n_features: int = 85, scaling_mode: str = "by_sum",
                          seed: int = 0, set_aside_per_class: int = 50) -> FeatureDataset:
    grids = to_grid(raw)
    grid_shape = grids.shape[1:]
    labels = np.asarray(raw.labels, dtype=int)
    classes = np.unique(labels)
    rng = make_rng(seed)

    set_aside = []
    for c in classes:
        members = np.flatnonzero(labels == c)
        if members.size <= set_aside_per_class:
            raise ValueError(f"class {c} has only {members.size} samples")
        set_aside.append(np.sort(rng.choice(members, set_aside_per_class, replace=False)))
    set_aside = np.concatenate(set_aside)

    mean_image = grids[set_aside].mean(axis=0)
    centred = np.maximum(grids - mean_image, 0.0)
    class_means = np.stack([centred[set_aside[labels[set_aside] == c]].mean(axis=0)
                            for c in classes])
    mask = select_pixels(class_means, grid_shape, n_features)

    keep = np.setdiff1d(np.arange(len(labels)), set_aside)
    vectors = centred.reshape(len(labels), -1)[keep][:, mask]
    features = scale_features(vectors, scaling_mode)
    manifest = {
        "format_version": FORMAT_VERSION,
        "source": raw.source,
        "seed": int(seed),
        "n_features": int(n_features),
        "scaling_mode": scaling_mode,
        "grid_shape": list(grid_shape),
        "set_aside_per_class": int(set_aside_per_class),
        "set_aside_ids": set_aside.tolist(),
        "pixel_mask": mask.tolist(),
        "n_raw_samples": int(len(labels)),
    }
    return FeatureDataset(features, labels[keep], keep, mask, tuple(grid_shape), scaling_mode,
                          manifest)


def feature_checksum(dataset: FeatureDataset) -> str:
    """SHA-256 of the feature matrix rounded to 12 significant digits."""
    h = hashlib.sha256()
    h.update(np.asarray(dataset.labels, dtype="<i8").tobytes())
    h.update(np.asarray(dataset.pixel_mask, dtype="<i8").tobytes())
    for row in dataset.features:
        h.update(",".join(f"{v:.12g}" for v in row).encode())
    return h.hexdigest()


# Features file: '#'-prefixed header lines carrying the manifest as JSON,
# then a CSV header ``sample_id,label,f0,...`` and one sample per row with
# floats written by ``repr`` (round-trip exact).

def save_features(dataset: FeatureDataset, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = dict(dataset.manifest, checksum=feature_checksum(dataset))
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# mothnet-features {FORMAT_VERSION}\n")
        fh.write("# manifest " + json.dumps(manifest, sort_keys=True) + "\n")
        cols = ["sample_id", "label"] + [f"f{i}" for i in range(dataset.n_features)]
        fh.write(",".join(cols) + "\n")
        for sid, lab, row in zip(dataset.sample_ids, dataset.labels, dataset.features):
            fh.write(f"{int(sid)},{int(lab)}," + ",".join(repr(float(v)) for v in row) + "\n")
    path.with_suffix(".manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_features(path) -> FeatureDataset:
    path = Path(path)
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# mothnet-features"):
            raise ValueError(f"{path}: not a mothnet features file")
        version = int(first.split()[-1])
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported features version {version}")
        manifest = json.loads(fh.readline()[len("# manifest "):])
        fh.readline()
        table = np.loadtxt(fh, delimiter=",", ndmin=2)
    return FeatureDataset(
        table[:, 2:], table[:, 1].astype(int), table[:, 0].astype(int),
        np.array(manifest["pixel_mask"]), tuple(manifest["grid_shape"]),
        manifest["scaling_mode"], manifest,
    )


# -- experiment pools --------------------------------------------------------

class Pool(NamedTuple):
    features: np.ndarray
    labels: np.ndarray
    ids: np.ndarray


class Pools(NamedTuple):
    baseline: Pool
    training: Pool
    validation: Pool


def draw_experiment_pools(dataset: FeatureDataset, n_train_per_class: int,
                          n_baseline: int = 15, n_validation: int = 15, seed=0) -> Pools:
    """Disjoint baseline / training / validation pools.

    Per class, a seeded permutation supplies baseline, then validation, then
    training samples, so pools for different training sizes share their
    baseline and validation sets.  Baseline and validation are ordered by
    class; the training pool is shuffled.
    """
    rng = make_rng(seed)
    need = n_baseline + n_validation + n_train_per_class
    parts = {"baseline": [], "validation": [], "training": []}
    for c in range(dataset.n_classes):
        members = np.flatnonzero(dataset.labels == c)
        if members.size < need:
            raise ValueError(f"class {c}: need {need} samples, have {members.size}")
        perm = rng.permutation(members)
        parts["baseline"].append(perm[:n_baseline])
        parts["validation"].append(perm[n_baseline:n_baseline + n_validation])
        parts["training"].append(perm[n_baseline + n_validation:need])
    train = np.concatenate(parts["training"]).astype(int)
    train = train[rng.permutation(train.size)]

    def pool(rows):
        rows = np.asarray(rows, dtype=int)
        return Pool(dataset.features[rows], dataset.labels[rows], dataset.sample_ids[rows])

    return Pools(pool(np.concatenate(parts["baseline"])), pool(train),
                 pool(np.concatenate(parts["validation"])))
