"""Datasets, labeled/unlabeled splits, label corruption, augmentation and batching."""
from __future__ import annotations

import csv
import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .seeding import derive_seed

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataError(ValueError):
    pass


class IdxFormatError(DataError):
    pass


class IdxTruncatedError(DataError):
    pass


class IdxCountMismatchError(DataError):
    pass


class SplitError(DataError):
    pass


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    K: int
    name: str = ""

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise DataError(f"X {X.shape} and y {y.shape} do not line up")
        if y.size and (y.min() < 0 or y.max() >= self.K):
            raise DataError(f"labels must lie in [0, {self.K})")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain non-finite values")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx, name: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.K, self.name if name is None else name)


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint labeled / unlabeled / validation / test partitions.

    ``unlabeled_true_y`` is kept for evaluation only; the algorithm never
    reads it.
    """
    labeled: Dataset
    unlabeled_X: np.ndarray
    unlabeled_true_y: np.ndarray
    validation: Dataset
    test: Dataset
    indices: dict = field(default_factory=dict, compare=False)

    @property
    def K(self) -> int:
        return self.labeled.K

    @property
    def n_unlabeled(self) -> int:
        return self.unlabeled_X.shape[0]

    def with_unlabeled_subset(self, count: int) -> "DatasetSplit":
        """Keep the first ``count`` unlabeled samples (their order is already random)."""
        if count > self.n_unlabeled:
            raise SplitError(f"only {self.n_unlabeled} unlabeled samples, asked for {count}")
        idx = dict(self.indices)
        if "unlabeled" in idx:
            idx["unlabeled"] = idx["unlabeled"][:count]
        return DatasetSplit(self.labeled, self.unlabeled_X[:count], self.unlabeled_true_y[:count],
                            self.validation, self.test, idx)


# ---------------------------------------------------------------------------
# synthetic data

def make_two_moons(n: int, noise_sigma: float = 0.1, seed: int = 0) -> Dataset:
    """Two interleaved unit half-circles; class 0 on top, class 1 shifted below."""
    if n < 2:
        raise DataError("two moons needs n >= 2")
    rng = np.random.default_rng(seed)
    n0 = (n + 1) // 2
    t = rng.uniform(0.0, np.pi, size=n)
    X = np.empty((n, 2))
    X[:n0, 0], X[:n0, 1] = np.cos(t[:n0]), np.sin(t[:n0])
    X[n0:, 0], X[n0:, 1] = 1.0 - np.cos(t[n0:]), 0.5 - np.sin(t[n0:])
    y = np.r_[np.zeros(n0, dtype=np.int64), np.ones(n - n0, dtype=np.int64)]
    if noise_sigma > 0:
        X = X + rng.normal(scale=noise_sigma, size=X.shape)
    order = rng.permutation(n)
    return Dataset(X[order], y[order], 2, "two_moons")


def make_blobs(n: int, centers, sigma: float = 1.0, seed: int = 0) -> Dataset:
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    K = centers.shape[0]
    if K < 2:
        raise DataError("blobs need at least two centers")
    if n < K:
        raise DataError(f"n={n} is smaller than the number of classes {K}")
    rng = np.random.default_rng(seed)
    y = np.arange(n, dtype=np.int64) % K
    X = centers[y] + rng.normal(scale=sigma, size=(n, centers.shape[1]))
    order = rng.permutation(n)
    return Dataset(X[order], y[order], K, "blobs")


# ---------------------------------------------------------------------------
# file formats

def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _idx_header(raw: bytes, path, magic: int, ndims: int) -> tuple[int, ...]:
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: file too short for an IDX header")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise IdxFormatError(f"{path}: bad magic number 0x{got:08x}, expected 0x{magic:08x}")
    need = 4 + 4 * ndims
    if len(raw) < need:
        raise IdxTruncatedError(f"{path}: truncated IDX header")
    return struct.unpack(">" + "I" * ndims, raw[4:need])


def load_idx(images_path, labels_path, name: str = "idx") -> Dataset:
    """Read an IDX image/label pair (optionally gzipped); pixels scaled to [0, 1]."""
    img_raw = _read_bytes(images_path)
    lab_raw = _read_bytes(labels_path)
    n_img, rows, cols = _idx_header(img_raw, images_path, IDX_IMAGES_MAGIC, 3)
    (n_lab,) = _idx_header(lab_raw, labels_path, IDX_LABELS_MAGIC, 1)
    if n_img != n_lab:
        raise IdxCountMismatchError(
            f"{images_path} holds {n_img} images but {labels_path} holds {n_lab} labels")
    if len(img_raw) < 16 + n_img * rows * cols:
        raise IdxTruncatedError(f"{images_path}: pixel data truncated")
    if len(lab_raw) < 8 + n_lab:
        raise IdxTruncatedError(f"{labels_path}: label data truncated")
    pixels = np.frombuffer(img_raw, dtype=np.uint8, count=n_img * rows * cols, offset=16)
    labels = np.frombuffer(lab_raw, dtype=np.uint8, count=n_lab, offset=8).astype(np.int64)
    X = pixels.reshape(n_img, rows * cols).astype(np.float64) / 255.0
    K = int(labels.max()) + 1 if n_lab else 1
    return Dataset(X, labels, K, name)


def write_idx(images: np.ndarray, labels: Sequence[int], images_path, labels_path) -> None:
    """Write uint8 images (n, rows, cols) and labels as an uncompressed IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    labels = np.asarray(labels, dtype=np.uint8)
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, labels.size) + labels.tobytes())


def load_csv(path, name: str | None = None, K: int | None = None) -> Dataset:
    """Columns f0..f{d-1},label with a header row."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "label" or header[:-1] != [f"f{i}" for i in range(len(header) - 1)]:
            raise DataError(f"{path}: header must be f0..f{{d-1}},label")
        rows = [r for r in reader if r]
    X = np.array([[float(v) for v in r[:-1]] for r in rows]).reshape(len(rows), len(header) - 1)
    y = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    if K is None:
        K = int(y.max()) + 1 if y.size else 1
    return Dataset(X, y, K, name or Path(path).stem)


def save_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{i}" for i in range(ds.d)] + ["label"])
        for x, label in zip(ds.X, ds.y):
            w.writerow([format(v, ".17g") for v in x] + [int(label)])


# ---------------------------------------------------------------------------
# splitting and corruption

def split(ds: Dataset, n_labeled: int, n_unlabeled: int, n_validation: int = 0,
          balanced: bool = True, seed: int = 0, union_unlabeled: bool = False,
          n_test: int | None = None) -> DatasetSplit:
    """Random disjoint partition; whatever is left over (or ``n_test`` of it) becomes the test set.

    With ``union_unlabeled`` the labeled samples are also placed in the
    unlabeled pool, which is otherwise disjoint from them.
    """
    N, K = len(ds), ds.K
    if min(n_labeled, n_unlabeled, n_validation) < 0:
        raise SplitError("split sizes must be non-negative")
    if n_labeled + n_unlabeled + n_validation > N:
        raise SplitError(f"asked for {n_labeled}+{n_unlabeled}+{n_validation} samples, dataset has {N}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(N)
    if balanced:
        if n_labeled % K:
            raise SplitError(f"balanced split needs n_labeled divisible by K={K}, got {n_labeled}")
        per_class = n_labeled // K
        chosen = []
        for k in range(K):
            members = perm[ds.y[perm] == k]
            if members.size < per_class:
                raise SplitError(f"class {k} has {members.size} samples, need {per_class}")
            chosen.append(members[:per_class])
        lab = rng.permutation(np.concatenate(chosen)) if chosen else np.array([], dtype=np.int64)
        rest = perm[~np.isin(perm, lab)]
    else:
        lab, rest = perm[:n_labeled], perm[n_labeled:]
    unl = rest[:n_unlabeled]
    val = rest[n_unlabeled:n_unlabeled + n_validation]
    tst = rest[n_unlabeled + n_validation:]
    if n_test is not None:
        if n_test > tst.size:
            raise SplitError(f"only {tst.size} samples left for a test set of {n_test}")
        tst = tst[:n_test]
    if union_unlabeled:
        unl = np.concatenate([unl, lab])
    return DatasetSplit(
        labeled=ds.subset(lab, "labeled"),
        unlabeled_X=ds.X[unl],
        unlabeled_true_y=ds.y[unl],
        validation=ds.subset(val, "validation"),
        test=ds.subset(tst, "test"),
        indices={"labeled": lab, "unlabeled": unl, "validation": val, "test": tst},
    )


def corrupt_labels(y, fraction: float, K: int, seed: int = 0, mode: str = "wrong_class") -> np.ndarray:
    """Relabel exactly round(fraction * N) uniformly chosen entries.

    ``wrong_class`` draws the new label from the K-1 other classes, so the
    wrong-label rate equals ``fraction``.  ``uniform`` draws from all K
    classes (random labels); the expected wrong-label rate is then
    fraction * (K-1)/K.
    """
    y = np.asarray(y, dtype=np.int64)
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    if mode not in ("wrong_class", "uniform"):
        raise ValueError(f"unknown corruption mode {mode!r}")
    m = int(round(fraction * y.size))
    if m and K < 2:
        raise ValueError("cannot corrupt labels with fewer than two classes")
    out = y.copy()
    if m == 0:
        return out
    rng = np.random.default_rng(seed)
    idx = rng.choice(y.size, size=m, replace=False)
    if mode == "wrong_class":
        # shift by 1..K-1 lands uniformly on the other classes
        out[idx] = (y[idx] + rng.integers(1, K, size=m)) % K
    else:
        out[idx] = rng.integers(0, K, size=m)
    return out


# ---------------------------------------------------------------------------
# augmentation

@dataclass(frozen=True)
class AugmentationSpec:
    kind: str = "identity"  # identity | gaussian_jitter | translate_flip
    sigma: float = 0.0
    max_shift: int = 0
    flip: bool = False

    def __post_init__(self):
        if self.kind not in ("identity", "gaussian_jitter", "translate_flip"):
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.max_shift < 0:
            raise ValueError("max_shift must be >= 0")


def _image_side(d: int) -> int:
    side = math.isqrt(d)
    if side * side != d:
        raise DataError(f"translate_flip needs square images, got {d} features")
    return side


def translate_image(img: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Shift a 2-D image right by dx and down by dy columns/rows, zero padded."""
    h, w = img.shape
    out = np.zeros_like(img)
    if abs(dx) >= w or abs(dy) >= h:
        return out
    src_r = slice(max(0, -dy), h - max(0, dy))
    dst_r = slice(max(0, dy), h - max(0, -dy))
    src_c = slice(max(0, -dx), w - max(0, dx))
    dst_c = slice(max(0, dx), w - max(0, -dx))
    out[dst_r, dst_c] = img[src_r, src_c]
    return out


def augment_batch(spec: AugmentationSpec, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Apply an independently sampled group element to every row of X."""
    if spec.kind == "identity":
        return X
    if spec.kind == "gaussian_jitter":
        if spec.sigma == 0:
            return X
        return X + rng.normal(scale=spec.sigma, size=X.shape)
    side = _image_side(X.shape[1])
    n = X.shape[0]
    shifts = rng.integers(-spec.max_shift, spec.max_shift + 1, size=(n, 2))
    flips = rng.random(n) < 0.5 if spec.flip else np.zeros(n, dtype=bool)
    out = np.empty_like(X)
    for i in range(n):
        img = X[i].reshape(side, side)
        if flips[i]:
            img = img[:, ::-1]
        out[i] = translate_image(img, int(shifts[i, 0]), int(shifts[i, 1])).ravel()
    return out


def apply_augmentation(spec: AugmentationSpec, x: np.ndarray, seed: int = 0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return augment_batch(spec, x[None, :], np.random.default_rng(seed))[0]


# ---------------------------------------------------------------------------
# batching

@dataclass(frozen=True)
class BatchSchedule:
    batches: list
    batch_size: int

    def __len__(self):
        return len(self.batches)


def epoch_batches(n: int, batch_size: int, seed: int = 0) -> BatchSchedule:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    perm = np.random.default_rng(seed).permutation(n)
    return BatchSchedule([perm[i:i + batch_size] for i in range(0, n, batch_size)], batch_size)


def cycle_batches(n: int, batch_size: int, seed: int) -> Iterator[np.ndarray]:
    """Endless stream of mini-batches, reshuffled each time the set is exhausted."""
    epoch = 0
    while True:
        yield from epoch_batches(n, batch_size, seed=derive_seed(seed, epoch)).batches
        epoch += 1


# ---------------------------------------------------------------------------
# dataset presets used by the harness

@dataclass
class DataConfig:
    dataset: str = "two_moons"  # two_moons | blobs | idx | csv
    n: int = 2000
    noise: float = 0.1
    centers: list = field(default_factory=lambda: [[-2.0, 0.0], [2.0, 0.0]])
    images_path: str = ""
    labels_path: str = ""
    csv_path: str = ""
    n_labeled: int = 6
    n_unlabeled: int = 400
    n_validation: int = 100
    n_test: int = 0  # 0: everything left over
    balanced: bool = True
    union_unlabeled: bool = False

    def validate(self):
        if self.dataset not in ("two_moons", "blobs", "idx", "csv"):
            raise ValueError(f"dataset: unknown dataset {self.dataset!r}")
        for key in ("n", "n_labeled", "n_unlabeled", "n_validation", "n_test"):
            if getattr(self, key) < 0:
                raise ValueError(f"{key}: must be >= 0")
        if self.noise < 0:
            raise ValueError("noise: must be >= 0")


def build_dataset(cfg: DataConfig, seed: int) -> Dataset:
    if cfg.dataset == "two_moons":
        return make_two_moons(cfg.n, cfg.noise, seed)
    if cfg.dataset == "blobs":
        return make_blobs(cfg.n, cfg.centers, cfg.noise, seed)
    if cfg.dataset == "idx":
        return load_idx(cfg.images_path, cfg.labels_path)
    return load_csv(cfg.csv_path)


def build_split(cfg: DataConfig, seed: int) -> DatasetSplit:
    ds = build_dataset(cfg, derive_seed(seed, "dataset"))
    return split(ds, cfg.n_labeled, cfg.n_unlabeled, cfg.n_validation, cfg.balanced,
                  seed=derive_seed(seed, "split"), union_unlabeled=cfg.union_unlabeled,
                  n_test=cfg.n_test or None)
