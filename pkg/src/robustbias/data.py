"""Seeded synthetic distributions, teacher labelling, MNIST IDX ingestion, CSV i/o.

Every random draw flows through a PCG64 bit generator keyed by a tuple of
integers (seed, purpose tag, distribution parameters), with Gaussians produced
by the Box-Muller transform on top of raw uniform draws.  Pinning both the
generator family and the Gaussian algorithm makes datasets bit-identical
across runs and platforms, which library-default normal samplers do not
guarantee.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "SparsitySpec",
    "DENSE",
    "DistributionSpec",
    "Dataset",
    "stream",
    "gaussians",
    "gen_teacher",
    "gen_dataset",
    "gen_test_set",
    "load_mnist_idx",
    "save_dataset_csv",
    "load_dataset_csv",
    "IdxFormatError",
    "MNIST_IMAGE_MAGIC",
    "MNIST_LABEL_MAGIC",
]

MNIST_IMAGE_MAGIC = 2051
MNIST_LABEL_MAGIC = 2049

# Stream purpose tags; distinct tags keep teacher/train/test/subset draws on
# independent streams for the same user-facing seed.
_TEACHER, _TRAIN, _TEST, _SUBSET, _INIT = 1, 2, 3, 4, 5


class IdxFormatError(ValueError):
    """Raised when an IDX file does not match the big-endian MNIST layout."""


@dataclass(frozen=True)
class SparsitySpec:
    """Density of a random vector: dense, or k-sparse with expected k nonzeros."""

    k: int | None = None

    @property
    def dense(self) -> bool:
        return self.k is None

    def validate(self, d: int) -> None:
        if self.k is not None and not 1 <= self.k <= d:
            raise ValueError(f"sparsity k={self.k} out of range for dimension {d}")

    def nonzeros(self, d: int) -> int:
        """Expected nonzero count when instantiated in dimension d."""
        return d if self.k is None else self.k


DENSE = SparsitySpec()


@dataclass(frozen=True)
class DistributionSpec:
    """A teacher-labelled product distribution over R^d x {-1, +1}.

    Dense vectors are i.i.d. standard Gaussian; k-sparse vectors draw entries
    from {-1, 0, +1} with probabilities {k/2d, 1 - k/d, k/2d}.  Teacher and
    sample sparsity are specified independently, so every (sparse, dense)
    pairing is expressible.
    """

    d: int
    teacher_sparsity: SparsitySpec = DENSE
    data_sparsity: SparsitySpec = DENSE

    def __post_init__(self) -> None:
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        self.teacher_sparsity.validate(self.d)
        self.data_sparsity.validate(self.d)

    def label(self) -> str:
        kw = self.teacher_sparsity.nonzeros(self.d)
        kx = self.data_sparsity.nonzeros(self.d)
        return f"d{self.d}_kW{kw}_kX{kx}"

    def _key(self) -> tuple[int, int, int]:
        return (self.d, self.teacher_sparsity.k or 0, self.data_sparsity.k or 0)


@dataclass
class Dataset:
    """m labelled samples in R^d, with provenance metadata.

    When a teacher is present, every label equals sign(<teacher, x>) with a
    strictly nonzero inner product (zero-margin draws are resampled at
    generation time).
    """

    samples: np.ndarray
    labels: np.ndarray
    teacher: np.ndarray | None
    spec: DistributionSpec | None
    seed: int
    source: str = "synthetic"

    @property
    def m(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]


def stream(*key: int) -> np.random.Generator:
    """A PCG64 generator keyed by a tuple of integers (order-sensitive)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in key])))


def gaussians(gen: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Standard normals via Box-Muller over the generator's uniform stream."""
    n = int(np.prod(shape))
    if n == 0:
        return np.zeros(shape)
    half = (n + 1) // 2
    u1 = 1.0 - gen.random(half)  # in (0, 1]: log never sees 0
    u2 = gen.random(half)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:n]
    return z.reshape(shape)


def _trinary(gen: np.random.Generator, shape: tuple[int, ...], k: int, d: int) -> np.ndarray:
    """Entries from {-1, 0, +1} with probabilities {k/2d, 1 - k/d, k/2d}."""
    u = gen.random(shape)
    half = k / (2.0 * d)
    return np.where(u < half, -1.0, np.where(u < 2.0 * half, 1.0, 0.0))


def _draw_matrix(gen: np.random.Generator, rows: int, spec: DistributionSpec, sparsity: SparsitySpec) -> np.ndarray:
    if sparsity.dense:
        return gaussians(gen, (rows, spec.d))
    return _trinary(gen, (rows, spec.d), sparsity.k, spec.d)


def gen_teacher(spec: DistributionSpec, seed: int) -> np.ndarray:
    """Draw the ground-truth labelling vector; an all-zero draw is resampled."""
    gen = stream(seed, _TEACHER, *spec._key())
    while True:
        if spec.teacher_sparsity.dense:
            w = gaussians(gen, (spec.d,))
        else:
            w = _trinary(gen, (spec.d,), spec.teacher_sparsity.k, spec.d)
        if np.any(w):
            return w


def _labelled_samples(
    gen: np.random.Generator, spec: DistributionSpec, m: int, teacher: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    x = _draw_matrix(gen, m, spec, spec.data_sparsity)
    margins = x @ teacher
    # sign(0) is undefined as a label: resample rows sitting exactly on the
    # teacher hyperplane (possible for trinary samples)
    while True:
        bad = np.flatnonzero(margins == 0.0)
        if bad.size == 0:
            break
        x[bad] = _draw_matrix(gen, bad.size, spec, spec.data_sparsity)
        margins[bad] = x[bad] @ teacher
    return x, np.sign(margins)


def gen_dataset(spec: DistributionSpec, m: int, seed: int) -> Dataset:
    """m teacher-labelled samples; the teacher is shared across all m for a seed."""
    if m < 1:
        raise ValueError(f"dataset size must be >= 1, got {m}")
    teacher = gen_teacher(spec, seed)
    gen = stream(seed, _TRAIN, *spec._key(), m)
    x, y = _labelled_samples(gen, spec, m, teacher)
    return Dataset(x, y, teacher, spec, seed)


def gen_test_set(spec: DistributionSpec, seed: int) -> Dataset:
    """d^2 held-out points from the same distribution and teacher.

    Keyed by (spec, seed) only, so every training size and perturbation level
    is evaluated against one shared test set.
    """
    teacher = gen_teacher(spec, seed)
    gen = stream(seed, _TEST, *spec._key())
    x, y = _labelled_samples(gen, spec, spec.d * spec.d, teacher)
    return Dataset(x, y, teacher, spec, seed, source="synthetic-test")


def init_stream(seed: int, *key: int) -> np.random.Generator:
    """Generator for parameter initialization draws, on its own purpose tag."""
    return stream(seed, _INIT, *key)


# ---------------------------------------------------------------------------
# MNIST IDX ingestion


def _read_be32(f) -> int:
    raw = f.read(4)
    if len(raw) != 4:
        raise IdxFormatError("truncated IDX header")
    return struct.unpack(">i", raw)[0]


def _read_idx_images(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = _read_be32(f)
        if magic != MNIST_IMAGE_MAGIC:
            raise IdxFormatError(f"bad image magic {magic}, expected {MNIST_IMAGE_MAGIC}")
        count, rows, cols = _read_be32(f), _read_be32(f), _read_be32(f)
        buf = f.read(count * rows * cols)
        if len(buf) != count * rows * cols:
            raise IdxFormatError("image payload shorter than header promises")
        return np.frombuffer(buf, dtype=np.uint8).reshape(count, rows * cols)


def _read_idx_labels(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = _read_be32(f)
        if magic != MNIST_LABEL_MAGIC:
            raise IdxFormatError(f"bad label magic {magic}, expected {MNIST_LABEL_MAGIC}")
        count = _read_be32(f)
        buf = f.read(count)
        if len(buf) != count:
            raise IdxFormatError("label payload shorter than header promises")
        return np.frombuffer(buf, dtype=np.uint8)


def load_mnist_idx(
    images_path: str | Path,
    labels_path: str | Path,
    classes: set[int],
    m: int,
    seed: int,
) -> Dataset:
    """A seeded binary subset of an MNIST IDX image/label pair.

    Pixels are scaled to [0, 1] by /255 and images flattened; rows are
    filtered to the two requested classes and mapped to +-1 in ascending class
    order (smaller digit -> -1).  A uniform subset of size m is drawn without
    replacement.  No teacher is attached.
    """
    classes = sorted(set(int(c) for c in classes))
    if len(classes) != 2:
        raise ValueError(f"binary ingestion needs exactly two classes, got {classes}")
    images = _read_idx_images(images_path)
    labels = _read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"image/label counts disagree: {images.shape[0]} vs {labels.shape[0]}"
        )
    for c in classes:
        if not np.any(labels == c):
            raise ValueError(f"class {c} has no rows in the label file")
    mask = np.isin(labels, classes)
    x = images[mask].astype(float) / 255.0
    raw = labels[mask]
    if m > x.shape[0]:
        raise ValueError(f"requested subset m={m} exceeds {x.shape[0]} available rows")
    order = stream(seed, _SUBSET, *classes).permutation(x.shape[0])[:m]
    y = np.where(raw[order] == classes[0], -1.0, 1.0)
    return Dataset(x[order], y, None, None, seed, source=f"mnist-idx:{classes[0]}v{classes[1]}")


# ---------------------------------------------------------------------------
# CSV export/import (one-line JSON metadata header, then label + features)


def save_dataset_csv(data: Dataset, path: str | Path) -> None:
    meta = {
        "m": data.m,
        "d": data.d,
        "seed": data.seed,
        "source": data.source,
        "spec": None
        if data.spec is None
        else {
            "d": data.spec.d,
            "teacher_k": data.spec.teacher_sparsity.k,
            "data_k": data.spec.data_sparsity.k,
        },
        "teacher": None if data.teacher is None else [float(v) for v in data.teacher],
    }
    with open(path, "w") as f:
        f.write("#" + json.dumps(meta, sort_keys=True) + "\n")
        for i in range(data.m):
            row = [repr(float(data.labels[i]))] + [repr(float(v)) for v in data.samples[i]]
            f.write(",".join(row) + "\n")


def load_dataset_csv(path: str | Path) -> Dataset:
    with open(path) as f:
        header = f.readline()
        if not header.startswith("#"):
            raise ValueError("missing JSON metadata header line")
        meta = json.loads(header[1:])
        rows = [line.split(",") for line in f.read().splitlines() if line]
    table = np.array([[float(v) for v in row] for row in rows])
    spec = None
    if meta["spec"] is not None:
        s = meta["spec"]
        spec = DistributionSpec(
            s["d"], SparsitySpec(s["teacher_k"]), SparsitySpec(s["data_k"])
        )
    teacher = None if meta["teacher"] is None else np.array(meta["teacher"])
    return Dataset(table[:, 1:], table[:, 0], teacher, spec, meta["seed"], meta["source"])
