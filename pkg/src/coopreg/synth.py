"""Box-bump shape families with analytic landmarks, and pair datasets.

Both families live on a 64x64 grid in pixel-center coordinates. A shape is
soft-rasterized: each pixel holds the fraction of a 4x4 grid of sub-samples
that falls inside it.

* linear: rectangle rows [24, 44), cols [8, 56) with a radius-5 semicircular
  bump on the top edge centered at column ``16 + 32 t``.
* rotating: disk of radius 16 centered at (36, 32) with a radius-5
  protrusion on its rim at angle ``theta`` (0 = straight up, positive
  clockwise, degrees in [-50, 50]).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from coopreg.rawio import read_raw, write_raw

SIZE = 64
SUPERSAMPLE = 4
BUMP_RADIUS = 5.0

RECT_TOP, RECT_BOTTOM = 24.0, 44.0
RECT_LEFT, RECT_RIGHT = 8.0, 56.0

DISK_CENTER = (36.0, 32.0)
DISK_RADIUS = 16.0
THETA_RANGE = (-50.0, 50.0)

FAMILIES = ("linear", "rotating")
TEST_FRACTION = 0.25


@dataclass(frozen=True)
class ShapeSample:
    image: np.ndarray
    landmarks: np.ndarray  # (K, 2) rows of (row, col)
    param: float
    family: str


@dataclass(frozen=True)
class RegistrationPair:
    source: ShapeSample
    target: ShapeSample


@dataclass
class PairDataset:
    family: str
    samples: list
    train_index: np.ndarray  # (N, 2) rows of (source, target) sample indices
    test_index: np.ndarray
    seed: int
    bump_width: float = 2 * BUMP_RADIUS

    @property
    def train(self) -> list:
        return [self.pair(i, j) for i, j in self.train_index]

    @property
    def test(self) -> list:
        return [self.pair(i, j) for i, j in self.test_index]

    def pair(self, i, j) -> RegistrationPair:
        return RegistrationPair(self.samples[int(i)], self.samples[int(j)])

    def images(self) -> np.ndarray:
        return np.stack([s.image for s in self.samples])

    @property
    def n_shapes(self) -> int:
        return len(self.samples)


def _subsample_grid():
    offsets = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE - 0.5
    base = np.arange(SIZE, dtype=np.float64)
    fine = (base[:, None] + offsets[None, :]).reshape(-1)
    return np.meshgrid(fine, fine, indexing="ij")


def _rasterize(inside) -> np.ndarray:
    rows, cols = _subsample_grid()
    mask = inside(rows, cols).astype(np.float64)
    return mask.reshape(SIZE, SUPERSAMPLE, SIZE, SUPERSAMPLE).mean(axis=(1, 3))


def bump_center_col(t: float) -> float:
    return 16.0 + 32.0 * t


def make_linear_boxbump(t: float) -> ShapeSample:
    if not 0.0 <= t <= 1.0 or not math.isfinite(t):
        raise ValueError(f"t must lie in [0, 1], got {t}")
    c = bump_center_col(t)
    r = BUMP_RADIUS

    def inside(rows, cols):
        rect = (rows >= RECT_TOP) & (rows < RECT_BOTTOM) & (cols >= RECT_LEFT) & (cols < RECT_RIGHT)
        bump = ((rows - RECT_TOP) ** 2 + (cols - c) ** 2 <= r * r) & (rows <= RECT_TOP)
        return rect | bump

    landmarks = np.array([
        (RECT_TOP - r, c),
        (RECT_TOP, c - r),
        (RECT_TOP, c + r),
        (RECT_TOP, RECT_LEFT),
        (RECT_TOP, RECT_RIGHT),
        (RECT_BOTTOM, RECT_LEFT),
        (RECT_BOTTOM, RECT_RIGHT),
    ])
    return ShapeSample(_rasterize(inside), landmarks, float(t), "linear")


def _rim_point(angle_rad: float, radius: float):
    r0, c0 = DISK_CENTER
    return r0 - radius * math.cos(angle_rad), c0 + radius * math.sin(angle_rad)


def make_rotating_boxbump(theta_deg: float) -> ShapeSample:
    lo, hi = THETA_RANGE
    if not lo <= theta_deg <= hi or not math.isfinite(theta_deg):
        raise ValueError(f"theta must lie in [{lo}, {hi}] degrees, got {theta_deg}")
    theta = math.radians(theta_deg)
    R, r = DISK_RADIUS, BUMP_RADIUS
    r0, c0 = DISK_CENTER
    pr, pc = _rim_point(theta, R)

    def inside(rows, cols):
        disk = (rows - r0) ** 2 + (cols - c0) ** 2 <= R * R
        bump = (rows - pr) ** 2 + (cols - pc) ** 2 <= r * r
        return disk | bump

    half = math.asin(r / R)
    landmarks = np.array([
        _rim_point(theta, R + r),
        _rim_point(theta - half, R),
        _rim_point(theta + half, R),
    ])
    return ShapeSample(_rasterize(inside), landmarks, float(theta_deg), "rotating")


def family_params(family: str, n: int) -> np.ndarray:
    if family == "linear":
        return np.linspace(0.0, 1.0, n)
    if family == "rotating":
        return np.linspace(*THETA_RANGE, n)
    raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")


def make_sample(family: str, param: float) -> ShapeSample:
    if family == "linear":
        return make_linear_boxbump(param)
    if family == "rotating":
        return make_rotating_boxbump(param)
    raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")


def centered_param(family: str) -> float:
    return 0.5 if family == "linear" else 0.0


def split_pairs(n_shapes: int, seed: int, max_train_pairs: int | None = None):
    """Shuffle all ordered pairs and hold out 25% for testing."""
    if n_shapes < 2:
        raise ValueError(f"need at least 2 shapes, got {n_shapes}")
    i, j = np.meshgrid(np.arange(n_shapes), np.arange(n_shapes), indexing="ij")
    keep = i != j
    pairs = np.stack([i[keep], j[keep]], axis=1)
    order = np.random.default_rng(seed).permutation(len(pairs))
    pairs = pairs[order]
    n_test = math.floor(TEST_FRACTION * len(pairs) + 0.5)
    test, train = pairs[:n_test], pairs[n_test:]
    if max_train_pairs is not None:
        train = train[:max_train_pairs]
    return train, test


def build_pair_dataset(family: str, n_shapes: int = 100, seed: int = 0,
                       max_train_pairs: int | None = None) -> PairDataset:
    samples = [make_sample(family, p) for p in family_params(family, n_shapes)]
    train, test = split_pairs(n_shapes, seed, max_train_pairs)
    return PairDataset(family, samples, train, test, seed)


# -- on-disk cache -----------------------------------------------------------

def cache_key(family: str, n_shapes: int, seed: int) -> str:
    blob = json.dumps({"family": family, "n_shapes": n_shapes, "seed": seed}, sort_keys=True)
    return f"{family}-{n_shapes}-{seed}-{hashlib.sha256(blob.encode()).hexdigest()[:12]}"


def save_dataset(dataset: PairDataset, root) -> Path:
    """Write samples (raw images + CSV manifest) and the split under ``root``."""
    path = Path(root) / cache_key(dataset.family, dataset.n_shapes, dataset.seed)
    path.mkdir(parents=True, exist_ok=True)
    n_lm = len(dataset.samples[0].landmarks)
    with open(path / "manifest.csv", "w", newline="") as f:
        writer = csv.writer(f)
        header = ["index", "param"]
        for k in range(n_lm):
            header += [f"lm{k}_row", f"lm{k}_col"]
        writer.writerow(header)
        for idx, s in enumerate(dataset.samples):
            write_raw(path / f"sample_{idx:04d}.raw", s.image)
            writer.writerow([idx, repr(s.param)] + [repr(float(v)) for v in s.landmarks.ravel()])
    np.savetxt(path / "train_pairs.csv", dataset.train_index, fmt="%d", delimiter=",")
    np.savetxt(path / "test_pairs.csv", dataset.test_index, fmt="%d", delimiter=",")
    (path / "dataset.json").write_text(json.dumps(
        {"family": dataset.family, "n_shapes": dataset.n_shapes, "seed": dataset.seed,
         "bump_width": dataset.bump_width}, indent=2))
    return path


def load_dataset(path) -> PairDataset:
    path = Path(path)
    meta = json.loads((path / "dataset.json").read_text())
    samples = []
    with open(path / "manifest.csv", newline="") as f:
        reader = csv.reader(f)
        next(reader)
        for row in reader:
            idx, param = int(row[0]), float(row[1])
            landmarks = np.array([float(v) for v in row[2:]]).reshape(-1, 2)
            image = read_raw(path / f"sample_{idx:04d}.raw").astype(np.float64)
            samples.append(ShapeSample(image, landmarks, param, meta["family"]))

    def pairs(name):
        arr = np.loadtxt(path / name, dtype=np.int64, delimiter=",", ndmin=2)
        return arr.reshape(-1, 2)

    return PairDataset(meta["family"], samples, pairs("train_pairs.csv"), pairs("test_pairs.csv"),
                       meta["seed"], meta["bump_width"])


def cached_pair_dataset(family: str, n_shapes: int, seed: int, root,
                        max_train_pairs: int | None = None) -> PairDataset:
    path = Path(root) / cache_key(family, n_shapes, seed)
    if (path / "dataset.json").exists():
        ds = load_dataset(path)
    else:
        ds = build_pair_dataset(family, n_shapes, seed)
        save_dataset(ds, root)
    if max_train_pairs is not None:
        ds.train_index = ds.train_index[:max_train_pairs]
    return ds
