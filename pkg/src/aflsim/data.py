"""Datasets: IDX (MNIST) parsing, synthetic blobs, per-vehicle splits, bad nodes."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .env import VehicleState
from .nn import ParamVector

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxError(ValueError):
    """Base class for malformed IDX input."""


class BadMagic(IdxError):
    pass


class TruncatedIdx(IdxError):
    pass


class CountMismatch(IdxError):
    pass


@dataclass(frozen=True, eq=False)
class ClientDataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.features) != len(self.labels):
            raise ValueError(f"{len(self.features)} feature rows vs {len(self.labels)} labels")

    @property
    def size(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "ClientDataset":
        return ClientDataset(self.features[idx], self.labels[idx])


# -- IDX ---------------------------------------------------------------------

def _read_bytes(path) -> bytes:
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    return raw


def parse_idx(raw: bytes, expected_magic: int) -> np.ndarray:
    """Decode an unsigned-byte IDX payload into an array of its declared shape."""
    if len(raw) < 4:
        raise TruncatedIdx("IDX stream shorter than its magic number")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise BadMagic(f"IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedIdx("IDX header is truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    n = int(np.prod(dims))
    if len(raw) < header + n:
        raise TruncatedIdx(f"IDX body holds {len(raw) - header} bytes, header promises {n}")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=header).reshape(dims)


def encode_idx(array: np.ndarray) -> bytes:
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    return struct.pack(f">I{array.ndim}I", magic, *array.shape) + array.tobytes()


def write_idx(array: np.ndarray, path) -> None:
    data = encode_idx(array)
    if Path(path).suffix == ".gz":
        data = gzip.compress(data, mtime=0)
    Path(path).write_bytes(data)


def load_mnist_idx(images_path, labels_path, limit: Optional[int] = None) -> ClientDataset:
    """Read an image/label IDX pair; pixels are scaled to [0, 1] and flattened."""
    images = parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC)
    labels = parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return ClientDataset(features, labels.astype(np.int64))


def bundled_mnist_dir() -> Path:
    """Directory of the 5,000-image MNIST subset shipped with the package."""
    return Path(str(resources.files("aflsim") / "data" / "mnist"))


# -- synthetic blobs -----------------------------------------------------------

@dataclass(frozen=True)
class SyntheticParams:
    classes: int = 10
    dims: int = 20
    per_class: int = 200
    cluster_std: float = 1.0
    scale: float = 3.0


def generate_synthetic(params: SyntheticParams, seed) -> ClientDataset:
    """Gaussian blobs whose class means are scaled simplex vertices ``scale * e_c``."""
    if params.classes < 2 or params.dims < params.classes:
        raise ValueError("synthetic blobs need classes >= 2 and dims >= classes")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(params.classes), params.per_class)
    means = np.zeros((params.classes, params.dims))
    means[np.arange(params.classes), np.arange(params.classes)] = params.scale
    features = means[labels] + params.cluster_std * rng.standard_normal((labels.size, params.dims))
    order = rng.permutation(labels.size)
    return ClientDataset(features[order], labels[order])


# -- partitioning --------------------------------------------------------------

def partition(pool: ClientDataset, sizes: Sequence[int], iid: bool = True, seed=None) -> list[ClientDataset]:
    """Split ``pool`` into disjoint per-vehicle subsets of the requested sizes.

    Non-IID mode lays label-sorted samples out in ``2 * len(sizes)`` shards
    (two per vehicle, placed in random order) so each vehicle sees few labels.
    """
    sizes = [int(s) for s in sizes]
    if any(s < 1 for s in sizes):
        raise ValueError("every partition needs at least one sample")
    total = sum(sizes)
    if total > pool.size:
        raise ValueError(f"pool of {pool.size} samples cannot supply {total}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(pool.size)
    if iid:
        bounds = np.cumsum([0] + sizes)
        return [pool.subset(order[bounds[i]:bounds[i + 1]]) for i in range(len(sizes))]

    order = order[np.argsort(pool.labels[order], kind="stable")]
    pieces = []
    for owner, s in enumerate(sizes):
        pieces.append((owner, s // 2))
        pieces.append((owner, s - s // 2))
    placement = rng.permutation(len(pieces))
    owned: list[list[np.ndarray]] = [[] for _ in sizes]
    offset = 0
    for p in placement:
        owner, count = pieces[p]
        owned[owner].append(order[offset:offset + count])
        offset += count
    return [pool.subset(np.concatenate(parts)) for parts in owned]


# -- bad nodes -----------------------------------------------------------------

@dataclass(frozen=True)
class BadNodeSpec:
    indices: tuple[int, ...] = (4,)
    data_fraction: float = 0.1
    compute_fraction: float = 0.1
    noise_std: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))

    def validate(self, K: int) -> list[str]:
        problems = []
        if any(i < 0 or i >= K for i in self.indices):
            problems.append(f"bad_node.indices must lie in [0, {K})")
        for name in ("data_fraction", "compute_fraction"):
            f = getattr(self, name)
            if not 0 < f <= 1:
                problems.append(f"bad_node.{name} must lie in (0, 1]")
        if self.noise_std < 0:
            problems.append("bad_node.noise_std must be >= 0")
        return problems


@dataclass(frozen=True)
class UploadNoise:
    """Adds N(0, std^2) to every uploaded parameter of the listed vehicles."""

    indices: frozenset = field(default_factory=frozenset)
    noise_std: float = 0.0

    def __call__(self, vehicle: int, params: ParamVector, rng: np.random.Generator) -> ParamVector:
        if vehicle not in self.indices or self.noise_std == 0.0:
            return params
        return params.with_values(params.values + rng.normal(0.0, self.noise_std, size=len(params)))


def apply_bad_node(fleet: Sequence[VehicleState], datasets: Sequence[ClientDataset], spec: BadNodeSpec):
    """Shrink the data and compute of the flagged vehicles and build their upload-noise hook."""
    fleet = list(fleet)
    datasets = list(datasets)
    for i in spec.indices:
        v = fleet[i]
        keep = max(1, int(spec.data_fraction * datasets[i].size))
        datasets[i] = datasets[i].subset(slice(0, keep))
        fleet[i] = replace(v, D=keep, is_bad=True,
                           mu=v.mu * spec.compute_fraction,
                           compute_scale=v.compute_scale * spec.compute_fraction)
    return fleet, datasets, UploadNoise(frozenset(spec.indices), spec.noise_std)


# -- dataset source --------------------------------------------------------------

@dataclass(frozen=True)
class DataConfig:
    kind: str = "mnist-idx"
    train_images: Optional[str] = None      # None selects the bundled subset
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    n_train: int = 2000
    n_test: int = 1000
    synthetic: SyntheticParams = SyntheticParams()
    synthetic_test_per_class: int = 100
    iid: bool = True
    bad_node: BadNodeSpec = BadNodeSpec()

    def __post_init__(self):
        if isinstance(self.synthetic, dict):
            object.__setattr__(self, "synthetic", SyntheticParams(**self.synthetic))
        if isinstance(self.bad_node, dict):
            object.__setattr__(self, "bad_node", BadNodeSpec(**self.bad_node))

    @property
    def feature_dim(self) -> int:
        return 784 if self.kind == "mnist-idx" else self.synthetic.dims

    @property
    def n_classes(self) -> int:
        return 10 if self.kind == "mnist-idx" else self.synthetic.classes

    def validate(self, K: int) -> list[str]:
        problems = []
        if self.kind not in ("mnist-idx", "synthetic-blobs"):
            problems.append(f"data.kind must be 'mnist-idx' or 'synthetic-blobs', got {self.kind!r}")
        if self.kind == "synthetic-blobs":
            s = self.synthetic
            if s.classes < 2 or s.dims < 1:
                problems.append("data.synthetic needs classes >= 2 and dims >= 1")
            elif s.dims < s.classes:
                problems.append("data.synthetic.dims must be >= classes (simplex class means)")
        paths = (self.train_images, self.train_labels, self.test_images, self.test_labels)
        if any(p is None for p in paths) and any(p is not None for p in paths):
            problems.append("data: give all four IDX paths or none of them")
        if self.n_train < 1 or self.n_test < 1:
            problems.append("data.n_train and data.n_test must be >= 1")
        return problems + self.bad_node.validate(K)


def load_datasets(cfg: DataConfig, seed=0) -> tuple[ClientDataset, ClientDataset]:
    """(training pool, test set) for the configured source."""
    if cfg.kind == "synthetic-blobs":
        rng = np.random.default_rng(seed)
        s = cfg.synthetic
        pool = generate_synthetic(s, rng)
        test = generate_synthetic(replace(s, per_class=cfg.synthetic_test_per_class), rng)
        return pool.subset(slice(0, cfg.n_train)), test.subset(slice(0, cfg.n_test))
    if cfg.train_images is None:
        root = bundled_mnist_dir()
        paths = [root / f"{p}-{k}" for p, k in (("train", "images-idx3-ubyte.gz"), ("train", "labels-idx1-ubyte.gz"),
                                                 ("t10k", "images-idx3-ubyte.gz"), ("t10k", "labels-idx1-ubyte.gz"))]
    else:
        paths = [cfg.train_images, cfg.train_labels, cfg.test_images, cfg.test_labels]
    pool = load_mnist_idx(paths[0], paths[1], limit=cfg.n_train)
    test = load_mnist_idx(paths[2], paths[3], limit=cfg.n_test)
    return pool, test
