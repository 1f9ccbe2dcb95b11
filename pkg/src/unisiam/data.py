"""Synthetic class-structured data, augmentations, and dataset files.

The world is a set of C class prototypes on a k-dimensional latent
manifold, mixed up into d-dimensional ambient space by a shared
column-normalized mixing matrix, plus isotropic nuisance noise:

    x = mixing @ (prototype_c + latent_scale * u) + nuisance * eps

with u, eps standard normal. Classes are split disjointly into
train/val/test pools, so evaluation classes are never seen in
pretraining.

Augmentations are vector-space analogues of image augmentation:
random scaling, additive Gaussian noise, coordinate dropout, and
local block permutation. Policy levels form a ladder (simple <
default < strong) in perturbation magnitude.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractViolationError, FormatError
from .ioutil import atomic_write_bytes
from .losses import PairBatch

DATASET_MAGIC = b"FSDS"
DATASET_VERSION = 1


# -- augmentation --------------------------------------------------------


@dataclass(frozen=True)
class AugmentPolicy:
    """Knobs for one augmentation level.

    scale_range multiplies the whole vector; noise_sigma adds isotropic
    Gaussian noise; dropout_p zeroes coordinates independently;
    perm_block > 0 shuffles coordinates within consecutive blocks of
    that size.
    """

    level: str
    noise_sigma: float
    dropout_p: float
    scale_range: tuple[float, float]
    perm_block: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ContractViolationError("noise_sigma must be >= 0")
        if not (0.0 <= self.dropout_p < 1.0):
            raise ContractViolationError("dropout_p must lie in [0, 1)")
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise ContractViolationError(f"bad scale_range {self.scale_range}")
        if self.perm_block < 0:
            raise ContractViolationError("perm_block must be >= 0")


_POLICIES = {
    "none": AugmentPolicy("none", 0.0, 0.0, (1.0, 1.0), 0),
    "simple": AugmentPolicy("simple", 0.05, 0.0, (1.0, 1.0), 0),
    "default": AugmentPolicy("default", 0.15, 0.1, (0.8, 1.2), 0),
    "strong": AugmentPolicy("strong", 0.3, 0.2, (0.6, 1.4), 2),
}

AUGMENT_LEVELS = tuple(_POLICIES)


def augment_policy(level: str) -> AugmentPolicy:
    if level not in _POLICIES:
        raise ContractViolationError(
            f"unknown augment level {level!r}; choose from {AUGMENT_LEVELS}")
    return _POLICIES[level]


def augment(x: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    """One stochastic view of a vector.

    Scale, noise, and dropout always consume rng draws (even at neutral
    settings) so the stream stays aligned across policy levels; block
    permutation draws only when perm_block > 0. With all knobs neutral
    the result equals x bit-for-bit.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ContractViolationError(f"augment expects a 1-D vector, got {x.shape}")
    d = x.shape[0]
    s = rng.uniform(policy.scale_range[0], policy.scale_range[1])
    noise = rng.standard_normal(d)
    keep = rng.random(d) >= policy.dropout_p
    out = x * s + policy.noise_sigma * noise
    out = out * keep
    if policy.perm_block > 1:
        for start in range(0, d - policy.perm_block + 1, policy.perm_block):
            idx = rng.permutation(policy.perm_block)
            out[start:start + policy.perm_block] = out[start:start + policy.perm_block][idx]
    return out


def build_pair_batch(instances: np.ndarray, policy: AugmentPolicy,
                     rng: np.random.Generator,
                     instance_ids: np.ndarray | None = None) -> PairBatch:
    """Two independent views per instance, stacked [view1; view2].

    Needs B >= 2 so that every row has a non-empty negative set under
    the strictest exclusion policy.
    """
    instances = np.asarray(instances, dtype=np.float64)
    if instances.ndim != 2 or instances.shape[0] < 2:
        raise ContractViolationError(
            f"instances must be a (B >= 2, d) array, got {instances.shape}")
    b = instances.shape[0]
    if instance_ids is None:
        instance_ids = np.arange(b)
    instance_ids = np.asarray(instance_ids)
    if instance_ids.shape != (b,):
        raise ContractViolationError("instance_ids must have one entry per row")
    first = np.stack([augment(row, policy, rng) for row in instances])
    second = np.stack([augment(row, policy, rng) for row in instances])
    return PairBatch(views=np.concatenate([first, second], axis=0),
                     pair_count=b,
                     instance_ids=np.concatenate([instance_ids, instance_ids]))


# -- synthetic world -----------------------------------------------------


@dataclass
class EpisodePool:
    """Per-class sample matrices for one split."""

    split: str
    class_ids: np.ndarray            # original class indices, len C_split
    class_data: list[np.ndarray]     # each (per_class, d)

    @property
    def n_classes(self) -> int:
        return len(self.class_data)

    @property
    def dim(self) -> int:
        return self.class_data[0].shape[1]

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """All rows plus labels local to this split (0..C_split-1)."""
        x = np.concatenate(self.class_data, axis=0)
        y = np.concatenate([np.full(len(m), i) for i, m in enumerate(self.class_data)])
        return x, y


@dataclass
class SyntheticWorld:
    class_count: int
    per_class: int
    ambient_dim: int
    latent_dim: int
    nuisance: float
    latent_scale: float
    seed: int
    prototypes: np.ndarray = field(repr=False)   # (C, k)
    mixing: np.ndarray = field(repr=False)       # (d, k), unit columns


def default_split(class_count: int) -> tuple[int, int, int]:
    """train/val/test class counts: a quarter each to val and test."""
    holdout = class_count // 4
    return (class_count - 2 * holdout, holdout, holdout)


def make_world(class_count: int = 20, per_class: int = 200, ambient_dim: int = 64,
               latent_dim: int = 8, nuisance: float = 0.1, latent_scale: float = 1.0,
               seed: int = 0, split: tuple[int, int, int] | None = None,
               ) -> tuple[SyntheticWorld, dict[str, EpisodePool]]:
    """Generate a world and its class-disjoint train/val/test pools.

    Fully deterministic in the arguments: the same inputs regenerate
    identical data.
    """
    if class_count < 3:
        raise ConfigError("need at least 3 classes for 3 disjoint splits")
    if per_class < 2:
        raise ConfigError("per_class must be >= 2")
    if not (1 <= latent_dim <= ambient_dim):
        raise ConfigError(
            f"latent_dim must lie in [1, ambient_dim], got {latent_dim}/{ambient_dim}")
    if nuisance < 0 or latent_scale < 0:
        raise ConfigError("nuisance and latent_scale must be >= 0")
    if split is None:
        split = default_split(class_count)
    if len(split) != 3 or any(s < 1 for s in split) or sum(split) != class_count:
        raise ConfigError(
            f"split {split} must be three positive counts summing to {class_count}")

    rng = np.random.default_rng(np.random.SeedSequence(entropy=(0x57a71c, seed)))
    prototypes = rng.standard_normal((class_count, latent_dim))
    mixing = rng.standard_normal((ambient_dim, latent_dim))
    mixing /= np.sqrt((mixing * mixing).sum(axis=0))
    order = rng.permutation(class_count)

    samples = []
    for c in range(class_count):
        latent = prototypes[c] + latent_scale * rng.standard_normal((per_class, latent_dim))
        eps = rng.standard_normal((per_class, ambient_dim))
        samples.append(latent @ mixing.T + nuisance * eps)

    world = SyntheticWorld(class_count, per_class, ambient_dim, latent_dim,
                           nuisance, latent_scale, seed, prototypes, mixing)
    pools = {}
    bounds = (0, split[0], split[0] + split[1], class_count)
    for name, lo, hi in (("train", *bounds[0:2]), ("val", *bounds[1:3]),
                         ("test", *bounds[2:4])):
        ids = np.sort(order[lo:hi])
        pools[name] = EpisodePool(split=name, class_ids=ids,
                                  class_data=[samples[c] for c in ids])
    return world, pools


# -- dataset files -------------------------------------------------------


def write_dataset(path: str | os.PathLike, vectors: np.ndarray,
                  labels: np.ndarray | None = None) -> None:
    """Write vectors (and optional u32 labels) as a dataset file.

    Layout: magic, u32 version, u32 count, u32 dim, u8 has_labels,
    count*dim little-endian f32, then count u32 labels if present.
    """
    vectors = np.asarray(vectors)
    if vectors.ndim != 2:
        raise ContractViolationError(f"vectors must be 2-D, got shape {vectors.shape}")
    n, d = vectors.shape
    blob = bytearray()
    blob += DATASET_MAGIC
    blob += struct.pack("<IIIB", DATASET_VERSION, n, d, 0 if labels is None else 1)
    blob += np.ascontiguousarray(vectors, dtype="<f4").tobytes()
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (n,):
            raise ContractViolationError(
                f"labels must have shape ({n},), got {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer) or labels.min() < 0:
            raise ContractViolationError("labels must be non-negative integers")
        blob += np.ascontiguousarray(labels, dtype="<u4").tobytes()
    atomic_write_bytes(path, bytes(blob))


def read_dataset(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray | None]:
    """Read a dataset file back as (float32 vectors, labels or None)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4 or blob[:4] != DATASET_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {DATASET_MAGIC!r}", offset=0)
    header_end = 4 + struct.calcsize("<IIIB")
    if len(blob) < header_end:
        raise FormatError("truncated header", offset=len(blob))
    version, n, d, has_labels = struct.unpack("<IIIB", blob[4:header_end])
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}", offset=4)
    if has_labels not in (0, 1):
        raise FormatError(f"has_labels flag must be 0 or 1, got {has_labels}",
                          offset=header_end - 1)
    vec_bytes = 4 * n * d
    lab_bytes = 4 * n if has_labels else 0
    expected = header_end + vec_bytes + lab_bytes
    if len(blob) != expected:
        raise FormatError(
            f"file is {len(blob)} bytes, layout implies {expected}",
            offset=min(len(blob), expected))
    vectors = np.frombuffer(blob, dtype="<f4", count=n * d,
                            offset=header_end).reshape(n, d).copy()
    labels = None
    if has_labels:
        labels = np.frombuffer(blob, dtype="<u4", count=n,
                               offset=header_end + vec_bytes).astype(np.int64)
    return vectors, labels
