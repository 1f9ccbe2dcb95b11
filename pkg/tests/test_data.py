"""Synthetic world construction, augmentation behavior, dataset files."""

import struct

import numpy as np
import pytest

from unisiam.data import (AUGMENT_LEVELS, DATASET_MAGIC, augment,
                          augment_policy, build_pair_batch, default_split,
                          make_world, read_dataset, write_dataset)
from unisiam.errors import (ConfigError, ContractViolationError, FormatError)

HEADER = 4 + struct.calcsize("<IIIB")   # magic + version/count/dim/flag


# -- augmentation --------------------------------------------------------


def test_null_policy_is_identity():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(16)
    out = augment(x, augment_policy("none"), np.random.default_rng(1))
    np.testing.assert_array_equal(out, x)


def test_unknown_level_rejected():
    with pytest.raises(ContractViolationError):
        augment_policy("extreme")


def test_policy_ladder_orders_perturbation():
    rng = np.random.default_rng(2)
    x = rng.standard_normal(32)
    dist = {}
    for level in ("simple", "default", "strong"):
        r = np.random.default_rng(3)
        views = np.stack([augment(x, augment_policy(level), r) for _ in range(400)])
        dist[level] = float(np.linalg.norm(views - x, axis=1).mean())
    assert dist["simple"] < dist["default"] < dist["strong"]


def test_draw_alignment_across_levels():
    # all levels without block permutation consume the same rng stream
    x = np.ones(8)
    tails = []
    for level in ("none", "simple", "default"):
        rng = np.random.default_rng(4)
        augment(x, augment_policy(level), rng)
        tails.append(rng.random())
    assert tails[0] == tails[1] == tails[2]


def test_dropout_rate_concentrates():
    # default policy zeroes each coordinate with p = 0.1; additive noise
    # makes every surviving coordinate nonzero almost surely
    policy = augment_policy("default")
    rng = np.random.default_rng(5)
    x = np.full(64, 3.0)
    zeros = sum(int((augment(x, policy, rng) == 0.0).sum()) for _ in range(500))
    total = 500 * 64
    rate = zeros / total
    # 5 sigma binomial band around 0.1
    band = 5 * np.sqrt(0.1 * 0.9 / total)
    assert abs(rate - 0.1) < band


def test_strong_policy_permutes_within_blocks():
    policy = augment_policy("strong")
    assert policy.perm_block == 2
    x = np.arange(10, dtype=np.float64)
    swapped = 0
    for s in range(200):
        out = augment(x, policy, np.random.default_rng(s))
        assert out.shape == x.shape
        swapped += int(abs(out[1]) > abs(out[0]) * 5)   # crude: huge reorder signal
    # the loop above is only a smoke check that nothing crashes; the real
    # assertion is block-locality: coordinates never leave their block
    policy2 = augment_policy("strong")
    big = np.array([0.0, 0.0, 100.0, 100.0])
    for s in range(50):
        out = augment(big, policy2, np.random.default_rng(s))
        # first block stays small, second stays large (scale <= 1.4,
        # noise sigma 0.3, so the two magnitude groups cannot mix)
        assert max(abs(out[0]), abs(out[1])) < 20
        assert min(abs(out[2]), abs(out[3])) > 20 or out[2] == 0 or out[3] == 0


def test_augment_rejects_matrix():
    with pytest.raises(ContractViolationError):
        augment(np.ones((2, 3)), augment_policy("none"), np.random.default_rng(0))


def test_build_pair_batch_layout():
    rng = np.random.default_rng(6)
    inst = rng.standard_normal((3, 5))
    pb = build_pair_batch(inst, augment_policy("none"), np.random.default_rng(7))
    assert pb.pair_count == 3
    np.testing.assert_array_equal(pb.views[:3], inst)
    np.testing.assert_array_equal(pb.views[3:], inst)
    np.testing.assert_array_equal(pb.instance_ids, [0, 1, 2, 0, 1, 2])


def test_build_pair_batch_views_differ_under_noise():
    rng = np.random.default_rng(8)
    inst = rng.standard_normal((4, 6))
    pb = build_pair_batch(inst, augment_policy("simple"), np.random.default_rng(9))
    assert not np.array_equal(pb.views[:4], pb.views[4:])


def test_build_pair_batch_needs_two_instances():
    with pytest.raises(ContractViolationError):
        build_pair_batch(np.ones((1, 4)), augment_policy("none"),
                         np.random.default_rng(0))
    with pytest.raises(ContractViolationError):
        build_pair_batch(np.ones((3, 4)), augment_policy("none"),
                         np.random.default_rng(0), instance_ids=np.arange(2))


# -- synthetic world -----------------------------------------------------


def test_default_split_quarters():
    assert default_split(20) == (10, 5, 5)
    assert default_split(8) == (4, 2, 2)
    assert default_split(7) == (5, 1, 1)


def test_make_world_deterministic():
    w1, p1 = make_world(class_count=8, per_class=20, ambient_dim=16,
                        latent_dim=4, seed=3)
    w2, p2 = make_world(class_count=8, per_class=20, ambient_dim=16,
                        latent_dim=4, seed=3)
    np.testing.assert_array_equal(w1.prototypes, w2.prototypes)
    np.testing.assert_array_equal(w1.mixing, w2.mixing)
    for split in ("train", "val", "test"):
        np.testing.assert_array_equal(p1[split].class_ids, p2[split].class_ids)
        for a, b in zip(p1[split].class_data, p2[split].class_data):
            np.testing.assert_array_equal(a, b)


def test_seed_changes_world():
    w1, _ = make_world(class_count=8, per_class=20, seed=0)
    w2, _ = make_world(class_count=8, per_class=20, seed=1)
    assert not np.array_equal(w1.prototypes, w2.prototypes)


def test_splits_are_class_disjoint_and_complete():
    _, pools = make_world(class_count=20, per_class=10)
    ids = [set(pools[s].class_ids.tolist()) for s in ("train", "val", "test")]
    assert ids[0] & ids[1] == set() and ids[0] & ids[2] == set() and ids[1] & ids[2] == set()
    assert ids[0] | ids[1] | ids[2] == set(range(20))
    assert (len(ids[0]), len(ids[1]), len(ids[2])) == default_split(20)


def test_mixing_columns_unit_norm():
    w, _ = make_world(class_count=6, per_class=5, ambient_dim=32, latent_dim=5)
    np.testing.assert_allclose(np.linalg.norm(w.mixing, axis=0), 1.0, atol=1e-12)


def test_class_structure_within_vs_between():
    # tight latent scatter: same-class pairs must sit closer than
    # cross-class pairs on average
    _, pools = make_world(class_count=8, per_class=40, ambient_dim=32,
                          latent_dim=4, nuisance=0.1, latent_scale=0.5, seed=1)
    x, y = pools["train"].stacked()
    diff = x[:, None, :] - x[None, :, :]
    d2 = (diff * diff).sum(-1)
    same = y[:, None] == y[None, :]
    off = ~np.eye(len(y), dtype=bool)
    within = d2[same & off].mean()
    between = d2[~same].mean()
    assert within < 0.6 * between


def test_pool_helpers():
    _, pools = make_world(class_count=8, per_class=12, ambient_dim=16)
    pool = pools["val"]
    assert pool.n_classes == 2
    assert pool.dim == 16
    x, y = pool.stacked()
    assert x.shape == (24, 16)
    np.testing.assert_array_equal(np.unique(y), [0, 1])
    np.testing.assert_array_equal(np.bincount(y), [12, 12])


@pytest.mark.parametrize("kwargs", [
    dict(class_count=2),
    dict(per_class=1),
    dict(latent_dim=0),
    dict(latent_dim=65),
    dict(nuisance=-0.1),
    dict(latent_scale=-1.0),
    dict(split=(10, 5, 4)),
    dict(split=(20, 0, 0)),
])
def test_make_world_validation(kwargs):
    with pytest.raises(ConfigError):
        make_world(**kwargs)


# -- dataset files -------------------------------------------------------


def test_dataset_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(10)
    vecs = rng.standard_normal((7, 3)).astype(np.float32)
    labels = rng.integers(0, 5, size=7)
    path = tmp_path / "d.fsds"
    write_dataset(path, vecs, labels)
    rv, rl = read_dataset(path)
    np.testing.assert_array_equal(rv, vecs)
    np.testing.assert_array_equal(rl, labels)

    # a second write of the read-back content is byte-identical
    path2 = tmp_path / "d2.fsds"
    write_dataset(path2, rv, rl)
    assert path.read_bytes() == path2.read_bytes()


def test_dataset_size_arithmetic(tmp_path):
    path = tmp_path / "d.fsds"
    write_dataset(path, np.zeros((3, 5), dtype=np.float32))
    assert path.stat().st_size == HEADER + 4 * 3 * 5
    write_dataset(path, np.zeros((3, 5), dtype=np.float32), np.arange(3))
    assert path.stat().st_size == HEADER + 4 * 3 * 5 + 4 * 3


def test_dataset_without_labels(tmp_path):
    path = tmp_path / "d.fsds"
    write_dataset(path, np.ones((2, 2), dtype=np.float32))
    rv, rl = read_dataset(path)
    assert rl is None
    np.testing.assert_array_equal(rv, np.ones((2, 2), dtype=np.float32))


def test_dataset_bad_magic(tmp_path):
    path = tmp_path / "d.fsds"
    write_dataset(path, np.ones((2, 2)))
    blob = bytearray(path.read_bytes())
    blob[:4] = b"XXXX"
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError) as ei:
        read_dataset(path)
    assert ei.value.offset == 0


def test_dataset_truncation(tmp_path):
    path = tmp_path / "d.fsds"
    write_dataset(path, np.ones((4, 4)), np.arange(4))
    blob = path.read_bytes()
    path.write_bytes(blob[:-3])
    with pytest.raises(FormatError) as ei:
        read_dataset(path)
    assert ei.value.offset == len(blob) - 3

    path.write_bytes(blob[:10])   # inside the header
    with pytest.raises(FormatError) as ei:
        read_dataset(path)
    assert ei.value.offset == 10


def test_dataset_bad_version(tmp_path):
    path = tmp_path / "d.fsds"
    write_dataset(path, np.ones((2, 2)))
    blob = bytearray(path.read_bytes())
    blob[4:8] = struct.pack("<I", 99)
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError) as ei:
        read_dataset(path)
    assert ei.value.offset == 4


def test_dataset_bad_flag(tmp_path):
    path = tmp_path / "d.fsds"
    write_dataset(path, np.ones((2, 2)))
    blob = bytearray(path.read_bytes())
    blob[HEADER - 1] = 7
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError) as ei:
        read_dataset(path)
    assert ei.value.offset == HEADER - 1


def test_write_dataset_validation(tmp_path):
    path = tmp_path / "d.fsds"
    with pytest.raises(ContractViolationError):
        write_dataset(path, np.ones(5))
    with pytest.raises(ContractViolationError):
        write_dataset(path, np.ones((3, 2)), np.arange(2))
    with pytest.raises(ContractViolationError):
        write_dataset(path, np.ones((3, 2)), np.array([0, -1, 2]))
    with pytest.raises(ContractViolationError):
        write_dataset(path, np.ones((3, 2)), np.array([0.0, 1.0, 2.0]))


def test_levels_export():
    assert AUGMENT_LEVELS == ("none", "simple", "default", "strong")
    assert DATASET_MAGIC == b"FSDS"
