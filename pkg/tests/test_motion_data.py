"""Tests for the synthetic generator, the STCM file format and preprocessing."""

import hashlib
import struct

import numpy as np
import pandas as pd
import pytest

from src.data.dataset import Dataset, MotionSequence
from src.data.loader import (
    HEADER, MotionLoader, coordinate_columns, dataset_to_frame, decode_dataset, encode_dataset,
    export_csv, load_dataset, save_dataset,
)
from src.data.preprocessing import (
    iterate_batches, normalize_dataset, pattern_mean_futures, pose_distance, separation_ratio,
    split_observed_future, trajectory_distance,
)
from src.data.synthetic import SyntheticConfig, generate_synthetic
from src.errors import (
    DatasetFormatError, DimensionMismatchError, MalformedHeaderError, MissingArtifactError,
    TruncatedPayloadError, UnrecognizedFormatError,
)


@pytest.fixture
def four_patterns():
    return generate_synthetic(SyntheticConfig(pattern_count=4, samples_per_pattern=50, seed=1))


# ---------------------------------------------------------------------------
# generate_synthetic
# ---------------------------------------------------------------------------

def test_zero_jitter_gives_identical_samples():
    data = generate_synthetic(SyntheticConfig(pattern_count=2, samples_per_pattern=3, jitter_scale=0.0,
                                              t_obs=5, t_pred=5, joints=4))
    same = data.sequences[data.labels == 1]
    np.testing.assert_array_equal(same[0], same[1])
    np.testing.assert_array_equal(same[0], same[2])


def test_same_seed_is_bit_identical():
    config = SyntheticConfig(pattern_count=3, samples_per_pattern=4, t_obs=5, t_pred=6, joints=4, seed=9)
    assert encode_dataset(generate_synthetic(config)) == encode_dataset(generate_synthetic(config))


def test_different_seeds_differ():
    a = generate_synthetic(SyntheticConfig(pattern_count=2, samples_per_pattern=2, t_obs=3, t_pred=3, seed=1))
    b = generate_synthetic(SyntheticConfig(pattern_count=2, samples_per_pattern=2, t_obs=3, t_pred=3, seed=2))
    assert not np.array_equal(a.sequences, b.sequences)


def test_shapes_and_labels(four_patterns):
    assert four_patterns.sequences.shape == (200, 125, 16, 3)
    np.testing.assert_array_equal(np.bincount(four_patterns.labels), [50, 50, 50, 50])
    assert four_patterns.split == "train"


def test_pattern_count_zero_rejected():
    with pytest.raises(ValueError, match="pattern_count"):
        generate_synthetic(SyntheticConfig(pattern_count=0))


def test_negative_jitter_rejected():
    with pytest.raises(ValueError, match="jitter_scale"):
        generate_synthetic(SyntheticConfig(jitter_scale=-0.1))


def test_patterns_are_well_separated(four_patterns):
    future = four_patterns.future()
    labels = four_patterns.labels
    means = [future[labels == k].mean(axis=0) for k in range(4)]
    spread = 0.0
    for k in range(4):
        members = future[labels == k]
        d = [np.mean(np.linalg.norm(m - means[k], axis=-1)) for m in members]
        spread = max(spread, float(np.mean(d)))
    between = min(
        float(np.mean(np.linalg.norm(means[i] - means[j], axis=-1)))
        for i in range(4) for j in range(i + 1, 4)
    )
    assert between >= 5.0 * spread
    assert separation_ratio(four_patterns) == pytest.approx(between / spread)


def test_train_and_test_share_patterns():
    config = SyntheticConfig(pattern_count=2, samples_per_pattern=20, t_obs=5, t_pred=10, joints=4, seed=5)
    train = generate_synthetic(config, split="train")
    test = generate_synthetic(config, split="test", samples_per_pattern=10)
    assert len(test) == 20 and test.split == "test"
    assert not np.array_equal(train.sequences[0], test.sequences[0])
    gap = trajectory_distance(pattern_mean_futures(train), pattern_mean_futures(test))
    assert np.all(gap < 0.25)


# ---------------------------------------------------------------------------
# split_observed_future
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("t_obs,t_pred", [(25, 100), (15, 60), (1, 1)])
def test_split_lengths(t_obs, t_pred):
    frames = np.arange((t_obs + t_pred) * 6, dtype=float).reshape(t_obs + t_pred, 2, 3)
    x, y = split_observed_future(MotionSequence(frames), t_obs, t_pred)
    assert (x.length, y.length) == (t_obs, t_pred)
    np.testing.assert_array_equal(x.frames, frames[:t_obs])
    np.testing.assert_array_equal(y.frames, frames[t_obs:])


def test_split_shares_memory_and_ignores_tail():
    frames = np.random.default_rng(0).normal(size=(10, 2, 3))
    seq = MotionSequence(frames)
    x, y = split_observed_future(seq, 3, 4)
    assert np.shares_memory(x.frames, seq.frames)
    assert y.length == 4
    np.testing.assert_array_equal(y.frames[-1], frames[6])


def test_split_too_short_names_required_length():
    with pytest.raises(ValueError, match="125 required"):
        split_observed_future(MotionSequence(np.zeros((100, 16, 3))), 25, 100)


def test_motion_sequence_rejects_non_finite():
    frames = np.zeros((2, 1, 3))
    frames[0, 0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        MotionSequence(frames)


# ---------------------------------------------------------------------------
# save_dataset / load_dataset
# ---------------------------------------------------------------------------

def test_round_trip(tmp_path, tiny_dataset):
    path = save_dataset(tiny_dataset, tmp_path / "motion.stcm")
    loaded = load_dataset(path)
    assert loaded.equals(tiny_dataset)
    np.testing.assert_array_equal(loaded.labels, tiny_dataset.labels)
    assert loaded.normalized


def test_four_pattern_file_hash_is_stable(tmp_path, four_patterns):
    first = save_dataset(four_patterns, tmp_path / "a.stcm")
    second = save_dataset(load_dataset(first), tmp_path / "b.stcm")
    digest = [hashlib.sha256(p.read_bytes()).hexdigest() for p in (first, second)]
    assert digest[0] == digest[1]
    np.testing.assert_array_equal(load_dataset(second).labels, four_patterns.labels)


def test_wrong_magic(tmp_path):
    path = tmp_path / "bad.stcm"
    path.write_bytes(b"XXXX" + b"\x00" * 64)
    with pytest.raises(UnrecognizedFormatError, match="unrecognized format"):
        load_dataset(path)


def test_format_error_kinds(tiny_dataset):
    data = encode_dataset(tiny_dataset)
    with pytest.raises(TruncatedPayloadError):
        decode_dataset(data[:-1])
    with pytest.raises(DimensionMismatchError):
        decode_dataset(data + b"\x00" * 8)
    with pytest.raises(MalformedHeaderError):
        decode_dataset(data[:10])
    bad_version = data[:4] + struct.pack("<I", 7) + data[8:]
    with pytest.raises(MalformedHeaderError, match="version"):
        decode_dataset(bad_version)
    for cls in (TruncatedPayloadError, DimensionMismatchError, MalformedHeaderError, UnrecognizedFormatError):
        assert issubclass(cls, DatasetFormatError)


def test_impossible_header_fields(tiny_dataset):
    fields = list(HEADER.unpack_from(encode_dataset(tiny_dataset), 0))
    fields[6] = 1000  # t_obs beyond the frame count
    data = HEADER.pack(*fields) + encode_dataset(tiny_dataset)[HEADER.size:]
    with pytest.raises(MalformedHeaderError, match="t_obs"):
        decode_dataset(data)


def test_missing_file(tmp_path):
    with pytest.raises(MissingArtifactError):
        load_dataset(tmp_path / "none.stcm")


def test_loader_info(tmp_path, tiny_dataset):
    loader = MotionLoader(save_dataset(tiny_dataset, tmp_path / "d.stcm"))
    with pytest.raises(ValueError):
        loader.get_dataset_info()
    loader.load()
    info = loader.get_dataset_info()
    assert info["per_pattern"] == [6, 6]
    assert info["normalized"] is True


def test_csv_export(tmp_path, tiny_dataset):
    path = export_csv(tiny_dataset, tmp_path / "motion.csv")
    table = pd.read_csv(path)
    frames = tiny_dataset.sequences.shape[1]
    assert list(table.columns[:3]) == ["sample_id", "pattern", "frame_index"]
    assert list(table.columns[3:]) == coordinate_columns(tiny_dataset.joints, 3)
    assert len(table) == len(tiny_dataset) * frames
    np.testing.assert_allclose(table.iloc[frames + 2, 3:].to_numpy(dtype=float),
                               tiny_dataset.sequences[1, 2].ravel())
    assert dataset_to_frame(tiny_dataset)["pattern"].iloc[-1] == tiny_dataset.labels[-1]


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def test_normalisation_uses_train_statistics(tiny_synthetic_config):
    raw_train = generate_synthetic(tiny_synthetic_config)
    raw_test = generate_synthetic(tiny_synthetic_config, split="test")
    train, test = normalize_dataset(raw_train, raw_test)
    flat = train.sequences.reshape(-1, train.dim)
    np.testing.assert_allclose(flat.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(flat.std(axis=0), 1.0, atol=1e-10)
    np.testing.assert_array_equal(test.mean, train.mean)
    np.testing.assert_allclose(test.denormalize(test.sequences), raw_test.sequences, atol=1e-10)
    with pytest.raises(ValueError, match="already normalised"):
        normalize_dataset(train)


def test_pose_and_trajectory_distance():
    a = np.zeros((2, 4, 3))
    b = np.zeros((2, 4, 3))
    b[..., 0] = 3.0
    b[..., 1] = 4.0
    np.testing.assert_allclose(pose_distance(a, b), [5.0, 5.0])
    assert trajectory_distance(a, b) == pytest.approx(5.0)


def test_iterate_batches_covers_every_index_once():
    batches = list(iterate_batches(10, 4, np.random.default_rng(0)))
    assert [len(b) for b in batches] == [4, 4, 2]
    np.testing.assert_array_equal(np.sort(np.concatenate(batches)), np.arange(10))
    again = list(iterate_batches(10, 4, np.random.default_rng(0)))
    assert all(np.array_equal(x, y) for x, y in zip(batches, again))


def test_dataset_validation():
    with pytest.raises(ValueError, match="labels"):
        Dataset(np.zeros((2, 4, 1, 3)), np.array([0, 2]), 2, 2, 10.0, pattern_count=2)
    with pytest.raises(ValueError, match="do not fit"):
        Dataset(np.zeros((2, 4, 1, 3)), np.array([0, 1]), 3, 2, 10.0, pattern_count=2)
