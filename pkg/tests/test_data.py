import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmu.data import (NoiseConfig, batches_per_epoch, dataset_stream, inject_noise, make_primed_pair,
                      read_dataset, target_footprint, validation_samples, write_dataset)
from dmu.presets import get_preset


@pytest.fixture(scope="module")
def spec():
    return get_preset("box")


@pytest.fixture(scope="module")
def small():
    return get_preset("box_translation")


def _signature(stream):
    return [(mb.epoch, mb.index, mb.sample_ids.tolist(), mb.y1.tobytes(), mb.x2.tobytes()) for mb in stream]


def test_default_constants_give_150_batches():
    assert batches_per_epoch(1050, 5, 35) == 150


def test_stream_length_matches_constants(small):
    # fewer samples, same arithmetic: 70 * 5 / 35 = 10 per epoch
    batches = list(dataset_stream(small, 70, 5, 35, seed=1, epochs=2, buffer=0))
    assert len(batches) == 20
    assert [b.index for b in batches[:10]] == list(range(10))
    assert all(b.y1.shape == (35, 32, 64) for b in batches)


def test_indivisible_epoch_rejected(small):
    with pytest.raises(ValueError, match="divisible"):
        next(dataset_stream(small, 100, 1, 35, seed=0, epochs=1))


def test_each_sample_used_reuse_times(small):
    ids = np.concatenate([b.sample_ids for b in dataset_stream(small, 35, 3, 7, seed=0, epochs=1, buffer=0)])
    np.testing.assert_array_equal(np.bincount(ids), 3)


@pytest.mark.parametrize("buffer,workers", [(1, 1), (4, 1), (4, 3), (0, 2)])
def test_stream_independent_of_buffer_and_workers(small, buffer, workers):
    noise = NoiseConfig(0.05, 0.01)
    ref = _signature(dataset_stream(small, 14, 2, 7, seed=4, epochs=2, noise=noise, buffer=0, workers=1))
    got = _signature(dataset_stream(small, 14, 2, 7, seed=4, epochs=2, noise=noise, buffer=buffer, workers=workers))
    assert got == ref


def test_stream_early_close_stops_producer(small):
    stream = dataset_stream(small, 35, 1, 7, seed=0, buffer=2)
    next(stream)
    stream.close()  # must not hang


def test_stream_propagates_producer_errors(small):
    with pytest.raises(AttributeError):
        list(dataset_stream(small, 7, 1, 7, seed=0, epochs=1, source=[None] * 7))


def test_empty_source_rejected(small):
    with pytest.raises(ValueError, match="empty"):
        next(dataset_stream(small, 7, 1, 7, seed=0, epochs=1, source=[]))


def test_primed_pair_shares_background(spec):
    """Outside both target footprints the two renders agree."""
    for seed in range(200):
        s = make_primed_pair(spec, seed)
        off = ~(target_footprint(spec, s.x1, s.z) | target_footprint(spec, s.x2, s.z))
        assert np.abs(s.y1 - s.y2)[off].max(initial=0.0) < 1e-6


def test_primed_pair_deterministic(spec):
    a, b = make_primed_pair(spec, 11), make_primed_pair(spec, 11)
    np.testing.assert_array_equal(a.y1, b.y1)
    np.testing.assert_array_equal(a.y2, b.y2)
    np.testing.assert_array_equal(a.z, b.z)


def test_mask_is_target_footprint_of_y2(spec):
    s = make_primed_pair(spec, 3)
    np.testing.assert_array_equal(s.mask2, target_footprint(spec, s.x2, s.z))


def test_mask_union_adds_vacated_footprint(spec):
    s = make_primed_pair(spec, 3, mask_union=True)
    expected = target_footprint(spec, s.x2, s.z) | target_footprint(spec, s.x1, s.z)
    np.testing.assert_array_equal(s.mask2, expected)


def test_degenerate_pair_with_forced_equal_states(small):
    x = np.array([0.0, 0.0, 0.9])
    s = make_primed_pair(small, 0, x1=x, x2=x)
    np.testing.assert_array_equal(s.y1, s.y2)


def test_depths_within_range(spec):
    for seed in range(20):
        s = make_primed_pair(spec, seed)
        for y in (s.y1, s.y2):
            assert y.min() >= 0 and y.max() <= spec.camera.max_depth


def test_validation_disjoint_from_training(small):
    val = validation_samples(small, 5, seed=0)
    train = [make_primed_pair(small, [0, 0, 0, i]) for i in range(5)]
    assert not any(np.array_equal(v.x2, t.x2) for v in val for t in train)


@given(p=st.floats(0.0, 1.0), sigma=st.floats(0.0, 0.05), seed=st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_noise_stays_in_range(p, sigma, seed):
    y = np.random.default_rng(0).uniform(0.1, 1.5, (8, 8)).astype(np.float32)
    out = inject_noise(y, NoiseConfig(p, sigma), seed, 1.5)
    assert out.dtype == y.dtype
    assert out.min() >= 0 and out.max() <= 1.5
    assert np.all(out[out != 0] > 0)


def test_noise_dropout_rate():
    y = np.ones((200, 200), np.float32)
    out = inject_noise(y, NoiseConfig(0.2, 0.0), 0, 2.0)
    assert abs((out == 0).mean() - 0.2) < 0.01
    np.testing.assert_array_equal(out[out != 0], 1.0)


def test_noise_zero_is_identity():
    y = np.arange(6, dtype=np.float32).reshape(2, 3)
    np.testing.assert_array_equal(inject_noise(y, NoiseConfig(), 0, 10.0), y)


def test_noise_only_on_network_input(small):
    noise = NoiseConfig(0.3, 0.0)
    mb = next(dataset_stream(small, 7, 1, 7, seed=0, epochs=1, noise=noise, buffer=0))
    clean = [make_primed_pair(small, [0, 0, 0, int(i)]) for i in mb.sample_ids]
    np.testing.assert_array_equal(mb.y2, np.stack([c.y2 for c in clean]))
    assert (mb.y1 == 0).mean() > 0.2


def test_bad_noise_config():
    with pytest.raises(ValueError):
        NoiseConfig(1.5, 0.0)
    with pytest.raises(ValueError):
        NoiseConfig(0.0, -1.0)


def test_dataset_roundtrip(small, tmp_path):
    write_dataset(tmp_path / "ds", small, 7, seed=2, workers=2)
    records = read_dataset(tmp_path / "ds")
    assert len(records) == 7
    ref = make_primed_pair(small, [2, 0, 0, 3])
    np.testing.assert_array_equal(records[3].y2, ref.y2)
    np.testing.assert_array_equal(records[3].mask2, ref.mask2)


def test_stream_from_stored_dataset_matches_live(small, tmp_path):
    write_dataset(tmp_path / "ds", small, 14, seed=5)
    stored = _signature(dataset_stream(small, 14, 1, 7, seed=5, epochs=1, buffer=0,
                                       source=read_dataset(tmp_path / "ds")))
    live = _signature(dataset_stream(small, 14, 1, 7, seed=5, epochs=1, buffer=0))
    assert stored == live
