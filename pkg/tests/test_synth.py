import struct
import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from repface import synth
from repface.errors import (
    ChecksumError,
    ConfigError,
    DatasetValidationError,
    GenerationError,
    HeaderError,
    TruncatedFileError,
)

SMALL = synth.DatasetSpec(num_classes=5, n_per_class=20, d_in=8, closed_noise_ratio=0.2, seed=11)


def test_clean_has_no_flips():
    ds = synth.generate(synth.DatasetSpec(num_classes=4, n_per_class=10, d_in=6))
    assert not ds.flipped.any()
    np.testing.assert_array_equal(ds.noisy_labels, ds.true_labels)


def test_exact_flip_count():
    ds = synth.generate(synth.DatasetSpec(num_classes=50, n_per_class=200, d_in=32, closed_noise_ratio=0.2))
    assert len(ds) == 10000
    assert int(ds.flipped.sum()) == 2000
    assert np.all(ds.noisy_labels[ds.flipped] != ds.true_labels[ds.flipped])


def test_same_seed_same_bytes():
    assert synth.dataset_bytes(synth.generate(SMALL)) == synth.dataset_bytes(synth.generate(SMALL))


def test_different_seed_differs():
    other = synth.DatasetSpec(**{**SMALL.__dict__, "seed": 12})
    assert synth.generate(SMALL) != synth.generate(other)


def test_features_unit_norm_at_storage_precision():
    ds = synth.generate(SMALL)
    assert ds.features.dtype == np.float32
    # float32 storage bounds the achievable norm error
    np.testing.assert_allclose(np.linalg.norm(ds.features.astype(np.float64), axis=1), 1.0, atol=1e-6)


def test_open_noise():
    spec = synth.DatasetSpec(num_classes=10, n_per_class=50, d_in=16, closed_noise_ratio=0.1,
                             open_noise_ratio=0.1, seed=2)
    ds = synth.generate(spec)
    assert int(ds.is_open.sum()) == 50
    assert int((ds.flipped & ~ds.is_open).sum()) == 50
    assert np.all(ds.noisy_labels < 10)


def test_prototypes_respect_min_angle():
    protos, _ = synth.class_prototypes(synth.DatasetSpec(num_classes=30, n_per_class=2, d_in=8))
    g = protos @ protos.T
    np.fill_diagonal(g, -1)
    assert g.max() <= np.cos(synth.MIN_PROTOTYPE_ANGLE) + 1e-12


def test_impossible_prototypes():
    with pytest.raises(GenerationError):
        synth.sample_prototypes(50, 2, np.random.default_rng(0), min_angle=1.0)


@pytest.mark.parametrize("kw", [dict(num_classes=1), dict(closed_noise_ratio=1.0),
                                dict(closed_noise_ratio=0.6, open_noise_ratio=0.5),
                                dict(concentration=0.0)])
def test_bad_spec(kw):
    base = dict(num_classes=4, n_per_class=10, d_in=4)
    with pytest.raises(ConfigError):
        synth.DatasetSpec(**{**base, **kw})


def test_round_half_up():
    assert [synth.round_half_up(x) for x in (0.5, 1.5, 2.4999)] == [1, 2, 2]


def test_holdout_clean():
    h = synth.generate_holdout(SMALL)
    assert len(h) == 5 * SMALL.n_holdout_per_class
    assert not h.flipped.any()


class TestFormat:
    def test_round_trip(self, tmp_path):
        ds = synth.generate(SMALL)
        synth.write_dataset(ds, tmp_path / "d.rpfd")
        back = synth.read_dataset(tmp_path / "d.rpfd")
        assert back == ds
        assert list(back)[3].noisy_label == ds[3].noisy_label

    def test_header_layout(self):
        buf = synth.dataset_bytes(synth.generate(SMALL))
        magic, version, n, C, d = struct.unpack_from("<4sHQII", buf)
        assert (magic, version, n, C, d) == (b"RPFD", 1, 100, 5, 8)
        assert len(buf) == 22 + 100 * (8 * 4 + 9) + 4

    def test_truncated(self):
        buf = synth.dataset_bytes(synth.generate(SMALL))
        with pytest.raises(TruncatedFileError):
            synth.parse_dataset(buf[:-7])

    def test_header_only_truncated(self):
        with pytest.raises(HeaderError):
            synth.parse_dataset(b"RPFD\x01")

    def test_count_mismatch(self):
        buf = bytearray(synth.dataset_bytes(synth.generate(SMALL)))
        struct.pack_into("<Q", buf, 6, 99)
        with pytest.raises(DatasetValidationError):
            synth.parse_dataset(bytes(buf))

    def test_bad_magic(self):
        buf = bytearray(synth.dataset_bytes(synth.generate(SMALL)))
        buf[:4] = b"XXXX"
        with pytest.raises(HeaderError):
            synth.parse_dataset(bytes(buf))

    def test_checksum(self):
        buf = bytearray(synth.dataset_bytes(synth.generate(SMALL)))
        buf[30] ^= 0xFF
        with pytest.raises(ChecksumError):
            synth.parse_dataset(bytes(buf))

    def test_label_out_of_range(self):
        ds = synth.generate(SMALL)
        ds.noisy_labels[0] = 9
        ds.flipped[0] = True
        with pytest.raises(DatasetValidationError):
            synth.parse_dataset(synth.dataset_bytes(ds))

    def test_inconsistent_flip_flag(self):
        ds = synth.generate(SMALL)
        i = int(np.flatnonzero(ds.noisy_labels == ds.true_labels)[0])
        ds.flipped[i] = True
        payload_ok = synth.dataset_bytes(ds)
        assert zlib.crc32(payload_ok[22:-4]) == struct.unpack("<I", payload_ok[-4:])[0]
        with pytest.raises(DatasetValidationError):
            synth.parse_dataset(payload_ok)

    @given(st.integers(2, 6), st.integers(2, 8), st.integers(2, 6), st.integers(0, 2**64 - 1))
    def test_round_trip_property(self, C, n, d, seed):
        ds = synth.generate(synth.DatasetSpec(num_classes=C, n_per_class=n, d_in=d,
                                              closed_noise_ratio=0.25, seed=seed))
        assert synth.parse_dataset(synth.dataset_bytes(ds)) == ds
