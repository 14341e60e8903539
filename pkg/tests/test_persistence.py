import struct
import zlib

import numpy as np
import pytest

from tilecnn.nn import ArchSpec, forward, init_model, predict_proba
from tilecnn.persistence import (
    BadMagicError,
    ChecksumError,
    ModelFileError,
    TruncatedModelError,
    UnsupportedVersionError,
    load_model,
    model_from_bytes,
    model_to_bytes,
    save_model,
)


@pytest.fixture
def model(rng):
    m = init_model(ArchSpec.default(10, 10, 1, 3), 4)
    # move the running stats off their defaults so they are exercised
    forward(m, rng.random((8, 10, 10, 1)), training=True)
    m.mode = "infer"
    return m


def test_round_trip_predictions_identical(tmp_path, model, rng):
    save_model(model, tmp_path / "m.pcnn")
    loaded = load_model(tmp_path / "m.pcnn")
    assert loaded.mode == "infer"
    assert loaded.arch == model.arch
    x = rng.random((12, 10, 10, 1))
    np.testing.assert_array_equal(predict_proba(loaded, x), predict_proba(model, x))
    for k, v in model.state().items():
        np.testing.assert_array_equal(loaded.state()[k], v, err_msg=k)


def test_file_layout(tmp_path, model):
    save_model(model, tmp_path / "m.pcnn")
    data = (tmp_path / "m.pcnn").read_bytes()
    assert data[:4] == bytes([0x50, 0x43, 0x4E, 0x4E])
    assert struct.unpack("<I", data[4:8]) == (1,)
    assert struct.unpack("<5I", data[8:28]) == (10, 10, 1, 3, 3)
    assert struct.unpack("<I", data[-4:])[0] == zlib.crc32(data[:-4])


def test_save_load_save_byte_identical(tmp_path, model):
    save_model(model, tmp_path / "a.pcnn")
    save_model(load_model(tmp_path / "a.pcnn"), tmp_path / "b.pcnn")
    assert (tmp_path / "a.pcnn").read_bytes() == (tmp_path / "b.pcnn").read_bytes()


def test_corrupt_payload_byte(model):
    data = bytearray(model_to_bytes(model))
    data[len(data) // 2] ^= 0x01
    with pytest.raises(ChecksumError, match="CRC"):
        model_from_bytes(bytes(data))


def test_wrong_magic(model):
    data = b"XCNN" + model_to_bytes(model)[4:]
    with pytest.raises(BadMagicError, match="not a model file"):
        model_from_bytes(data)


def test_future_version(model):
    data = bytearray(model_to_bytes(model))
    data[4:8] = struct.pack("<I", 2)
    with pytest.raises(UnsupportedVersionError, match="version 2"):
        model_from_bytes(bytes(data))


@pytest.mark.parametrize("keep", [6, 30, 200])
def test_truncated(model, keep):
    with pytest.raises(TruncatedModelError):
        model_from_bytes(model_to_bytes(model)[:keep])


def test_errors_are_distinct():
    kinds = [BadMagicError, UnsupportedVersionError, ChecksumError, TruncatedModelError]
    assert len(set(kinds)) == 4
    for a in kinds:
        assert issubclass(a, ModelFileError)
        assert not any(issubclass(a, b) for b in kinds if b is not a)


def test_trailing_garbage_with_valid_crc(model):
    body = model_to_bytes(model)[:-4] + b"\0\0\0\0"
    data = body + struct.pack("<I", zlib.crc32(body))
    with pytest.raises(ModelFileError, match="trailing"):
        model_from_bytes(data)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="file not found"):
        load_model(tmp_path / "none.pcnn")


def test_float64_model_saved_as_float32(tmp_path):
    m = init_model(ArchSpec.default(10, 10, 1, 2), 0, dtype=np.float64)
    save_model(m, tmp_path / "m.pcnn")
    loaded = load_model(tmp_path / "m.pcnn")
    assert loaded.dtype == np.float32
    np.testing.assert_array_equal(loaded.params["conv0.w"], m.params["conv0.w"].astype(np.float32))
