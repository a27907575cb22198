import json

import numpy as np
import pytest

from calig.encoder import CheckpointFormatError, CheckpointIntegrityError, load_checkpoint, save_checkpoint
from calig.encoder.checkpoint import MAGIC, from_bytes, to_bytes


def _split(raw: bytes):
    pos = len(MAGIC)
    nl = raw.index(b"\n", pos)
    n = int(raw[pos:nl])
    return json.loads(raw[nl + 1 : nl + 1 + n]), raw[nl + 1 + n :]


def _join(header: dict, payload: bytes) -> bytes:
    text = json.dumps(header, sort_keys=True).encode()
    return MAGIC + f"{len(text)}\n".encode() + text + payload


def test_round_trip_is_bitwise(tiny_model, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(tiny_model, path, metadata={"seed": 7})
    model, meta = load_checkpoint(path, with_metadata=True)
    assert meta == {"seed": 7}
    assert model.config == tiny_model.config
    for name, arr in tiny_model.params.items():
        assert model.params[name].tobytes() == arr.tobytes()
    assert not (tmp_path / "m.ckpt.tmp").exists()


def test_same_model_gives_identical_bytes(tiny_model):
    assert to_bytes(tiny_model, {"a": 1}) == to_bytes(tiny_model.copy(), {"a": 1})


def test_truncated_file_is_integrity_error(tiny_model):
    raw = to_bytes(tiny_model)
    with pytest.raises(CheckpointIntegrityError, match="truncated"):
        from_bytes(raw[:-9])


def test_truncated_header_is_format_error_with_offset(tiny_model):
    raw = to_bytes(tiny_model)
    with pytest.raises(CheckpointFormatError) as info:
        from_bytes(raw[: len(MAGIC) + 20])
    assert info.value.offset > 0


def test_bad_magic_and_bad_json(tiny_model):
    with pytest.raises(CheckpointFormatError) as info:
        from_bytes(b"NOT-A-CKPT\n")
    assert info.value.offset == 0
    raw = to_bytes(tiny_model)
    header, payload = _split(raw)
    text = json.dumps(header).encode()
    broken = MAGIC + f"{len(text)}\n".encode() + text[:-1] + b"!" + payload
    with pytest.raises(CheckpointFormatError, match="JSON"):
        from_bytes(broken)


def test_shape_mismatch_names_the_tensor(tiny_model):
    header, payload = _split(to_bytes(tiny_model))
    header["tensors"][3]["shape"] = [1, 2]
    name = header["tensors"][3]["name"]
    with pytest.raises(CheckpointIntegrityError) as info:
        from_bytes(_join(header, payload))
    assert info.value.tensor == name


def test_config_mismatch_is_integrity_error(tiny_model):
    header, payload = _split(to_bytes(tiny_model))
    header["config"]["hidden_dim"] = 16
    with pytest.raises(CheckpointIntegrityError) as info:
        from_bytes(_join(header, payload))
    assert info.value.tensor is not None


def test_missing_and_trailing_data(tiny_model):
    header, payload = _split(to_bytes(tiny_model))
    dropped = dict(header, tensors=header["tensors"][:-1])
    with pytest.raises(CheckpointIntegrityError, match="missing"):
        from_bytes(_join(dropped, payload))
    with pytest.raises(CheckpointIntegrityError, match="trailing"):
        from_bytes(_join(header, payload + b"\0" * 8))


def test_payload_is_little_endian_float64(tiny_model):
    header, payload = _split(to_bytes(tiny_model))
    first = header["tensors"][0]
    values = np.frombuffer(payload[: first["count"] * 8], dtype="<f8")
    assert np.array_equal(values, tiny_model.params[first["name"]].reshape(-1))
