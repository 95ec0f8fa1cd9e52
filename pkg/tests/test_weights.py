import numpy as np
import pytest

from mdksim.config import LINEAR_LAYERS, ModelConfig
from mdksim.weights import (MAGIC, WeightFileError, generate_weights, load_model, read_tensors,
                            write_tensors)

SMALL = ModelConfig(n_layers=1, l_embed=16, n_heads=2, ffn_dim=32, vocab_size=20, max_seq_len=8)


def test_same_seed_byte_identical(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    generate_weights(SMALL, 3, a)
    generate_weights(SMALL, 3, b)
    assert a.read_bytes() == b.read_bytes()
    generate_weights(SMALL, 4, b)
    assert a.read_bytes() != b.read_bytes()


def test_round_trip(tmp_path):
    p = tmp_path / "w.bin"
    qm = generate_weights(SMALL, 0, p)
    back = load_model(p, SMALL)
    assert back.cfg == SMALL
    for la, lb in zip(qm.layers, back.layers):
        for name in LINEAR_LAYERS:
            assert np.array_equal(la.w[name].data, lb.w[name].data)
            assert la.w[name].scale == lb.w[name].scale
            assert np.array_equal(la.b[name], lb.b[name])
        assert la.act == lb.act
    assert np.array_equal(qm.wte, back.wte)


def test_scales_are_maxabs_over_127(tmp_path):
    p = tmp_path / "w.bin"
    generate_weights(SMALL, 0, p)
    t = read_tensors(p)
    for name, (arr, scale) in t.items():
        if name.endswith(".w"):
            assert int(np.abs(arr.astype(int)).max()) == 127
            assert scale > 0


def test_header_magic_checked(tmp_path):
    p = tmp_path / "w.bin"
    generate_weights(SMALL, 0, p)
    blob = bytearray(p.read_bytes())
    assert bytes(blob[:4]) == MAGIC
    blob[:4] = b"XXXX"
    p.write_bytes(bytes(blob))
    with pytest.raises(WeightFileError, match="magic"):
        load_model(p)


def test_corrupted_data_detected(tmp_path):
    p = tmp_path / "w.bin"
    generate_weights(SMALL, 0, p)
    blob = bytearray(p.read_bytes())
    blob[-5] ^= 0xFF
    p.write_bytes(bytes(blob))
    with pytest.raises(WeightFileError, match="checksum"):
        load_model(p)


def test_truncated_file(tmp_path):
    p = tmp_path / "w.bin"
    p.write_bytes(b"MD")
    with pytest.raises(WeightFileError):
        load_model(p)


def test_missing_file(tmp_path):
    with pytest.raises(WeightFileError):
        load_model(tmp_path / "nope.bin")


def test_config_mismatch(tmp_path):
    p = tmp_path / "w.bin"
    generate_weights(SMALL, 0, p)
    with pytest.raises(WeightFileError, match="does not match"):
        load_model(p, ModelConfig())


def test_wrong_scale_detected(tmp_path):
    p = tmp_path / "w.bin"
    generate_weights(SMALL, 0, p)
    t = read_tensors(p)
    arr, scale = t["layers.0.q.w"]
    t["layers.0.q.w"] = ((arr // 2).astype(np.int8), scale)
    write_tensors(p, t)
    with pytest.raises(WeightFileError, match="max-abs"):
        load_model(p)


def test_tensor_alignment_and_dtypes(tmp_path):
    p = tmp_path / "t.bin"
    src = {"a": (np.arange(3, dtype=np.int8), 0.5), "b": (np.ones((2, 3), dtype=np.float32), 1.0)}
    write_tensors(p, src)
    back = read_tensors(p)
    assert back["a"][0].dtype == np.int8 and back["a"][1] == 0.5
    assert np.array_equal(back["b"][0], src["b"][0])


def test_unsupported_dtype(tmp_path):
    with pytest.raises(WeightFileError):
        write_tensors(tmp_path / "t.bin", {"x": (np.zeros(2, dtype=np.int64), 1.0)})
