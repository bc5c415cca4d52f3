import json

import numpy as np
import pytest

from weightmark import FormatError, load_model, save_model
from weightmark.modelio import read_manifest


def test_round_trip_bit_identical(base_model, tmp_path):
    save_model(base_model, tmp_path / "m")
    assert load_model(tmp_path / "m").equals(base_model)


def test_save_is_byte_deterministic(small_model, tmp_path):
    save_model(small_model, tmp_path / "a", metadata={"x": 1})
    save_model(small_model, tmp_path / "b", metadata={"x": 1})
    for f in ("manifest.json", "tensors.bin"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_manifest_layout(small_model, tmp_path):
    save_model(small_model, tmp_path / "m", metadata={"attack": {"attack": "prune"}})
    man = read_manifest(tmp_path / "m")
    assert man["dims"] == small_model.dims
    assert man["metadata"]["attack"]["attack"] == "prune"
    first, second = man["tensors"][:2]
    assert first == {"name": "W_e", "rows": 96, "cols": 16, "offset": 0}
    assert second["offset"] == 96 * 16 * 4
    raw = (tmp_path / "m" / "tensors.bin").read_bytes()
    np.testing.assert_array_equal(np.frombuffer(raw[:16 * 4], "<f4"), small_model.W_e[0])


def test_truncated_payload(base_model, tmp_path):
    save_model(base_model, tmp_path / "m")
    bin_path = tmp_path / "m" / "tensors.bin"
    bin_path.write_bytes(bin_path.read_bytes()[: -512 * 4])
    with pytest.raises(FormatError):
        load_model(tmp_path / "m")


def test_short_embedding_rows(small_model, tmp_path):
    # W_e declared 96x16 but only 96*15 values available before the next tensor
    save_model(small_model, tmp_path / "m")
    man_path = tmp_path / "m" / "manifest.json"
    man = json.loads(man_path.read_text())
    man["tensors"][0]["cols"] = 15
    man_path.write_text(json.dumps(man))
    with pytest.raises(FormatError):
        load_model(tmp_path / "m")


def test_extra_bytes(small_model, tmp_path):
    save_model(small_model, tmp_path / "m")
    bin_path = tmp_path / "m" / "tensors.bin"
    bin_path.write_bytes(bin_path.read_bytes() + b"\0\0\0\0")
    with pytest.raises(FormatError):
        load_model(tmp_path / "m")


def test_missing_tensor(small_model, tmp_path):
    save_model(small_model, tmp_path / "m")
    man_path = tmp_path / "m" / "manifest.json"
    man = json.loads(man_path.read_text())
    man["tensors"] = [t for t in man["tensors"] if t["name"] != "W_c"]
    man_path.write_text(json.dumps(man))
    with pytest.raises(FormatError):
        load_model(tmp_path / "m")


def test_empty_and_missing_files(tmp_path):
    (tmp_path / "e").mkdir()
    (tmp_path / "e" / "manifest.json").write_text("")
    with pytest.raises(FormatError):
        load_model(tmp_path / "e")
    with pytest.raises(FormatError):
        load_model(tmp_path / "absent")
