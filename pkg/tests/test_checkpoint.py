import numpy as np
import pytest

from app.adapters.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from app.core.errors import CheckpointError


def test_save_and_load(tmp_path, tiny_bundle):
    path = save_checkpoint(tmp_path / "model.ckpt", tiny_bundle, "ALIGN")
    loaded, meta = load_checkpoint(path)
    assert meta["stage"] == "ALIGN"
    assert loaded.cfg == tiny_bundle.cfg
    assert loaded.vocab == tiny_bundle.vocab
    assert loaded.checksums() == tiny_bundle.checksums()
    for name, value in tiny_bundle.params.items():
        np.testing.assert_array_equal(loaded.params[name], value)


def test_encoding_is_deterministic(tiny_bundle):
    assert encode_checkpoint(tiny_bundle, "INSTRUCT") == encode_checkpoint(tiny_bundle, "INSTRUCT")


@pytest.mark.parametrize("cut", [4, 40, -8])
def test_truncated(tiny_bundle, cut):
    blob = encode_checkpoint(tiny_bundle)
    with pytest.raises(CheckpointError):
        decode_checkpoint(blob[:cut])


def test_wrong_format(tiny_bundle):
    blob = encode_checkpoint(tiny_bundle).replace(b"mdm-checkpoint/1", b"xyz-checkpoint/1")
    with pytest.raises(CheckpointError):
        decode_checkpoint(blob)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.ckpt")
