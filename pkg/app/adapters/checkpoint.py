"""Single-file checkpoints: length-prefixed JSON manifest, then raw float64 payloads."""

import json
import logging
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from ..core.config import ModelConfig
from ..core.errors import CheckpointError, ValidationError
from ..core.vocab import Vocabulary
from .bundle import ModelBundle
from .vision import VisionStub

logger = logging.getLogger(__name__)

FORMAT = "mdm-checkpoint/1"
_DTYPE = "<f8"
_HEADER = struct.Struct("<Q")


def encode_checkpoint(bundle: ModelBundle, stage: Optional[str] = None) -> bytes:
    """Serialize parameters in name order; equal bundles give equal bytes."""
    tensors = {}
    payloads = []
    offset = 0
    for name in sorted(bundle.params):
        data = np.ascontiguousarray(bundle.params[name], dtype=_DTYPE).tobytes()
        tensors[name] = {"shape": list(bundle.params[name].shape), "dtype": _DTYPE, "offset": offset}
        payloads.append(data)
        offset += len(data)

    manifest = {"format": FORMAT, "tensors": tensors, "metadata": {**bundle.metadata(), "stage": stage}}
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(len(header)) + header + b"".join(payloads)


def decode_checkpoint(blob: bytes) -> tuple[ModelBundle, dict]:
    """Rebuild a bundle from checkpoint bytes; returns (bundle, metadata)."""
    if len(blob) < _HEADER.size:
        raise CheckpointError("checkpoint is truncated before its header")
    (header_len,) = _HEADER.unpack_from(blob)
    body_start = _HEADER.size + header_len
    if len(blob) < body_start:
        raise CheckpointError("checkpoint is truncated inside its manifest")
    try:
        manifest = json.loads(blob[_HEADER.size:body_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"checkpoint manifest is not valid JSON: {e}") from e
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format')!r}")

    payload = memoryview(blob)[body_start:]
    params = {}
    try:
        for name, entry in manifest["tensors"].items():
            if entry["dtype"] != _DTYPE:
                raise CheckpointError(f"{name}: unsupported dtype {entry['dtype']}")
            shape = tuple(entry["shape"])
            count = int(np.prod(shape, dtype=np.int64))
            start, stop = entry["offset"], entry["offset"] + 8 * count
            if stop > len(payload):
                raise CheckpointError(f"{name}: payload is truncated")
            params[name] = np.frombuffer(payload[start:stop], dtype=_DTYPE).reshape(shape).copy()

        meta = manifest["metadata"]
        bundle = ModelBundle(
            ModelConfig(**meta["model"]),
            Vocabulary(**meta["vocab"]),
            VisionStub(**meta["vision"]),
            params,
        )
    except (KeyError, TypeError, ValidationError) as e:
        raise CheckpointError(f"malformed checkpoint: {e}") from e
    return bundle, meta


def save_checkpoint(path: Path, bundle: ModelBundle, stage: Optional[str] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(bundle, stage))
    logger.info("checkpoint written to %s", path)
    return path


def load_checkpoint(path: Path) -> tuple[ModelBundle, dict]:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    return decode_checkpoint(blob)
