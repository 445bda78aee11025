"""Define the bit-exact checkpoint format for ModelParams."""
import hashlib
import logging
import os
from typing import List, Mapping, Tuple

import numpy as np

from .errors import CheckpointError
from .net import ModelParams

_LOGGER: logging.Logger = logging.getLogger(__name__)

MAGIC: str = "GLIMPSE-IQA-CHECKPOINT 1"
END: str = "END"
DTYPE: str = "float64"
CHECKSUM_BYTES: int = 8


def checksum(payload: bytes) -> bytes:
    """Return the 64-bit digest stored after the payload."""
    return hashlib.blake2b(payload, digest_size=CHECKSUM_BYTES).digest()


def dumps(params: Mapping[str, np.ndarray]) -> bytes:
    """Serialise parameters: text manifest, little-endian payloads, checksum."""
    lines = [MAGIC, str(len(params))]
    chunks = []
    for name, value in params.items():
        if any(ch.isspace() for ch in name):
            raise CheckpointError(f"Tensor name {name!r} contains whitespace")
        shape = ",".join(str(dim) for dim in value.shape)
        lines.append(f"{name} {DTYPE} {shape}")
        chunks.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    lines.append(END)
    payload = b"".join(chunks)
    return ("\n".join(lines) + "\n").encode("ascii") + payload + checksum(payload)


def loads(blob: bytes, source: str = "<checkpoint>") -> ModelParams:
    """Parse checkpoint bytes, refusing anything whose checksum does not match."""
    header_lines: List[str] = []
    offset = 0
    while True:
        newline = blob.find(b"\n", offset)
        if newline < 0:
            raise CheckpointError(f"{source}: truncated manifest")
        line = blob[offset:newline].decode("ascii", errors="replace")
        offset = newline + 1
        header_lines.append(line)
        if line == END:
            break
    if header_lines[0] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad header)")
    entries: List[Tuple[str, Tuple[int, ...]]] = []
    for line in header_lines[2:-1]:
        try:
            name, dtype, shape_text = line.split(" ")
            shape = tuple(int(dim) for dim in shape_text.split(",") if dim)
        except ValueError:
            raise CheckpointError(f"{source}: malformed manifest line {line!r}") from None
        if dtype != DTYPE:
            raise CheckpointError(f"{source}: unsupported dtype {dtype} for {name}")
        entries.append((name, shape))
    if str(len(entries)) != header_lines[1]:
        raise CheckpointError(f"{source}: manifest count does not match its entries")
    payload = blob[offset:-CHECKSUM_BYTES]
    if checksum(payload) != blob[-CHECKSUM_BYTES:]:
        raise CheckpointError(f"{source}: checksum mismatch, refusing to load")
    expected = sum(int(np.prod(shape)) * 8 for _, shape in entries)
    if len(payload) != expected:
        raise CheckpointError(f"{source}: payload holds {len(payload)} bytes, expected {expected}")
    params = ModelParams()
    cursor = 0
    for name, shape in entries:
        size = int(np.prod(shape)) * 8
        params[name] = np.frombuffer(payload[cursor : cursor + size], dtype="<f8").astype(
            np.float64
        ).reshape(shape)
        cursor += size
    return params


def save(params: Mapping[str, np.ndarray], path: str) -> None:
    """Write a checkpoint atomically."""
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fptr:
        fptr.write(dumps(params))
    os.replace(tmp, path)
    _LOGGER.info("Wrote checkpoint %s", path)


def load(path: str) -> ModelParams:
    """Read a checkpoint file."""
    try:
        with open(path, "rb") as fptr:
            blob = fptr.read()
    except OSError as err:
        raise CheckpointError(f"Cannot read checkpoint {path}: {err.strerror}") from None
    return loads(blob, source=path)


def diff_shapes(
    expected: Mapping[str, Tuple[int, ...]], actual: Mapping[str, Tuple[int, ...]]
) -> List[str]:
    """Describe every named tensor that is missing, extra or differently shaped."""
    lines = []
    for name, shape in expected.items():
        if name not in actual:
            lines.append(f"- {name} {shape}")
        elif tuple(actual[name]) != tuple(shape):
            lines.append(f"~ {name} expected {tuple(shape)} found {tuple(actual[name])}")
    for name, shape in actual.items():
        if name not in expected:
            lines.append(f"+ {name} {tuple(shape)}")
    return lines
