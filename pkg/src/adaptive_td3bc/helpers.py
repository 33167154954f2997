"""Helper functions shared across the adaptive_td3bc package."""
from typing import Dict
from typing import Tuple
from typing import Type

import numpy as np

from adaptive_td3bc.exceptions import ContainerFormatError


STREAM_NAMES = (
    "init",
    "env",
    "exploration",
    "minibatch",
    "ensemble",
    "smoothing",
    "eval",
    "replay",
)
HEADER_END = "END"


def derive_seed(seed: int, *keys: int) -> int:
    """Derive an independent 32-bit seed from a master seed and integer keys."""
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=tuple(keys))
    return int(sequence.generate_state(1)[0])


class RngStreams:
    """Named random streams split from one master seed.

    Every consumer of randomness (initialization, environment resets,
    exploration noise, minibatch indices, ensemble subsets, target smoothing,
    evaluation, replay downsampling) draws from its own stream, so changing
    one ablation knob only perturbs the streams it touches.
    """

    def __init__(self, seed: int) -> None:
        """Split ``seed`` into one generator per stream name."""
        self.seed = seed
        self._generators = {
            name: np.random.default_rng(
                np.random.SeedSequence(entropy=seed, spawn_key=(index,))
            )
            for index, name in enumerate(STREAM_NAMES)
        }

    def __getitem__(self, name: str) -> np.random.Generator:
        """Return the generator of stream ``name``."""
        return self._generators[name]


def encode_header(magic: str, fields: Dict[str, str]) -> bytes:
    """Encode a text header: magic line, ``key = value`` lines, end marker."""
    lines = [magic]
    for key, value in fields.items():
        if "\n" in value or "\n" in key:
            raise ValueError(f"Header field {key!r} must be a single line")
        lines.append(f"{key} = {value}")
    lines.append(HEADER_END)
    return ("\n".join(lines) + "\n").encode("utf-8")


def decode_header(
    buffer: bytes,
    offset: int,
    magic: str,
    error_cls: Type[ContainerFormatError] = ContainerFormatError,
) -> Tuple[Dict[str, str], int]:
    """Decode a header written by :func:`encode_header` starting at ``offset``.

    Returns the fields and the offset of the first byte after the header.
    """
    fields: Dict[str, str] = {}
    position = offset
    first = True
    while True:
        end = buffer.find(b"\n", position)
        if end < 0:
            raise error_cls("Truncated header: no end marker found")
        try:
            line = buffer[position:end].decode("utf-8")
        except UnicodeDecodeError as error:
            raise error_cls(f"Header is not valid UTF-8: {error}") from error
        position = end + 1
        if first:
            if line != magic:
                raise error_cls(f"Bad magic line {line[:40]!r}, expected {magic!r}")
            first = False
            continue
        if line == HEADER_END:
            return fields, position
        key, sep, value = line.partition(" = ")
        if not sep:
            raise error_cls(f"Malformed header line {line!r}")
        fields[key] = value


def pack_array(array: np.ndarray, dtype: str = "<f4") -> bytes:
    """Serialize an array row-major in the given little-endian dtype."""
    return np.ascontiguousarray(array, dtype=np.dtype(dtype)).tobytes(order="C")


def unpack_array(
    buffer: bytes,
    offset: int,
    shape: Tuple[int, ...],
    dtype: str = "<f4",
    error_cls: Type[ContainerFormatError] = ContainerFormatError,
) -> Tuple[np.ndarray, int]:
    """Read an array written by :func:`pack_array`; returns it and the next offset."""
    item = np.dtype(dtype)
    count = int(np.prod(shape)) if shape else 1
    end = offset + count * item.itemsize
    if end > len(buffer):
        raise error_cls(
            f"Truncated payload: need {end - offset} bytes, have {len(buffer) - offset}"
        )
    array = np.frombuffer(buffer, dtype=item, count=count, offset=offset)
    return array.reshape(shape).copy(), end


def require_field(
    fields: Dict[str, str],
    key: str,
    error_cls: Type[ContainerFormatError] = ContainerFormatError,
) -> str:
    """Fetch a mandatory header field."""
    try:
        return fields[key]
    except KeyError:
        raise error_cls(f"Header is missing field {key!r}") from None
