# SPDX-License-Identifier: MIT

"""Binary checkpoint container.

All integers are little-endian u32, strings are u32 length + UTF-8::

    b'MLCV'  version
    meta_count   (key, value) * meta_count
    tensor_count (name, ndim, dim * ndim, float32 payload) * tensor_count
    crc32 of everything above
"""

import logging
import struct
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple, Union

import numpy as np

from ._config import ModelConfig, config_hash, format_model_config, \
    parse_model_config
from ._constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from ._exceptions import CheckpointError, ConfigError
from ._network import Network

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_U32 = struct.Struct('<I')


@dataclass(frozen=True)
class Checkpoint:
    tensors: Dict[str, np.ndarray]
    meta: Dict[str, str] = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION


def _put_str(out: bytearray, text: str) -> None:
    data = text.encode('utf-8')
    out += _U32.pack(len(data))
    out += data


def encode_checkpoint(tensors: Mapping[str, np.ndarray],
                      meta: Optional[Mapping[str, str]] = None) -> bytes:
    meta = meta or {}
    out = bytearray(CHECKPOINT_MAGIC)
    out += _U32.pack(CHECKPOINT_VERSION)
    out += _U32.pack(len(meta))
    for key, value in meta.items():
        _put_str(out, str(key))
        _put_str(out, str(value))
    out += _U32.pack(len(tensors))
    for name, tensor in tensors.items():
        array = np.asarray(tensor, dtype='<f4')
        _put_str(out, name)
        out += _U32.pack(array.ndim)
        for dim in array.shape:
            out += _U32.pack(dim)
        out += array.tobytes(order='C')
    out += _U32.pack(zlib.crc32(bytes(out)))
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, size: int, what: str) -> bytes:
        end = self.pos + size
        if end > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint: {what} at offset {self.pos} needs "
                f"{size} bytes, {len(self.data) - self.pos} left")
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]

    def string(self, what: str) -> str:
        raw = self.take(self.u32(what), what)
        try:
            return raw.decode('utf-8')
        except UnicodeDecodeError as e:
            raise CheckpointError(f"{what} is not valid UTF-8", inner=e)


def decode_checkpoint(data: bytes) -> Checkpoint:
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {data[:4]!r}, "
                              f"expected {CHECKPOINT_MAGIC!r}")
    if len(data) < 12:
        raise CheckpointError("truncated checkpoint")
    body, (stored_crc,) = data[:-4], _U32.unpack(data[-4:])
    reader = _Reader(body)
    reader.take(4, "magic")
    version = reader.u32("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, "
                              f"expected {CHECKPOINT_VERSION}")
    if zlib.crc32(body) != stored_crc:
        raise CheckpointError("checksum mismatch, the file is corrupted")

    meta: Dict[str, str] = OrderedDict()
    for _ in range(reader.u32("metadata count")):
        key = reader.string("metadata key")
        meta[key] = reader.string("metadata value")

    tensors: Dict[str, np.ndarray] = OrderedDict()
    for _ in range(reader.u32("tensor count")):
        name = reader.string("tensor name")
        if name in tensors:
            raise CheckpointError(f"duplicate tensor {name!r}")
        shape = tuple(reader.u32(f"{name} shape")
                      for _ in range(reader.u32(f"{name} rank")))
        count = int(np.prod(shape, dtype=np.int64))
        payload = reader.take(4 * count, f"{name} payload")
        tensors[name] = np.frombuffer(payload, dtype='<f4') \
            .reshape(shape).astype(np.float32)
    if reader.pos != len(body):
        raise CheckpointError(
            f"{len(body) - reader.pos} trailing bytes after the tensor table")
    return Checkpoint(tensors, meta, version)


def save_checkpoint(tensors: Mapping[str, np.ndarray],
                    meta: Optional[Mapping[str, str]],
                    path: PathLike) -> Path:
    path = Path(path)
    data = encode_checkpoint(tensors, meta)
    try:
        path.write_bytes(data)
    except OSError as e:
        raise CheckpointError(f"cannot write {path}", inner=e)
    logger.info("saved %d tensors (%d bytes) to %s", len(tensors), len(data),
                path)
    return path


def load_checkpoint(path: PathLike) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read {path}", inner=e)
    return decode_checkpoint(data)


# networks ####################################################################

def network_meta(network: Network, epoch: int, seed: int) -> Dict[str, str]:
    return OrderedDict([('config', format_model_config(network.config)),
                        ('config_hash', config_hash(network.config)),
                        ('epoch', str(epoch)),
                        ('seed', str(seed))])


def save_network(network: Network, path: PathLike, epoch: int = 0,
                 seed: int = 0) -> Path:
    return save_checkpoint(network.state_dict(),
                           network_meta(network, epoch, seed), path)


def checkpoint_config(checkpoint: Checkpoint) -> ModelConfig:
    text = checkpoint.meta.get('config')
    if text is None:
        raise CheckpointError("the checkpoint carries no network config")
    try:
        return parse_model_config(text)
    except ConfigError as e:
        raise CheckpointError("the stored network config is invalid",
                              inner=e)


def load_network(path: PathLike, config: Optional[ModelConfig] = None,
                 dtype=np.float32) -> Tuple[Network, Checkpoint]:
    """Rebuilds the network a checkpoint was saved from. A given `config`
    must hash the same as the stored one."""
    checkpoint = load_checkpoint(path)
    if config is None:
        config = checkpoint_config(checkpoint)
    else:
        stored = checkpoint.meta.get('config_hash')
        # hash of the config after scheme resolution, as Network stores it
        own = config_hash(Network(config, initialize=False).config)
        if stored is not None and stored != own:
            raise CheckpointError(
                f"config hash {own} does not match the checkpoint's "
                f"{stored}")
    network = Network(config, dtype=dtype, initialize=False)
    network.load_state_dict(checkpoint.tensors)
    return network, checkpoint
