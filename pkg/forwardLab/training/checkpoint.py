"""
Versioned binary checkpoints.

Layout (all integers little-endian)::

    magic        8 bytes   b"FWDLAB\\x00\\x01"
    version      u16
    arch hash    32 bytes  raw SHA-256 of the parameter-shaping architecture
    meta length  u32, then that many bytes of UTF-8 JSON (epoch, step, config, optimizer scalars,
                 RNG states, fusion logits)
    records      u32 count, then per record:
                 section u8 (0 parameter, 1 buffer, 2 optimizer), name length u16, name (UTF-8),
                 dtype u8 (0 f8, 1 f4), ndim u8, ndim x u32 dims, raw little-endian data

Records keep the run's storage dtype: float64 runs write `f8`, float32 runs `f4`, and a load restores the
exact bits in either case.

Files are written to a sibling temporary file and moved into place.
"""

import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from engine.exceptions import CheckpointError

from .config import arch_hash, config_to_dict, parse_config
from .fusion import FusionHead
from .trainer import build_state


logger = logging.getLogger(__name__)

MAGIC = b"FWDLAB\x00\x01"
VERSION = 1
CHECKPOINT_NAME = 'checkpoint.fwl'

PARAMETER, BUFFER, OPTIMIZER = 0, 1, 2
SECTIONS = (PARAMETER, BUFFER, OPTIMIZER)
DTYPE_CODES = {0: np.dtype('<f8'), 1: np.dtype('<f4')}
CODE_FOR_ITEMSIZE = {8: 0, 4: 1}


@dataclass
class Checkpoint:
    """Decoded contents of a checkpoint file."""

    arch_hash: str
    meta: dict
    parameters: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)

    @property
    def epoch(self):
        return self.meta.get('epoch', 0)

    @property
    def fusion(self):
        alpha = self.meta.get('fusion_alpha')
        return FusionHead(alpha=np.asarray(alpha, dtype=np.float64)) if alpha is not None else None


def _encode_record(section, name, array):
    array = np.asarray(array)
    code = CODE_FOR_ITEMSIZE.get(array.dtype.itemsize) if array.dtype.kind == 'f' else None
    if code is None:
        raise CheckpointError(f"{name}: unsupported dtype {array.dtype}")
    encoded = name.encode('utf-8')
    header = struct.pack('<BH', section, len(encoded)) + encoded
    header += struct.pack('<BB', code, array.ndim) + struct.pack(f'<{array.ndim}I', *array.shape)
    return header + np.ascontiguousarray(array, dtype=DTYPE_CODES[code]).tobytes()


class _Reader:
    def __init__(self, payload, source):
        self.payload = payload
        self.offset = 0
        self.source = source

    def take(self, size, what):
        end = self.offset + size
        if end > len(self.payload):
            raise CheckpointError(f"{self.source}: truncated while reading {what}")
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def _rng_states(rngs):
    return {name: rng.bit_generator.state for name, rng in rngs.items()}


def save_checkpoint(path, state, fusion=None):
    """
    Write a training state (and optionally a trained fusion head) to ``path``.

    Args:
        path (str | Path): Destination file.
        state (TrainState): Run to save.
        fusion (FusionHead | None): Fusion logits stored in the meta section.

    Returns:
        Path: The written file.
    """

    path = Path(path)
    meta = {
        'epoch': state.epoch,
        'step': state.step,
        'config': config_to_dict(state.arch, state.plan),
        'optimizers': [{'step': opt.step_count, 'lr': opt.lr} for opt in state.optimizers],
        'rng': _rng_states(state.rngs),
        'fusion_alpha': [float(a) for a in fusion.alpha] if fusion is not None else None,
    }
    records = []
    for name, param in state.network.named_parameters().items():
        records.append(_encode_record(PARAMETER, name, param.data))
    for name, buffer in state.network.named_buffers().items():
        records.append(_encode_record(BUFFER, name, buffer))
    for index, optimizer in enumerate(state.optimizers):
        for key, buffer in optimizer.state_dict()['buffers'].items():
            records.append(_encode_record(OPTIMIZER, f"{index}:{key}", buffer))

    meta_bytes = json.dumps(meta).encode('utf-8')
    blob = b''.join([
        MAGIC,
        struct.pack('<H', VERSION),
        bytes.fromhex(arch_hash(state.arch)),
        struct.pack('<I', len(meta_bytes)),
        meta_bytes,
        struct.pack('<I', len(records)),
        *records,
    ])

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + '.tmp')
    tmp.write_bytes(blob)
    os.replace(tmp, path)
    logger.info("Checkpoint written to %s (%s records, %s bytes)", path, len(records), len(blob))
    return path


def read_checkpoint(path, expected_hash=None):
    """
    Decode a checkpoint file.

    Raises:
        CheckpointError: On a bad magic, an unknown version, a hash other than ``expected_hash`` or a
            truncated record.
    """

    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint: {exc.strerror}") from None

    reader = _Reader(payload, path)
    if reader.take(len(MAGIC), 'magic') != MAGIC:
        raise CheckpointError(f"{path}: not a forwardLab checkpoint")
    (version,) = reader.unpack('<H', 'version')
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    stored_hash = reader.take(32, 'architecture hash').hex()
    if expected_hash is not None and stored_hash != expected_hash:
        raise CheckpointError(f"{path}: architecture hash {stored_hash[:12]} does not match {expected_hash[:12]}")
    (meta_length,) = reader.unpack('<I', 'meta length')
    try:
        meta = json.loads(reader.take(meta_length, 'meta').decode('utf-8'))
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt meta section: {exc}") from None

    checkpoint = Checkpoint(arch_hash=stored_hash, meta=meta)
    targets = {PARAMETER: checkpoint.parameters, BUFFER: checkpoint.buffers, OPTIMIZER: checkpoint.optimizer}
    (count,) = reader.unpack('<I', 'record count')
    for _ in range(count):
        section, name_length = reader.unpack('<BH', 'record header')
        if section not in SECTIONS:
            raise CheckpointError(f"{path}: unknown record section {section}")
        name = reader.take(name_length, 'record name').decode('utf-8')
        code, ndim = reader.unpack('<BB', name)
        if code not in DTYPE_CODES:
            raise CheckpointError(f"{path}: {name}: unknown dtype code {code}")
        shape = reader.unpack(f'<{ndim}I', name)
        dtype = DTYPE_CODES[code]
        size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        data = np.frombuffer(reader.take(size, name), dtype=dtype).reshape(shape)
        targets[section][name] = data.astype(dtype.newbyteorder('='))
    if reader.offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - reader.offset} trailing bytes after the last record")
    return checkpoint


def restore_state(checkpoint, arch, plan, dump_dir=None, counter=None):
    """
    Rebuild a `TrainState` from a checkpoint for the given configuration.

    Raises:
        CheckpointError: If the architecture or the stored tensors do not match.
    """

    expected = arch_hash(arch)
    if checkpoint.arch_hash != expected:
        raise CheckpointError(f"checkpoint was written for architecture {checkpoint.arch_hash[:12]}, "
                              f"configuration describes {expected[:12]}")
    state = build_state(arch, plan, dump_dir=dump_dir, counter=counter)
    params = state.network.named_parameters()
    missing = sorted(set(params) ^ set(checkpoint.parameters))
    if missing:
        raise CheckpointError(f"parameter sets differ: {', '.join(missing[:5])}")
    for name, param in params.items():
        param.assign(checkpoint.parameters[name])
    state.network.load_buffers(checkpoint.buffers)

    stored = checkpoint.meta.get('optimizers', [])
    if len(stored) != len(state.optimizers):
        raise CheckpointError(f"checkpoint holds {len(stored)} optimizers, the network needs "
                              f"{len(state.optimizers)}")
    for index, optimizer in enumerate(state.optimizers):
        prefix = f"{index}:"
        buffers = {key[len(prefix):]: value for key, value in checkpoint.optimizer.items() if key.startswith(prefix)}
        try:
            optimizer.load_state_dict({**stored[index], 'buffers': buffers})
        except KeyError as exc:
            raise CheckpointError(f"optimizer {index} is missing buffer {exc.args[0]}") from None

    for name, rng_state in checkpoint.meta.get('rng', {}).items():
        if name in state.rngs:
            state.rngs[name].bit_generator.state = rng_state
    state.epoch = checkpoint.epoch
    state.step = checkpoint.meta.get('step', 0)
    return state


def load_checkpoint(path, arch, plan, dump_dir=None, counter=None):
    """Read ``path`` and restore the run it holds; returns ``(state, fusion head or None)``."""

    checkpoint = read_checkpoint(path, expected_hash=arch_hash(arch))
    state = restore_state(checkpoint, arch, plan, dump_dir=dump_dir, counter=counter)
    logger.info("Restored %s at epoch %s", path, state.epoch)
    return state, checkpoint.fusion


def checkpoint_config(checkpoint, source=None, overrides=()):
    """The ``(ArchSpec, TrainPlan)`` a checkpoint was trained with."""

    config = checkpoint.meta.get('config')
    if not isinstance(config, dict):
        raise CheckpointError(f"{source or 'checkpoint'}: no configuration in the meta section")
    return parse_config(yaml.safe_dump(config, sort_keys=False), source=source, overrides=overrides)


def open_checkpoint(path, overrides=(), dump_dir=None, counter=None):
    """Restore a checkpoint using the configuration stored inside it; returns ``(state, fusion or None)``."""

    checkpoint = read_checkpoint(path)
    arch, plan = checkpoint_config(checkpoint, source=str(path), overrides=overrides)
    return restore_state(checkpoint, arch, plan, dump_dir=dump_dir, counter=counter), checkpoint.fusion
