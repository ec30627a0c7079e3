"""Checkpoint serialization: a flat named-tensor table.

Layout: magic ``CTLW``, u32 version, u32 record count, then records
sorted by name. Each record is u16 name length, UTF-8 name, u8 rank,
rank u64 extents, then the raw little-endian float32 data in C order.
Sorting plus raw floats make save/load/save byte-identical.

Model parameters and buffers are stored under their module paths;
optimizer moments under ``adam/m/`` and ``adam/v/``; scalars such as the
step counter, class count, and the architecture digest live in
``__meta__/`` records.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"CTLW"
VERSION = 1

META_PREFIX = "__meta__/"
ADAM_M_PREFIX = "adam/m/"
ADAM_V_PREFIX = "adam/v/"


class CheckpointError(IOError):
    """Bad magic, version, truncation, or mismatched tensor shapes."""


def write_records(path, records):
    """records: dict name -> float-convertible numpy array (rank <= 4)."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(records)))
        for name in sorted(records):
            # asarray, not ascontiguousarray: the latter promotes rank-0
            # records to rank 1, and tobytes already copies in C order
            arr = np.asarray(records[name], dtype="<f4")
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise CheckpointError(f"record name too long: {name!r}")
            if arr.ndim > 4:
                raise CheckpointError(
                    f"record '{name}' has rank {arr.ndim} > 4")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<Q", extent))
            fh.write(arr.tobytes(order="C"))


def read_records(path):
    """Parse a checkpoint file into dict name -> float32 array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)
    if len(view) < 12:
        raise CheckpointError(f"{path}: truncated header")
    if bytes(view[:4]) != MAGIC:
        raise CheckpointError(f"{path}: bad magic {bytes(view[:4])!r}")
    version, count = struct.unpack_from("<II", view, 4)
    if version != VERSION:
        raise CheckpointError(
            f"{path}: unsupported version {version} (expected {VERSION})")
    offset = 12
    records = {}
    for _ in range(count):
        if offset + 2 > len(view):
            raise CheckpointError(f"{path}: truncated record header")
        (name_len,) = struct.unpack_from("<H", view, offset)
        offset += 2
        name = bytes(view[offset:offset + name_len]).decode("utf-8")
        offset += name_len
        if offset + 1 > len(view):
            raise CheckpointError(f"{path}: truncated record '{name}'")
        (rank,) = struct.unpack_from("<B", view, offset)
        offset += 1
        shape = []
        for _ in range(rank):
            (extent,) = struct.unpack_from("<Q", view, offset)
            offset += 8
            shape.append(extent)
        size = int(np.prod(shape)) if shape else 1
        end = offset + 4 * size
        if end > len(view):
            raise CheckpointError(f"{path}: truncated data for '{name}'")
        data = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
        records[name] = data.reshape(shape).copy()
        offset = end
    if offset != len(view):
        raise CheckpointError(f"{path}: {len(view) - offset} trailing bytes")
    return records


def collect_state(model, optimizer=None, arch_hash=None, extra_meta=None):
    """Build the record table for a model (and optionally its optimizer)."""
    records = {}
    for name, param in model.named_parameters():
        records[name] = param.data
    for name, buf in model.named_buffers():
        records[name] = buf.value
    if optimizer is not None:
        by_id = {id(p): n for n, p in model.named_parameters()}
        for p, m, v in zip(optimizer.params, optimizer._m, optimizer._v):
            name = by_id.get(id(p))
            if name is None:
                raise CheckpointError(
                    "optimizer tracks a parameter the model does not own")
            records[ADAM_M_PREFIX + name] = m
            records[ADAM_V_PREFIX + name] = v
        records[META_PREFIX + "adam_step"] = np.array(
            [optimizer.step_count], dtype=np.float32)
    if arch_hash is not None:
        records[META_PREFIX + "arch_hash"] = np.frombuffer(
            arch_hash, dtype=np.uint8).astype(np.float32)
    for key, value in (extra_meta or {}).items():
        records[META_PREFIX + key] = np.asarray(value, dtype=np.float32)
    return records


def save(path, model, optimizer=None, arch_hash=None, extra_meta=None):
    write_records(path, collect_state(model, optimizer, arch_hash,
                                      extra_meta))


def stored_arch_hash(records):
    arr = records.get(META_PREFIX + "arch_hash")
    if arr is None:
        return None
    return bytes(arr.astype(np.uint8).tobytes())


def meta_int(records, key, default=None):
    arr = records.get(META_PREFIX + key)
    if arr is None:
        return default
    return int(arr.reshape(-1)[0])


def apply_state(model, records, optimizer=None, expect_hash=None):
    """Load records into a model in place; shapes must match exactly."""
    for name, param in model.named_parameters():
        if name not in records:
            raise CheckpointError(f"checkpoint is missing parameter '{name}'")
        stored = records[name]
        if tuple(stored.shape) != tuple(param.data.shape):
            raise CheckpointError(
                f"parameter '{name}': checkpoint shape {stored.shape} does "
                f"not match model shape {param.data.shape}")
        param.data = stored.astype(param.data.dtype)
        param.grad = None
    for name, buf in model.named_buffers():
        if name not in records:
            raise CheckpointError(f"checkpoint is missing buffer '{name}'")
        stored = records[name]
        if tuple(stored.shape) != tuple(buf.value.shape):
            raise CheckpointError(
                f"buffer '{name}': checkpoint shape {stored.shape} does "
                f"not match model shape {buf.value.shape}")
        buf.value = stored.astype(buf.value.dtype)
    if expect_hash is not None:
        stored = stored_arch_hash(records)
        if stored is not None and stored != expect_hash:
            raise CheckpointError(
                "checkpoint was written under a different architecture "
                "configuration (hash mismatch)")
    if optimizer is not None:
        by_id = {id(p): n for n, p in model.named_parameters()}
        for i, p in enumerate(optimizer.params):
            name = by_id.get(id(p))
            m_key, v_key = ADAM_M_PREFIX + name, ADAM_V_PREFIX + name
            if m_key in records:
                optimizer._m[i] = records[m_key].astype(p.data.dtype)
                optimizer._v[i] = records[v_key].astype(p.data.dtype)
        optimizer.step_count = meta_int(records, "adam_step", 0)
