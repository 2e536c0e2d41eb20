"""Binary checkpoints: a version header followed by length-prefixed named sections.

Layout (little endian)::

    b"TAACCKPT"  u32 version  u32 section_count
    repeated:    u32 name_len  name(utf-8)  u64 payload_len  payload

The ``meta`` section is UTF-8 JSON; every ``array:<name>`` section is an
``.npy`` payload.
"""
from __future__ import annotations

import io
import json
import struct

import numpy as np

MAGIC = b"TAACCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _npy_bytes(a):
    buf = io.BytesIO()
    np.save(buf, np.asarray(a), allow_pickle=False)
    return buf.getvalue()


def write_checkpoint(path, meta: dict, arrays: dict):
    sections = [("meta", json.dumps(meta, sort_keys=True).encode("utf-8"))]
    sections += [(f"array:{k}", _npy_bytes(v)) for k, v in sorted(arrays.items())]
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(sections)))
        for name, payload in sections:
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)) + nb + struct.pack("<Q", len(payload)))
            fh.write(payload)


def read_checkpoint(path):
    """Returns ``(meta, arrays)``; raises :class:`CheckpointError` on a malformed file."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError("truncated checkpoint")
        out = data[pos:pos + n]
        pos += n
        return out

    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    meta, arrays = None, {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (plen,) = struct.unpack("<Q", take(8))
        payload = take(plen)
        if name == "meta":
            meta = json.loads(payload.decode("utf-8"))
        elif name.startswith("array:"):
            arrays[name[6:]] = np.load(io.BytesIO(payload), allow_pickle=False)
        else:
            raise CheckpointError(f"unknown section {name!r}")
    if pos != len(data):
        raise CheckpointError("trailing bytes after the last section")
    if meta is None:
        raise CheckpointError("checkpoint has no meta section")
    return meta, arrays


# -- agent state ---------------------------------------------------------------
def agent_arrays(agent):
    """Parameters, target networks, temperatures and optimizer moments of an agent."""
    out = {f"param/{k}": v for k, v in agent.state_arrays().items()}
    for name, opt in agent.optimizers().items():
        for i, (m, v) in enumerate(zip(opt.m, opt.v)):
            out[f"opt/{name}/m/{i}"] = m
            out[f"opt/{name}/v/{i}"] = v
    return out


def optimizer_steps(agent):
    return {name: opt.t for name, opt in agent.optimizers().items()}


def restore_agent(agent, arrays, steps):
    """Copy checkpointed arrays into a freshly built agent of the same shape (in place)."""
    for k, dst in agent.state_arrays().items():
        src = arrays[f"param/{k}"]
        if src.shape != dst.shape:
            raise CheckpointError(f"shape mismatch for {k}: {src.shape} vs {dst.shape}")
        dst[...] = src
    for name, opt in agent.optimizers().items():
        for i, (m, v) in enumerate(zip(opt.m, opt.v)):
            m[...] = arrays[f"opt/{name}/m/{i}"]
            v[...] = arrays[f"opt/{name}/v/{i}"]
        opt.t = int(steps[name])
