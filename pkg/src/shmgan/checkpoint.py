"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"WDCG" | u32 version | u64 header length | JSON header | float64 blobs

The header lists every blob (model tensors, then optimizer moments) with
its name and shape, in the order the blobs follow.
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import AdamWState

MAGIC = b"WDCG"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str                      # "gan" or "classifier"
    config: dict
    arch: dict[str, dict] = field(default_factory=dict)
    weights: dict[str, "OrderedDict[str, np.ndarray]"] = field(default_factory=dict)
    optimizers: dict[str, AdamWState] = field(default_factory=dict)
    rng_state: dict | None = None
    extra: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    blobs: list[np.ndarray] = []
    models = {}
    # blobs follow the header, whose keys are sorted on dump
    for name, state in sorted(ckpt.weights.items()):
        entries = []
        for tname, arr in state.items():
            entries.append([tname, list(arr.shape)])
            blobs.append(arr)
        models[name] = {"arch": ckpt.arch.get(name), "tensors": entries}
    optims = {}
    for name, st in sorted(ckpt.optimizers.items()):
        optims[name] = {"hyper": st.hyper(), "step_count": st.step_count,
                        "shapes": [list(m.shape) for m in st.first_moment]}
        blobs.extend(st.first_moment)
        blobs.extend(st.second_moment)
    header = {"kind": ckpt.kind, "config": ckpt.config, "models": models,
              "optimizers": optims, "rng_state": ckpt.rng_state, "extra": ckpt.extra}
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(raw)))
        fh.write(raw)
        for b in blobs:
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return path


def load_checkpoint(path, expect_kind: str | None = None) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"{path}: checkpoint not found")
    buf = path.read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes {buf[:4]!r}")
    version, hlen = struct.unpack_from("<IQ", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = 4 + struct.calcsize("<IQ")
    header = json.loads(buf[start:start + hlen])
    offset = start + hlen

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).astype(np.float64)
        offset += 8 * count
        return arr.reshape(shape)

    ckpt = Checkpoint(kind=header["kind"], config=header["config"],
                      rng_state=header.get("rng_state"), extra=header.get("extra", {}))
    if expect_kind is not None and ckpt.kind != expect_kind:
        raise CheckpointError(f"{path}: expected a {expect_kind} checkpoint, found {ckpt.kind}")
    for name, m in header["models"].items():
        ckpt.arch[name] = m["arch"]
        ckpt.weights[name] = OrderedDict((tname, take(shape)) for tname, shape in m["tensors"])
    for name, o in header["optimizers"].items():
        st = AdamWState(**o["hyper"], step_count=o["step_count"])
        st.first_moment = [take(s) for s in o["shapes"]]
        st.second_moment = [take(s) for s in o["shapes"]]
        ckpt.optimizers[name] = st
    if offset != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - offset} trailing bytes")
    return ckpt
