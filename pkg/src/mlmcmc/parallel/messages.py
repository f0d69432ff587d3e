"""Tagged messages exchanged between runtime roles and their binary framing.

Frame layout (all little-endian)::

    uint32  frame length (bytes after this field)
    uint8   tag
    uint64  sequence number (per sender/receiver pair)
    int64   sender process id
    int64   receiver process id
    ...     payload fields in the order given by SCHEMAS[tag]

Field codes: ``i`` int64, ``f`` float64, ``v`` float64 vector and ``n``
int64 vector; vectors are an int64 length followed by the elements.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Any, Dict, Tuple

import numpy as np


class Tag(enum.IntEnum):
    AssignGroup = 1
    ReassignGroup = 2
    EvaluateDensity = 3
    DensityResult = 4
    SampleRequest = 5
    SampleReady = 6
    SamplePayload = 7
    CollectRequest = 8
    CollectedStats = 9
    LoadReport = 10
    Shutdown = 11
    # answer to SampleReady; also sent unsolicited to wake a held controller
    SampleClaimed = 12


# request -> response pairs (AssignGroup, ReassignGroup, LoadReport and
# Shutdown are one-way notifications)
RESPONSES = {
    Tag.EvaluateDensity: Tag.DensityResult,
    Tag.SampleRequest: Tag.SamplePayload,
    Tag.SampleReady: Tag.SampleClaimed,
    Tag.CollectRequest: Tag.CollectedStats,
}

# requester kinds of a SampleRequest
CHAIN, COLLECTOR = 0, 1
# SamplePayload status
OK, NO_PROVIDER, CANCELLED = 0, 1, 2
# Shutdown reasons
DONE, FAILURE, TIMEOUT = 0, 1, 2
# EvaluateDensity targets
DENSITY, QOI = 0, 1
# DensityResult error marks
EVAL_OK, EVAL_NONFINITE = 0, 1
# LoadReport kinds
REPORT_CONTROLLER, REPORT_PHONEBOOK = 0, 1

_SAMPLE = (("level", "i"), ("chain", "i"), ("step", "i"), ("accepted", "i"), ("log_density", "f"),
           ("theta", "v"), ("qoi", "v"), ("coarse_qoi", "v"))

SCHEMAS: Dict[Tag, Tuple[Tuple[str, str], ...]] = {
    Tag.AssignGroup: (("group", "i"), ("level", "i"), ("chain", "i"), ("epoch", "i"), ("rank", "i"),
                      ("controller", "i"), ("members", "n"), ("quota", "i")),
    Tag.ReassignGroup: (("group", "i"), ("level", "i"), ("chain", "i"), ("epoch", "i")),
    Tag.EvaluateDensity: (("eval_id", "i"), ("level", "i"), ("what", "i"), ("theta", "v")),
    Tag.DensityResult: (("eval_id", "i"), ("error", "i"), ("value", "v")),
    Tag.SampleRequest: (("req_id", "i"), ("level", "i"), ("kind", "i"), ("epoch", "i"), ("remaining", "i")),
    Tag.SampleReady: (("epoch", "i"), ("eligible", "i")) + _SAMPLE,
    Tag.SamplePayload: (("req_id", "i"), ("status", "i"), ("provider", "i")) + _SAMPLE,
    Tag.SampleClaimed: (("reply_to", "i"), ("hold", "i")),
    Tag.CollectRequest: (("level", "i"), ("shard", "i"), ("quota", "i")),
    Tag.CollectedStats: (("level", "i"), ("shard", "i"), ("complete", "i"), ("count", "i"),
                         ("mean", "v"), ("m2", "v"), ("row_width", "i"), ("rows", "v")),
    Tag.LoadReport: (("kind", "i"), ("evaluations", "n"), ("runtimes", "v"), ("decisions", "v"),
                     ("samples", "i")),
    Tag.Shutdown: (("reason", "i"),),
}

_HEADER = struct.Struct("<IBQqq")
_I64 = struct.Struct("<q")
_F64 = struct.Struct("<d")


@dataclass(frozen=True)
class Message:
    tag: Tag
    sender: int
    receiver: int
    seq: int
    data: Dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, key):
        return self.data[key]


def _default(code: str):
    if code == "i":
        return 0
    if code == "f":
        return 0.0
    if code == "v":
        return np.zeros(0)
    return np.zeros(0, dtype=np.int64)


def normalize(tag: Tag, data: Dict[str, Any]) -> Dict[str, Any]:
    """Fill defaults, coerce types and reject unknown fields."""
    schema = SCHEMAS[tag]
    names = {n for n, _ in schema}
    extra = set(data) - names
    if extra:
        raise ValueError(f"unknown fields for {tag.name}: {sorted(extra)}")
    out = {}
    for name, code in schema:
        v = data.get(name)
        if v is None:
            out[name] = _default(code)
        elif code == "i":
            out[name] = int(v)
        elif code == "f":
            out[name] = float(v)
        elif code == "v":
            out[name] = np.array(v, dtype=float).reshape(-1)
        else:
            out[name] = np.array(v, dtype=np.int64).reshape(-1)
    return out


def encode(msg: Message) -> bytes:
    parts = []
    for name, code in SCHEMAS[msg.tag]:
        v = msg.data[name]
        if code == "i":
            parts.append(_I64.pack(v))
        elif code == "f":
            parts.append(_F64.pack(v))
        else:
            arr = np.ascontiguousarray(v, dtype="<f8" if code == "v" else "<i8")
            parts.append(_I64.pack(arr.shape[0]))
            parts.append(arr.tobytes())
    payload = b"".join(parts)
    length = _HEADER.size - 4 + len(payload)
    return _HEADER.pack(length, int(msg.tag), msg.seq, msg.sender, msg.receiver) + payload


def peek_header(frame: bytes) -> Tuple[Tag, int, int, int]:
    """(tag, seq, sender, receiver) of an encoded frame."""
    _, tag, seq, sender, receiver = _HEADER.unpack_from(frame, 0)
    return Tag(tag), seq, sender, receiver


def decode(frame: bytes) -> Message:
    length, tag, seq, sender, receiver = _HEADER.unpack_from(frame, 0)
    if length != len(frame) - 4:
        raise ValueError(f"frame length {length} does not match {len(frame) - 4} bytes")
    tag = Tag(tag)
    off = _HEADER.size
    data = {}
    for name, code in SCHEMAS[tag]:
        if code == "i":
            data[name] = _I64.unpack_from(frame, off)[0]
            off += 8
        elif code == "f":
            data[name] = _F64.unpack_from(frame, off)[0]
            off += 8
        else:
            n = _I64.unpack_from(frame, off)[0]
            off += 8
            dt = "<f8" if code == "v" else "<i8"
            data[name] = np.frombuffer(frame, dtype=dt, count=n, offset=off).astype(
                float if code == "v" else np.int64)
            off += 8 * n
    if off != len(frame):
        raise ValueError("trailing bytes in frame")
    return Message(tag, sender, receiver, seq, data)
