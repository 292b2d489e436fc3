"""Binary wire format between the coordinator and subdomain workers.

Every message is a fixed header followed by ``nblocks`` blocks::

    header  <4sBBHiI   magic b"DDLM", kind, stage, reserved, iteration, nblocks
    block   <iQ        subdomain id, length
            payload    length little-endian float64 values

Text-carrying kinds (CONFIG, ERROR) store UTF-8 bytes in their single block
and ``length`` counts bytes instead of values.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"DDLM"
_HEADER = struct.Struct("<4sBBHiI")
_BLOCK = struct.Struct("<iQ")


class Kind(enum.IntEnum):
    CONFIG = 1
    READY = 2
    SCATTER = 3
    CONTRIB = 4
    SOLVE = 5
    COEFFS = 6
    DONE = 7
    ERROR = 8


class Stage(enum.IntEnum):
    NONE = 0
    TRACE = 1  # payload u_gamma: reply flux contributions A^s K^s+ B^s u
    FLUX = 2  # payload global flux vector: reply interface contributions
    RHS = 3  # no payload: as TRACE with F^s in place of B^s u


TEXT_KINDS = (Kind.CONFIG, Kind.ERROR)


class ProtocolError(RuntimeError):
    pass


@dataclass
class Message:
    kind: Kind
    stage: Stage = Stage.NONE
    iteration: int = 0
    blocks: list = field(default_factory=list)  # (sid, ndarray) or (sid, str)

    @property
    def text(self) -> str:
        return self.blocks[0][1]


def encode(msg: Message) -> bytes:
    parts = [_HEADER.pack(MAGIC, int(msg.kind), int(msg.stage), 0, int(msg.iteration), len(msg.blocks))]
    for sid, payload in msg.blocks:
        if msg.kind in TEXT_KINDS:
            raw = payload.encode("utf-8")
            parts.append(_BLOCK.pack(int(sid), len(raw)))
        else:
            arr = np.ascontiguousarray(payload, dtype="<f8").ravel()
            raw = arr.tobytes()
            parts.append(_BLOCK.pack(int(sid), arr.size))
        parts.append(raw)
    return b"".join(parts)


def decode(data: bytes) -> Message:
    view = memoryview(data)
    if len(view) < _HEADER.size:
        raise ProtocolError("truncated header")
    magic, kind, stage, _, iteration, nblocks = _HEADER.unpack_from(view, 0)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    kind, stage = Kind(kind), Stage(stage)
    off = _HEADER.size
    blocks = []
    for _ in range(nblocks):
        if off + _BLOCK.size > len(view):
            raise ProtocolError("truncated block header")
        sid, length = _BLOCK.unpack_from(view, off)
        off += _BLOCK.size
        nbytes = length if kind in TEXT_KINDS else 8 * length
        if off + nbytes > len(view):
            raise ProtocolError("truncated payload")
        chunk = view[off:off + nbytes]
        if kind in TEXT_KINDS:
            blocks.append((sid, bytes(chunk).decode("utf-8")))
        else:
            blocks.append((sid, np.frombuffer(chunk, dtype="<f8").astype(float)))
        off += nbytes
    if off != len(view):
        raise ProtocolError(f"{len(view) - off} trailing bytes")
    return Message(kind, stage, iteration, blocks)
