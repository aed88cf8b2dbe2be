"""Fixed binary wire format for broadcast trajectory messages.

Layout (little-endian): magic byte 0xEB, version byte, agent id (u16),
epoch (u32), degree (u8), control-point count (u8), knot interval (f64 s),
start time (f64 s), count x 3 coordinates (f64 m), CRC-32 of all preceding
bytes.  The whole record must fit the 512-byte broadcast budget, which caps
the count at 20 control points.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from swarmplan.bspline import BSplineTrajectory

MAGIC = 0xEB
VERSION = 1
SIZE_BUDGET = 512

_HEADER = struct.Struct("<BBHIBBdd")
_CRC = struct.Struct("<I")

MAX_CONTROL_POINTS = (SIZE_BUDGET - _HEADER.size - _CRC.size) // 24


class MessageError(ValueError):
    """Malformed, corrupt, or oversized trajectory message."""


@dataclass(frozen=True)
class TrajectoryMessage:
    """Decoded broadcast record: who planned what, and when."""

    agent_id: int
    epoch: int
    trajectory: BSplineTrajectory

    def encode(self) -> bytes:
        return encode_message(self.trajectory, self.agent_id, self.epoch)


def encode_message(traj: BSplineTrajectory, agent_id: int, epoch: int) -> bytes:
    """Serialize a trajectory; raises MessageError beyond the size budget."""
    n = traj.num_control_points
    if n > MAX_CONTROL_POINTS:
        raise MessageError(
            f"{n} control points exceed the {SIZE_BUDGET}-byte budget "
            f"(max {MAX_CONTROL_POINTS}); shorten the planning horizon"
        )
    if not 0 <= agent_id < 1 << 16:
        raise MessageError(f"agent id {agent_id} does not fit u16")
    if not 0 <= epoch < 1 << 32:
        raise MessageError(f"epoch {epoch} does not fit u32")
    head = _HEADER.pack(
        MAGIC, VERSION, agent_id, epoch, traj.degree, n,
        traj.knot_interval, traj.start_time,
    )
    body = np.ascontiguousarray(traj.control_points, dtype="<f8").tobytes()
    payload = head + body
    return payload + _CRC.pack(zlib.crc32(payload))


def decode_message(data: bytes) -> TrajectoryMessage:
    """Parse and CRC-check a serialized record."""
    if len(data) < _HEADER.size + _CRC.size:
        raise MessageError(f"record too short ({len(data)} bytes)")
    magic, version, agent_id, epoch, degree, count, dt, start = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MessageError(f"bad magic byte 0x{magic:02x}")
    if version != VERSION:
        raise MessageError(f"unsupported version {version}")
    expected = _HEADER.size + 24 * count + _CRC.size
    if len(data) != expected:
        raise MessageError(f"length {len(data)} != expected {expected}")
    (crc,) = _CRC.unpack_from(data, expected - _CRC.size)
    if crc != zlib.crc32(data[: expected - _CRC.size]):
        raise MessageError("CRC mismatch, record corrupt")
    pts = np.frombuffer(data, dtype="<f8", count=3 * count, offset=_HEADER.size)
    traj = BSplineTrajectory(pts.reshape(count, 3), dt, start, degree)
    return TrajectoryMessage(agent_id=agent_id, epoch=epoch, trajectory=traj)


def clip_to_message(traj: BSplineTrajectory, agent_id: int, epoch: int) -> TrajectoryMessage:
    """Wrap a trajectory for broadcast, enforcing the size budget."""
    encode_message(traj, agent_id, epoch)  # validates size and ranges
    return TrajectoryMessage(agent_id=agent_id, epoch=epoch, trajectory=traj)
