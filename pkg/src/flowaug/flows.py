"""Core flow types: packets, labeled flows and the fixed 6 x 20 matrix layout."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import FlowValidationError

MAX_PACKETS = 20
PORT_MAX = 65535

# Row order of FlowMatrix: numerical block, then sequential block (feature table order).
FEATURES = (
    "src_port",
    "dst_port",
    "inter_arrival_time",
    "payload_length",
    "direction",
    "tcp_window_size",
)
N_FEATURES = len(FEATURES)
ROW = {name: i for i, name in enumerate(FEATURES)}


class Origin(str, enum.Enum):
    REAL = "real"
    GENERATED = "generated"
    OVERSAMPLED = "oversampled"


@dataclass(frozen=True, slots=True)
class PacketFeatures:
    """Header-derived features of one packet.

    ``direction`` is 1 for source -> destination and 0 for the reverse.
    ``tcp_window_size`` is 0 for UDP packets.
    """

    src_port: int
    dst_port: int
    inter_arrival_time: float
    payload_length: int
    direction: int
    tcp_window_size: int

    def __post_init__(self):
        for name in ("src_port", "dst_port"):
            port = getattr(self, name)
            if not 0 <= port <= PORT_MAX:
                raise FlowValidationError(f"{name}={port} outside [0, {PORT_MAX}]")
        if self.direction not in (0, 1):
            raise FlowValidationError(f"direction={self.direction} not in {{0, 1}}")
        if not self.inter_arrival_time >= 0:  # also rejects NaN
            raise FlowValidationError(f"inter_arrival_time={self.inter_arrival_time} is negative")
        if self.payload_length < 0:
            raise FlowValidationError(f"payload_length={self.payload_length} is negative")
        if self.tcp_window_size < 0:
            raise FlowValidationError(f"tcp_window_size={self.tcp_window_size} is negative")

    def as_tuple(self) -> tuple:
        return (
            self.src_port,
            self.dst_port,
            self.inter_arrival_time,
            self.payload_length,
            self.direction,
            self.tcp_window_size,
        )


@dataclass(frozen=True, slots=True)
class ClassLabel:
    id: int
    name: str


@dataclass(frozen=True, eq=False)
class FlowRecord:
    """One labeled flow of 1 to 20 packets.

    Equality is identity-based so that duplicated records stay distinguishable;
    use ``same_features`` to compare contents.
    """

    packets: tuple[PacketFeatures, ...]
    label: ClassLabel
    origin: Origin = Origin.REAL
    flow_id: str = ""

    def __post_init__(self):
        if not isinstance(self.packets, tuple):
            object.__setattr__(self, "packets", tuple(self.packets))
        n = len(self.packets)
        if not 1 <= n <= MAX_PACKETS:
            raise FlowValidationError(f"flow has {n} packets, expected 1..{MAX_PACKETS}")
        if self.packets[0].direction != 1:
            raise FlowValidationError("first packet must travel source -> destination")
        if not isinstance(self.origin, Origin):
            object.__setattr__(self, "origin", Origin(self.origin))

    def __len__(self):
        return len(self.packets)

    def same_features(self, other: "FlowRecord") -> bool:
        return self.label == other.label and self.packets == other.packets

    def directions(self) -> list[int]:
        return [p.direction for p in self.packets]


def to_matrix(flow: FlowRecord) -> np.ndarray:
    """Return the 6 x 20 float matrix of ``flow``; unused columns are zero."""
    out = np.zeros((N_FEATURES, MAX_PACKETS), dtype=np.float64)
    if flow.packets:
        out[:, : len(flow.packets)] = np.array([p.as_tuple() for p in flow.packets], dtype=np.float64).T
    return out


def from_matrix(
    matrix: np.ndarray,
    packet_count: int,
    label: ClassLabel,
    origin: Origin = Origin.REAL,
    flow_id: str = "",
) -> FlowRecord:
    """Inverse of :func:`to_matrix` given the true packet count."""
    matrix = np.asarray(matrix)
    if matrix.shape != (N_FEATURES, MAX_PACKETS):
        raise FlowValidationError(f"expected a {N_FEATURES}x{MAX_PACKETS} matrix, got {matrix.shape}")
    packets = []
    for j in range(packet_count):
        col = matrix[:, j]
        packets.append(
            PacketFeatures(
                src_port=int(col[0]),
                dst_port=int(col[1]),
                inter_arrival_time=float(col[2]),
                payload_length=int(col[3]),
                direction=int(col[4]),
                tcp_window_size=int(col[5]),
            )
        )
    return FlowRecord(tuple(packets), label, origin, flow_id)


def stack_flows(flows: Sequence[FlowRecord], length: int = MAX_PACKETS) -> tuple[np.ndarray, np.ndarray]:
    """Stack flows into a ``(N, length, 6)`` array plus a ``(N,)`` packet-count vector."""
    n = len(flows)
    data = np.zeros((n, length, N_FEATURES), dtype=np.float64)
    lengths = np.zeros(n, dtype=np.int64)
    for i, flow in enumerate(flows):
        k = min(len(flow.packets), length)
        lengths[i] = k
        data[i, :k] = [p.as_tuple() for p in flow.packets[:k]]
    return data, lengths


def make_flow(
    rows: Iterable[Sequence],
    label: ClassLabel,
    origin: Origin = Origin.REAL,
    flow_id: str = "",
) -> FlowRecord:
    """Build a flow from ``(src, dst, iat, payload, direction, window)`` rows."""
    packets = tuple(
        PacketFeatures(int(r[0]), int(r[1]), float(r[2]), int(r[3]), int(r[4]), int(r[5])) for r in rows
    )
    return FlowRecord(packets, label, origin, flow_id)
