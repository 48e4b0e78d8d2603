"""Slot-based upload simulator with drop-on-deadline.

Each segment gets exactly one slot of ``T`` seconds at a constant bandwidth. If
the segment cannot be uploaded within the slot it is aborted at the boundary and
the next segment starts on schedule; nothing carries over between slots.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .errors import ParameterError


class Status(str, enum.Enum):
    DELIVERED = "delivered"
    DROPPED = "dropped"


@dataclass(frozen=True)
class TransmissionOutcome:
    segment_id: int
    status: Status
    upload_time: float | None
    bytes_offered: float  # MB
    bandwidth: float      # MB/s

    @property
    def delivered(self) -> bool:
        return self.status is Status.DELIVERED


@dataclass
class StreamSession:
    segment_duration: float = 1.0
    clock: float = 0.0
    ledger: list[TransmissionOutcome] = field(default_factory=list)

    def __post_init__(self):
        if not self.segment_duration > 0:
            raise ParameterError("segment_duration must be positive")

    def step(self, segment_size: float, bandwidth: float) -> TransmissionOutcome:
        if not bandwidth > 0:
            raise ParameterError(f"bandwidth must be positive, got {bandwidth!r}")
        if not segment_size >= 0:
            raise ParameterError(f"segment size must be non-negative, got {segment_size!r}")
        T = self.segment_duration
        sid = len(self.ledger)
        if segment_size <= bandwidth * T:
            # min() only guards the last ulp when size == bandwidth * T
            outcome = TransmissionOutcome(sid, Status.DELIVERED, min(segment_size / bandwidth, T),
                                          segment_size, bandwidth)
        else:
            outcome = TransmissionOutcome(sid, Status.DROPPED, None, segment_size, bandwidth)
        self.ledger.append(outcome)
        self.clock = len(self.ledger) * T
        return outcome

    @property
    def n_delivered(self) -> int:
        return sum(o.delivered for o in self.ledger)

    @property
    def n_dropped(self) -> int:
        return len(self.ledger) - self.n_delivered


def step(session: StreamSession, segment_size: float, bandwidth: float) -> TransmissionOutcome:
    return session.step(segment_size, bandwidth)
