from __future__ import annotations

import heapq
import itertools
from typing import Any


class EventQueue:
    """Priority queue ordered by (timestamp, insertion sequence)."""

    def __init__(self) -> None:
        self._heap: list[tuple[int, int, Any]] = []
        self._seq = itertools.count()

    def push(self, time: int, event: Any) -> None:
        if time < 0:
            raise ValueError("event time must be non-negative")
        heapq.heappush(self._heap, (time, next(self._seq), event))

    def pop(self) -> tuple[int, Any]:
        time, _, event = heapq.heappop(self._heap)
        return time, event

    def peek_time(self) -> int | None:
        return self._heap[0][0] if self._heap else None

    def pending(self) -> list[Any]:
        """Events still queued, in pop order."""
        return [event for _, _, event in sorted(self._heap)]

    def __len__(self) -> int:
        return len(self._heap)

    def __bool__(self) -> bool:
        return bool(self._heap)
