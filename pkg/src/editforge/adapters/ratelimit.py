"""Call-rate limiter shared by remote adapters.

Clock and sleep are injectable so the spacing guarantee is testable with a
fake clock.
"""

from __future__ import annotations

import threading
import time
from typing import Callable


class RateLimiter:
    """Enforces a minimum interval of 1/rate seconds between acquisitions."""

    def __init__(
        self,
        rate_per_sec: float,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if rate_per_sec <= 0:
            raise ValueError("rate_per_sec must be positive")
        self.min_interval = 1.0 / rate_per_sec
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next_free: float | None = None

    def acquire(self) -> float:
        """Block until a slot is free; returns the acquisition time."""
        with self._lock:
            now = self._clock()
            if self._next_free is not None and now < self._next_free:
                self._sleep(self._next_free - now)
                now = max(self._clock(), self._next_free)
            self._next_free = now + self.min_interval
            return now
