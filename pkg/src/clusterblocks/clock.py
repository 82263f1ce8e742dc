"""Injectable time source.

Every component that needs wall time takes a Clock so tests can fast-forward
through usage periods and sentinel ticks without sleeping.
"""

from __future__ import annotations

import threading
import time


class Clock:
    """Real wall clock (unix seconds)."""

    def now(self) -> float:
        return time.time()

    def sleep(self, seconds: float) -> None:
        time.sleep(seconds)


class FakeClock(Clock):
    """Manually advanced clock for tests and demos.

    sleep() advances the clock instead of blocking, so simulated shell
    `sleep` commands stay instant.
    """

    def __init__(self, start: float = 0.0):
        self._now = float(start)
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            return self._now

    def sleep(self, seconds: float) -> None:
        self.advance(seconds)

    def advance(self, seconds: float) -> float:
        if seconds < 0:
            raise ValueError("cannot advance a clock backwards")
        with self._lock:
            self._now += seconds
            return self._now
