import asyncio
import collections
import time


class SlidingWindowLimiter:
    """At most ``rate`` acquisitions in any window of ``window`` seconds.

    Unlike a token bucket this never admits a burst of rate + 1 across a
    window boundary, so the bound can be checked directly against a send log.
    """

    def __init__(self, rate: float, window: float = 1.0, clock=time.monotonic):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.window = window
        # fractional rates widen the window instead of rounding the count
        self.limit = max(1, int(rate))
        if rate < 1:
            self.window = window / rate
        self._clock = clock
        self._sent = collections.deque()
        self._lock = asyncio.Lock()

    async def acquire(self) -> float:
        """Wait for a slot; returns the monotonic time the slot was taken."""
        async with self._lock:
            while True:
                now = self._clock()
                while self._sent and now - self._sent[0] >= self.window:
                    self._sent.popleft()
                if len(self._sent) < self.limit:
                    self._sent.append(now)
                    return now
                # small margin keeps log timestamps rounded to ms within bound
                await asyncio.sleep(self._sent[0] + self.window - now + 1e-3)
