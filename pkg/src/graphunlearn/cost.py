"""Time accounting for budgeted runs.

Two clocks share one interface: ``wall`` reads ``time.perf_counter`` and
``virtual`` converts the floating-point work recorded by the model kernels
into seconds at a fixed nominal throughput. The virtual clock makes budget
cut-offs, and therefore whole experiment tables, reproducible bit for bit.
"""
from __future__ import annotations

import contextvars
import time
from contextlib import contextmanager

NOMINAL_FLOPS_PER_SECOND = 1.0e9
CLOCKS = ("wall", "virtual")

_meters: contextvars.ContextVar[tuple] = contextvars.ContextVar("graphunlearn_meters", default=())


class FlopMeter:
    def __init__(self):
        self.flops = 0.0


def charge(flops: float) -> None:
    """Record ``flops`` of work against every active meter."""
    for m in _meters.get():
        m.flops += flops


@contextmanager
def metering():
    meter = FlopMeter()
    token = _meters.set(_meters.get() + (meter,))
    try:
        yield meter
    finally:
        _meters.reset(token)


class Stopwatch:
    """Elapsed time since construction on the chosen clock.

    A virtual stopwatch must be used inside ``with sw:`` so that it receives
    the work charged by the kernels.
    """

    def __init__(self, clock: str = "wall"):
        if clock not in CLOCKS:
            raise ValueError(f"unknown clock {clock!r}; expected one of {CLOCKS}")
        self.clock = clock
        self._meter = FlopMeter()
        self._token = None
        self._t0 = time.perf_counter()

    def __enter__(self):
        self._token = _meters.set(_meters.get() + (self._meter,))
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        _meters.reset(self._token)
        self._token = None
        return False

    def elapsed(self) -> float:
        if self.clock == "wall":
            return time.perf_counter() - self._t0
        return self._meter.flops / NOMINAL_FLOPS_PER_SECOND


class Budget:
    """A stopwatch with an optional limit and a look-ahead stopping rule.

    ``should_stop`` is called before each unit of work (an epoch); it refuses
    to start the next unit when the slowest unit so far would overrun the
    limit, so the total never exceeds the limit by more than timer jitter.
    The first unit always runs, since nothing is known about its cost yet.
    """

    def __init__(self, limit: float | None, clock: str = "wall"):
        self.limit = limit
        self.watch = Stopwatch(clock)
        self._last_mark = 0.0
        self._max_unit = 0.0
        self.exhausted = False

    def __enter__(self):
        self.watch.__enter__()
        return self

    def __exit__(self, *exc):
        return self.watch.__exit__(*exc)

    def elapsed(self) -> float:
        return self.watch.elapsed()

    def mark(self) -> None:
        """Close the current unit of work and remember its cost."""
        now = self.elapsed()
        self._max_unit = max(self._max_unit, now - self._last_mark)
        self._last_mark = now

    def should_stop(self) -> bool:
        if self.limit is None:
            return False
        now = self.elapsed()
        if now + self._max_unit > self.limit:
            self.exhausted = True
            return True
        return False
