"""Simulated time: integer ticks, explicitly advanced, never wall-clock.

Token expiry, transaction timestamps, and the cost model all read the
same clock, so an experiment's entire timeline is a deterministic
function of the configured costs.
"""

from __future__ import annotations


class SimClock:
    def __init__(self, start: int = 0):
        if start < 0:
            raise ValueError("clock cannot start below zero")
        self.now = start

    def advance(self, ticks: int) -> int:
        if ticks < 0:
            raise ValueError("clock cannot run backwards")
        self.now += ticks
        return self.now
