"""Fibonacci LFSR used as the scrambling-index generator.

State bit ``i`` is ``(state >> i) & 1``. A tap of degree ``d`` reads state bit
``K - d``; the feedback bit enters at the top (bit ``K-1``) while the register
shifts right. With taps ``(6, 5)`` this realises x^6 + x^5 + 1.
"""
from __future__ import annotations

from dataclasses import dataclass

from .puf import ConfigurationError, ContractViolation

# Tap degrees of one primitive polynomial per width.
PRIMITIVE_TAPS: dict[int, tuple[int, ...]] = {
    2: (2, 1),
    3: (3, 2),
    4: (4, 3),
    5: (5, 3),
    6: (6, 5),
    7: (7, 6),
    8: (8, 6, 5, 4),
    9: (9, 5),
    10: (10, 7),
}

DEFAULT_TAPS = PRIMITIVE_TAPS[6]


@dataclass
class Lfsr:
    width: int
    taps: tuple[int, ...]
    state: int = 0

    def __post_init__(self):
        if self.width < 2:
            raise ConfigurationError("LFSR width must be at least 2")
        self.taps = tuple(sorted(set(int(t) for t in self.taps), reverse=True))
        if not self.taps or self.taps[0] != self.width or min(self.taps) < 1:
            raise ConfigurationError(
                f"taps {self.taps} must include the degree {self.width} and lie in 1..{self.width}")
        if not 0 <= self.state < (1 << self.width):
            raise ContractViolation(f"state {self.state} out of range for width {self.width}")

    @classmethod
    def for_width(cls, width: int, taps=None) -> "Lfsr":
        if taps is None:
            if width not in PRIMITIVE_TAPS:
                raise ConfigurationError(f"no shipped primitive polynomial for width {width}")
            taps = PRIMITIVE_TAPS[width]
        return cls(width, tuple(taps))

    def seed(self, s: int) -> "Lfsr":
        if not 0 <= s < (1 << self.width):
            raise ContractViolation(f"seed {s} does not fit in {self.width} bits")
        self.state = int(s)
        return self

    def clock(self) -> int:
        """Advance one step and return the new full state."""
        fb = 0
        for t in self.taps:
            fb ^= (self.state >> (self.width - t)) & 1
        self.state = (self.state >> 1) | (fb << (self.width - 1))
        return self.state

    def run(self, n: int) -> list[int]:
        return [self.clock() for _ in range(n)]
