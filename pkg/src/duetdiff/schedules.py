"""Noise-level, remasking, and learning-rate schedules plus a Sobol engine.

Training draws its masking ratio from a quasi-random progress variable so
noise levels stratify evenly across a batch; inference walks a decreasing
trajectory of the same ratio function.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

log = logging.getLogger(__name__)

SCHEDULE_KINDS = ("cosine", "linear", "power")

# Mask ratios below this floor are clamped so the 1/(t*T) loss weight
# stays bounded.
RATIO_FLOOR = 1e-3

_SOBOL_BITS = 32
_SOBOL_SCALE = 1.0 / (1 << _SOBOL_BITS)


class SobolEngine:
    """One-dimensional Sobol sequence in Gray-code order.

    The first dimension of the standard primitive-polynomial construction
    has direction integers v_k = 2^(bits-k); successive points are produced
    by XOR-ing the direction integer selected by the lowest zero bit of the
    counter. The leading zero point is skipped, so the first draws are
    0.5, 0.75, 0.25, 0.375, ...
    """

    def __init__(self, index=0):
        if index < 0:
            raise ValueError(f"SobolEngine: index must be >= 0, got {index}")
        self._directions = [1 << (_SOBOL_BITS - k) for k in range(1, _SOBOL_BITS + 1)]
        self.index = 0
        self.value = 0
        for _ in range(index):
            self.next()

    def next(self):
        """Next point in [0, 1)."""
        c = 0
        n = self.index
        while n & 1:
            n >>= 1
            c += 1
        if c >= _SOBOL_BITS:
            log.warning("SobolEngine: 32-bit counter wrapped, restarting sequence")
            self.index = 0
            self.value = 0
            return self.next()
        self.value ^= self._directions[c]
        self.index += 1
        return self.value * _SOBOL_SCALE


def sobol_next(state):
    return state.next()


@dataclass
class MaskSchedule:
    """Maps progress r in [0, 1] to a mask ratio t in (0, 1]."""

    kind: str = "cosine"
    power_exponent: float = 2.0
    floor: float = RATIO_FLOOR

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(
                f"MaskSchedule: kind must be one of {SCHEDULE_KINDS}, got {self.kind!r}"
            )

    def mask_ratio(self, r):
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"mask_ratio: progress must be in [0, 1], got {r}")
        if self.kind == "cosine":
            raw = math.cos(math.pi * r / 2.0)
        elif self.kind == "linear":
            raw = 1.0 - r
        else:
            raw = (1.0 - r) ** self.power_exponent
        return max(self.floor, raw)

    def remask_trajectory(self, n_steps):
        """Decreasing ratios [t_N, ..., t_0] with t_N = 1 and t_0 = 0.

        Entry j is mask_ratio(j / N); the final entry is forced to exactly
        zero. Runs that collapse onto the ratio floor are re-spread by
        linear interpolation so the trajectory stays strictly decreasing.
        """
        if n_steps < 1:
            raise ValueError(f"remask_trajectory: need n_steps >= 1, got {n_steps}")
        traj = [self.mask_ratio(j / n_steps) for j in range(n_steps)]
        traj.append(0.0)
        for j in range(1, n_steps):
            if traj[j] >= traj[j - 1]:
                # Flat tail at the floor: interpolate down to the final 0.
                run = n_steps - (j - 1)
                for k in range(j, n_steps):
                    traj[k] = traj[j - 1] * (n_steps - k) / run
                break
        return traj


@dataclass
class LrSchedule:
    """Linear warmup to base_lr followed by half-cosine decay to zero."""

    base_lr: float = 1e-5
    warmup_steps: int = 10000
    total_steps: int = 190000

    def __post_init__(self):
        if self.total_steps <= self.warmup_steps:
            raise ValueError(
                f"LrSchedule: total_steps ({self.total_steps}) must exceed "
                f"warmup_steps ({self.warmup_steps})"
            )
        if self.warmup_steps <= 0:
            raise ValueError(
                f"LrSchedule: warmup_steps must be positive, got {self.warmup_steps}"
            )

    def lr_at(self, step):
        if step < 0:
            raise ValueError(f"lr_at: step must be >= 0, got {step}")
        if step <= self.warmup_steps:
            return self.base_lr * step / self.warmup_steps
        if step >= self.total_steps:
            return 0.0
        progress = (step - self.warmup_steps) / (self.total_steps - self.warmup_steps)
        return self.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
