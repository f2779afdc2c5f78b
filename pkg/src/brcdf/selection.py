"""Partial-sharing selection patterns with circular-shift evolution."""
from dataclasses import dataclass
from math import gcd
import warnings

import numpy as np
import scipy.linalg as sla


@dataclass(frozen=True)
class SelectionSchedule:
    """Which ``l`` of the ``m`` estimate entries an agent shares at step ``k``.

    The pattern is kept as the sorted tuple of selected indices; ``step``
    counts the shifts applied since initialization.
    """

    m: int
    l: int
    tau: int
    indices: tuple
    step: int = 0

    def __post_init__(self):
        if not 1 <= self.l <= self.m:
            raise ValueError(f"l must satisfy 1 <= l <= m={self.m}, got {self.l}")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        idx = tuple(sorted(int(i) % self.m for i in self.indices))
        if len(set(idx)) != self.l:
            raise ValueError(f"pattern must select exactly l={self.l} distinct entries")
        object.__setattr__(self, "indices", idx)

    @property
    def p_e(self):
        return self.l / self.m

    @property
    def pattern(self):
        s = np.zeros(self.m, dtype=int)
        s[list(self.indices)] = 1
        return s

    def __str__(self):
        return "".join(map(str, self.pattern))

    def advance(self):
        return advance(self)

    def matrix(self):
        return selection_matrix(self)


def parse_pattern(text):
    text = text.strip()
    if not text or set(text) - {"0", "1"}:
        raise ValueError(f"pattern must be a 0/1 string, got {text!r}")
    return np.array([int(c) for c in text])


def init_schedule(m, l, tau=1, pattern=None, rng=None):
    """Schedule at ``k = 0``.

    ``pattern`` may be a 0/1 sequence or string. Without it, a uniformly random
    ``l``-subset is drawn from ``rng`` (a ``numpy.random.Generator`` or seed).
    """
    if not 1 <= l <= m:
        raise ValueError(f"l must satisfy 1 <= l <= m={m}, got {l}")
    if l < m and gcd(tau, m) > 1:
        warnings.warn(
            f"gcd(tau={tau}, m={m}) > 1: entries are no longer covered uniformly",
            stacklevel=2,
        )
    if pattern is not None:
        s = parse_pattern(pattern) if isinstance(pattern, str) else np.asarray(pattern)
        if s.shape != (m,) or not np.isin(s, (0, 1)).all():
            raise ValueError(f"pattern must be a 0/1 vector of length {m}")
        if int(s.sum()) != l:
            raise ValueError(f"pattern has {int(s.sum())} ones, expected l={l}")
        idx = np.flatnonzero(s)
    else:
        rng = np.random.default_rng(rng)
        idx = rng.choice(m, size=l, replace=False)
    return SelectionSchedule(m, l, tau, tuple(idx.tolist()))


def advance(sched):
    """Right-circular shift of the diagonal by ``tau``."""
    shifted = tuple((i + sched.tau) % sched.m for i in sched.indices)
    return SelectionSchedule(sched.m, sched.l, sched.tau, shifted, sched.step + 1)


def selection_matrix(sched):
    return np.diag(sched.pattern.astype(float))


def network_selection(scheds):
    """Block-diagonal ``diag(S_1, ..., S_L)``."""
    ms = {s.m for s in scheds}
    if len(ms) != 1:
        raise ValueError("all schedules must share the same m")
    return sla.block_diag(*[selection_matrix(s) for s in scheds])


def pattern_sequence(scheds, horizon):
    """0/1 patterns for steps ``0..horizon-1``, shape ``(horizon, L, m)``."""
    out = np.empty((horizon, len(scheds), scheds[0].m), dtype=int)
    cur = list(scheds)
    for k in range(horizon):
        out[k] = [s.pattern for s in cur]
        cur = [advance(s) for s in cur]
    return out
