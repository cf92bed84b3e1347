"""The environment viewed from the server: age profiles and their dynamics.

A profile stores, per segment of the circle or the line, the absolute epoch
``w`` at which that region was last revealed.  The potential at clock t is
u(x) = w(x) - t <= 0, so advancing time is O(1): only the clock moves and
the stored epochs stay put.  Departures trigger an instantaneous reveal: an
exponential amount of accumulated intensity is explored symmetrically
around the server, the next target appears on the boundary of the explored
interval, and the interval's epoch is reset to the current clock.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass
from enum import Enum

from .engine import ModelConfig, RandomTape
from .geometry import norm_point

_WTOL = 1e-12
_MIN_SEG = 1e-14


class SimulationError(RuntimeError):
    """Internal dynamics produced an impossible configuration."""


class ContractViolation(SimulationError):
    """An operation was invoked on a state that violates its precondition."""


class Regime(Enum):
    IDLE = "idle"
    MOVING = "moving"
    SERVING = "serving"


# ---------------------------------------------------------------------------
# circle profiles


class CircleProfile:
    """Piecewise-constant reveal epochs on R/Z.

    Segment i covers [starts[i], starts[i+1]) with epoch values[i]; the last
    segment wraps around.  Canonical form keeps starts sorted, adjacent
    values distinct (merged otherwise) and no sub-1e-14 slivers.
    """

    __slots__ = ("clock", "starts", "values")

    def __init__(self, clock: float = 0.0, starts=None, values=None):
        self.clock = float(clock)
        if starts is None:
            starts, values = [0.0], [clock]
        if len(starts) != len(values) or not starts:
            raise ValueError("starts and values must be non-empty, same length")
        pairs = sorted((norm_point(s), float(v)) for s, v in zip(starts, values))
        self.starts = [p[0] for p in pairs]
        self.values = [p[1] for p in pairs]
        self._canonicalize()

    @classmethod
    def constant(cls, level: float, clock: float = 0.0) -> "CircleProfile":
        """Profile with u identically equal to ``level`` (level <= 0)."""
        if level > _WTOL:
            raise ValueError("potential level must be <= 0")
        return cls(clock=clock, starts=[0.0], values=[clock + level])

    def copy(self) -> "CircleProfile":
        out = CircleProfile.__new__(CircleProfile)
        out.clock = self.clock
        out.starts = list(self.starts)
        out.values = list(self.values)
        return out

    # -- canonical form

    def _canonicalize(self) -> None:
        starts, values = self.starts, self.values
        k = len(starts)
        if k == 1:
            return
        keep_s, keep_v = [], []
        for i in range(k):
            nxt = starts[i + 1] if i + 1 < k else starts[0] + 1.0
            if nxt - starts[i] < _MIN_SEG:
                continue  # sliver: absorbed by its neighbour
            if keep_v and values[i] == keep_v[-1]:
                continue  # merge equal adjacent
            keep_s.append(starts[i])
            keep_v.append(values[i])
        if not keep_s:
            keep_s, keep_v = [starts[0]], [values[0]]
        if len(keep_v) > 1 and keep_v[0] == keep_v[-1]:
            # circular merge across the origin
            keep_s.pop(0)
            keep_v.pop(0)
        if len(keep_v) == 1:
            keep_s = [0.0]
        self.starts, self.values = keep_s, keep_v

    # -- lookups

    def _locate(self, x: float) -> int:
        i = bisect_right(self.starts, x) - 1
        return i if i >= 0 else len(self.starts) - 1

    def w_right(self, x: float) -> float:
        """Epoch on the segment [x, x + dx)."""
        return self.values[self._locate(norm_point(x))]

    def w_left(self, x: float) -> float:
        """Epoch just left of ``x`` (one-sided limit from below)."""
        x = norm_point(x)
        i = self._locate(x)
        if x == self.starts[i]:
            return self.values[i - 1]
        return self.values[i]

    def w_usc(self, x: float) -> float:
        """Upper semi-continuous epoch at ``x`` (max of one-sided limits)."""
        return max(self.w_left(x), self.w_right(x))

    def u_at(self, x: float) -> float:
        return self.w_usc(x) - self.clock

    # -- functionals

    def seg_items(self):
        """Segments as (start, end, value), end = next start, unwrapped."""
        k = len(self.starts)
        for i in range(k):
            end = self.starts[i + 1] if i + 1 < k else self.starts[0] + 1.0
            yield self.starts[i], end, self.values[i]

    def min_w(self) -> float:
        return min(self.values)

    def max_w(self) -> float:
        return max(self.values)

    def depth(self) -> float:
        """N(u) = sup -u, the age of the oldest point."""
        return self.clock - self.min_w()

    def intensity(self, lam: float) -> float:
        """A(u): total accumulated arrival intensity of unseen customers."""
        total = 0.0
        for s, e, v in self.seg_items():
            total += (self.clock - v) * (e - s)
        return lam * total

    def is_all_revealed(self, tol: float = 1e-9) -> bool:
        """True when u is identically 0 (empty-system profile)."""
        return self.clock - self.min_w() <= tol

    # -- evolution

    def evolve(self, dt: float) -> None:
        if dt < 0.0:
            raise ValueError("cannot evolve backwards")
        self.clock += dt

    def clear_all(self, epoch: float | None = None) -> None:
        t = self.clock if epoch is None else epoch
        self.starts = [0.0]
        self.values = [t]

    def clear_arc(self, lo: float, length: float, epoch: float | None = None) -> None:
        """Set the reveal epoch on the arc [lo, lo + length)."""
        if length >= 1.0 - _MIN_SEG:
            self.clear_all(self.clock if epoch is None else epoch)
            return
        if length <= 0.0:
            return
        lo = norm_point(lo)
        self.clear_span(lo, norm_point(lo + length), epoch)

    def clear_span(self, lo: float, hi: float, epoch: float | None = None) -> None:
        """Clear the arc running clockwise from ``lo`` to ``hi``.

        Taking both endpoints explicitly keeps them float-identical to the
        positions the caller works with (the revealed target sits exactly on
        one of them).
        """
        t = self.clock if epoch is None else epoch
        lo = norm_point(lo)
        hi = norm_point(hi)
        length = (hi - lo) % 1.0
        if length <= 0.0:
            return
        w_hi = self.w_right(hi)
        pairs = [
            (s, v)
            for s, v in zip(self.starts, self.values)
            if (s - lo) % 1.0 >= length
        ]
        pairs.append((lo, t))
        if all(s != hi for s, _ in pairs):
            pairs.append((hi, w_hi))
        pairs.sort()
        self.starts = [p[0] for p in pairs]
        self.values = [p[1] for p in pairs]
        self._canonicalize()

    # -- reveal search

    def solve_reveal(self, s: float, mass: float, lam: float):
        """Smallest z with integral of -lam*u over [s-z, s+z] equal to ``mass``.

        Returns (z, a, b) where a and b are the intensities -u just outside
        the explored interval on the left and right.  Requires
        0 < mass < A(u), which guarantees z < 1/2.
        """
        if lam <= 0.0:
            raise ContractViolation("reveal search needs lam > 0")
        t = self.clock
        s = norm_point(s)
        k = len(self.starts)
        i = self._locate(s)
        li = i if (k == 1 or s != self.starts[i]) else (i - 1) % k
        ri = i
        wl, wr = self.values[li], self.values[ri]
        dl = (s - self.starts[li]) % 1.0 if k > 1 else 1.0
        dr = (self.starts[(ri + 1) % k] - s) % 1.0 if k > 1 else 1.0
        if dl == 0.0:
            dl = 1.0
        if dr == 0.0:
            dr = 1.0

        z = 0.0
        cum = 0.0
        for _ in range(2 * k + 8):
            z_next = min(dl, dr, 0.5)
            dens = lam * ((t - wl) + (t - wr))
            if dens > 0.0 and cum + dens * (z_next - z) >= mass:
                z_star = z + (mass - cum) / dens
                a = t - self.w_left(norm_point(s - z_star))
                b = t - self.w_right(norm_point(s + z_star))
                return z_star, a, b
            cum += dens * (z_next - z)
            z = z_next
            if z >= 0.5:
                raise SimulationError(
                    "reveal mass not reached within the circle; mass >= A(u)?"
                )
            if dl <= z:
                li = (li - 1) % k
                wl = self.values[li]
                dl = (s - self.starts[li]) % 1.0
                if dl <= z:
                    dl = 1.0  # wrapped: no further breakpoint on this side
            if dr <= z:
                ri = (ri + 1) % k
                wr = self.values[ri]
                dr = (self.starts[(ri + 1) % k] - s) % 1.0
                if dr <= z:
                    dr = 1.0
        raise SimulationError("reveal search did not terminate")

    # -- helpers

    def rotated(self, shift: float) -> "CircleProfile":
        """Profile translated so that old position ``shift`` becomes 0."""
        starts = [norm_point(s - shift) for s in self.starts]
        return CircleProfile(self.clock, starts, list(self.values))

    def sample_u(self, xs) -> list:
        return [self.u_at(x) for x in xs]


# ---------------------------------------------------------------------------
# line profiles


class LineProfile:
    """Piecewise-constant reveal epochs on R with a tail rule.

    A finite window [starts[0], starts[-1]) is stored explicitly
    (len(values) == len(starts) - 1); outside it the epoch follows the tail:
    ("const", w), or ("periodic", starts, values) repeating a circle profile
    with period 1.  The window auto-extends whenever a reveal search or a
    clearing reaches past it.
    """

    __slots__ = ("clock", "starts", "values", "tail")

    def __init__(self, clock, starts, values, tail):
        self.clock = float(clock)
        if len(starts) != len(values) + 1 or len(values) < 1:
            raise ValueError("need len(starts) == len(values) + 1 >= 2")
        self.starts = [float(s) for s in starts]
        self.values = [float(v) for v in values]
        if tail[0] not in ("const", "periodic"):
            raise ValueError(f"unknown tail rule {tail[0]!r}")
        self.tail = tail
        self._canonicalize()

    def copy(self) -> "LineProfile":
        out = LineProfile.__new__(LineProfile)
        out.clock = self.clock
        out.starts = list(self.starts)
        out.values = list(self.values)
        out.tail = self.tail
        return out

    def _canonicalize(self) -> None:
        starts, values = self.starts, self.values
        keep_s, keep_v = [starts[0]], [values[0]]
        for i in range(1, len(values)):
            if starts[i + 1] - starts[i] < _MIN_SEG:
                continue
            if values[i] == keep_v[-1]:
                continue
            keep_s.append(starts[i])
            keep_v.append(values[i])
        keep_s.append(starts[-1])
        self.starts, self.values = keep_s, keep_v

    # -- tail handling

    def _tail_w(self, x: float) -> float:
        if self.tail[0] == "const":
            return self.tail[1]
        _, pstarts, pvalues = self.tail
        xm = x % 1.0
        i = bisect_right(pstarts, xm) - 1
        return pvalues[i if i >= 0 else len(pvalues) - 1]

    def _tail_w_left(self, x: float) -> float:
        if self.tail[0] == "const":
            return self.tail[1]
        _, pstarts, pvalues = self.tail
        xm = x % 1.0
        i = bisect_right(pstarts, xm) - 1
        if i >= 0 and xm == pstarts[i]:
            i -= 1
        return pvalues[i if i >= 0 else len(pvalues) - 1]

    def _tail_segments(self, lo: float, hi: float):
        """Materialized tail segments covering [lo, hi)."""
        if self.tail[0] == "const":
            return [(lo, hi, self.tail[1])]
        _, pstarts, pvalues = self.tail
        k = len(pstarts)
        segs = []
        x = lo
        while x < hi - _MIN_SEG:
            # shifting pattern points by integers leaves ~1e-16 dust; nudge
            # the lookup so a point just below a breakpoint lands on it
            xm = x - math.floor(x) + 1e-12
            i = bisect_right(pstarts, xm) - 1
            if i < 0:
                i = k - 1
                nxt = math.floor(x) + pstarts[0]
            else:
                nxt_rel = pstarts[i + 1] if i + 1 < k else pstarts[0] + 1.0
                nxt = math.floor(x) + nxt_rel
            if nxt <= x + 1e-12:
                nxt += 1.0  # float stall guard at exact boundaries
            end = min(nxt, hi)
            segs.append((x, end, pvalues[i]))
            x = end
        return segs

    def ensure_window(self, lo: float, hi: float) -> None:
        if lo >= self.starts[0] and hi <= self.starts[-1]:
            return
        if lo < self.starts[0]:
            pre = self._tail_segments(lo - 1.0, self.starts[0])
            self.starts = [seg[0] for seg in pre] + self.starts
            self.values = [seg[2] for seg in pre] + self.values
        if hi > self.starts[-1]:
            post = self._tail_segments(self.starts[-1], hi + 1.0)
            self.starts = self.starts[:-1] + [seg[0] for seg in post] + [post[-1][1]]
            self.values = self.values + [seg[2] for seg in post]
        self._canonicalize()

    # -- lookups

    def w_right(self, x: float) -> float:
        if x < self.starts[0] or x >= self.starts[-1]:
            return self._tail_w(x)
        i = bisect_right(self.starts, x) - 1
        return self.values[min(i, len(self.values) - 1)]

    def w_left(self, x: float) -> float:
        if x <= self.starts[0] or x > self.starts[-1]:
            return self._tail_w_left(x)
        i = bisect_right(self.starts, x) - 1
        if i >= len(self.values):
            return self.values[-1]  # x == right window edge
        if x == self.starts[i]:
            return self.values[i - 1] if i > 0 else self._tail_w_left(x)
        return self.values[i]

    def w_usc(self, x: float) -> float:
        return max(self.w_left(x), self.w_right(x))

    def u_at(self, x: float) -> float:
        return self.w_usc(x) - self.clock

    def min_w(self) -> float:
        m = min(self.values)
        if self.tail[0] == "const":
            return min(m, self.tail[1])
        return min(m, min(self.tail[2]))

    def depth(self) -> float:
        return self.clock - self.min_w()

    def intensity(self, lam: float) -> float:
        """Total intensity on the line is infinite by construction."""
        return math.inf

    def seg_items(self):
        for i, v in enumerate(self.values):
            yield self.starts[i], self.starts[i + 1], v

    # -- evolution

    def evolve(self, dt: float) -> None:
        if dt < 0.0:
            raise ValueError("cannot evolve backwards")
        self.clock += dt

    def clear_interval(self, lo: float, hi: float, epoch: float | None = None) -> None:
        t = self.clock if epoch is None else epoch
        if hi <= lo:
            return
        self.ensure_window(lo - 0.5, hi + 0.5)
        starts, values = self.starts, self.values
        w_hi = self.w_right(hi)
        i = bisect_right(starts, lo)
        if starts[i - 1] == lo:
            i -= 1
        j = bisect_right(starts, hi)
        if starts[j - 1] == hi:
            j -= 1
        # breakpoints i..j-1 fall inside [lo, hi); splice in the cleared span
        if j < len(starts) and starts[j] == hi:
            starts[i:j] = [lo]
            values[i:j] = [t]
        else:
            starts[i:j] = [lo, hi]
            values[i:j] = [t, w_hi]
        # merge equal-valued neighbours around the splice
        m = max(i - 1, 0)
        stop = min(i + 3, len(values))
        while m < min(stop, len(values)) - 1:
            if values[m] == values[m + 1]:
                del starts[m + 1]
                del values[m + 1]
                stop -= 1
            else:
                m += 1

    # -- reveal search

    def _scan_reveal(self, s: float, mass: float, lam: float):
        """Outward scan within the materialized window; None = needs growth."""
        t = self.clock
        starts, values = self.starts, self.values
        nseg = len(values)
        ri = min(max(bisect_right(starts, s) - 1, 0), nseg - 1)
        li = ri
        if s == starts[li]:
            li -= 1
            if li < 0:
                return None
        z = 0.0
        cum = 0.0
        for _ in range(2 * nseg + 8):
            dl = max((s - z) - starts[li], 0.0)
            dr = max(starts[ri + 1] - (s + z), 0.0)
            step = dl if dl <= dr else dr
            dens = lam * ((t - values[li]) + (t - values[ri]))
            if dens > 0.0 and cum + dens * step >= mass:
                return z + (mass - cum) / dens
            cum += dens * step
            z += step
            if dl <= dr:
                li -= 1
                if li < 0:
                    return None
            if dr <= dl:
                ri += 1
                if ri >= nseg:
                    return None
        return None

    def solve_reveal(self, s: float, mass: float, lam: float):
        """Line counterpart of :meth:`CircleProfile.solve_reveal`; z unbounded."""
        if lam <= 0.0:
            raise ContractViolation("reveal search needs lam > 0")
        t = self.clock
        radius = 1.0
        while True:
            self.ensure_window(s - radius, s + radius)
            z_star = self._scan_reveal(s, mass, lam)
            if z_star is not None:
                break
            if radius > 1e9:
                raise SimulationError("line reveal exceeds available intensity")
            radius *= 2.0
        a = t - self.w_left(s - z_star)
        b = t - self.w_right(s + z_star)
        return z_star, a, b

    def sample_u(self, xs) -> list:
        return [self.u_at(x) for x in xs]


# ---------------------------------------------------------------------------
# states and the event loop


@dataclass
class Event:
    """One state transition of a simulator."""

    time: float
    kind: str  # arrival | service_start | departure | regeneration
    s: float
    c: float | None
    index: int | None = None  # departure index, for departures
    cleared: object = None  # (lo, length) on circle, (lo, hi) on line, "all"
    reveal_mass: float | None = None  # intensity consumed, min(E, A)


class PotentialProcess:
    """Markov evolution of (u, S, C) driven by an indexed random tape.

    Owns its profile exclusively.  The same class runs the circle and the
    line; the line never idles.  Counters track the exact time split and the
    consumed exploration marks so conservation identities can be checked to
    float precision.
    """

    def __init__(self, profile, s, c, regime, tape: RandomTape, config: ModelConfig):
        self.profile = profile
        self.circle = isinstance(profile, CircleProfile)
        self.s = norm_point(s) if self.circle else float(s)
        self.c = None if c is None else (norm_point(c) if self.circle else float(c))
        self.regime = regime
        self.tape = tape
        self.config = config
        self.departures = 0
        self.arrivals = 0
        self.moving_time = 0.0
        self.serving_time = 0.0
        self.idle_time = 0.0
        self.traveled = 0.0
        self.consumed_mass = 0.0
        self._service_left: float | None = None
        self._arrival_wait: float | None = None
        self._arrival_pos: float | None = None
        if regime is Regime.SERVING:
            if self.c is None or self._gap() > 1e-9:
                raise ContractViolation("serving requires S = C")
            self.c = self.s
            self._service_left = config.service.sample(tape, self.departures)
        elif regime is Regime.MOVING:
            if self.c is None:
                raise ContractViolation("moving requires a target")
        else:
            if not self.circle:
                raise ContractViolation("the line process never idles")
            if self.c is not None:
                raise ContractViolation("idle requires no target")

    # -- geometry helpers

    def _gap(self) -> float:
        if self.c is None:
            return math.inf
        if self.circle:
            d = (self.c - self.s) % 1.0
            return d if d <= 0.5 else 1.0 - d
        return abs(self.c - self.s)

    def _direction(self) -> float:
        if self.c is None or self.c == self.s:
            return 0.0
        if self.circle:
            return 1.0 if (self.c - self.s) % 1.0 < 0.5 else -1.0
        return 1.0 if self.c > self.s else -1.0

    @property
    def clock(self) -> float:
        return self.profile.clock

    # -- event loop

    def next_dt(self) -> float:
        """Time to the next event from the current instant."""
        if self.regime is Regime.SERVING:
            return self._service_left
        if self.regime is Regime.MOVING:
            return self._gap() / self.config.speed
        if self._arrival_wait is None:
            lam = self.config.lam
            if lam <= 0.0:
                self._arrival_wait = math.inf
                self._arrival_pos = 0.0
            else:
                self._arrival_wait = self.tape.exponential("ARR_DT", self.arrivals) / lam
                self._arrival_pos = self.tape.uniform("ARR_POS", self.arrivals)
        return self._arrival_wait

    def advance(self, dt: float) -> None:
        """Deterministic flow for ``dt`` (must not cross the next event)."""
        if dt < 0.0:
            raise ValueError("negative advance")
        if dt == 0.0:
            return
        self.profile.evolve(dt)
        if self.regime is Regime.MOVING:
            move = self._direction() * self.config.speed * dt
            self.s = norm_point(self.s + move) if self.circle else self.s + move
            self.traveled += abs(move)
            self.moving_time += dt
        elif self.regime is Regime.SERVING:
            self._service_left -= dt
            self.serving_time += dt
        else:
            if self._arrival_wait is not None:
                self._arrival_wait -= dt
            self.idle_time += dt
            # while idle the state is frozen: u stays identically 0
            self.profile.clear_all()

    def step(self) -> Event:
        """Advance to the next event, apply its transition, and report it."""
        dt = self.next_dt()
        if not math.isfinite(dt):
            raise SimulationError("no further events (idle with lam = 0)")
        self.advance(dt)
        t = self.clock
        if self.regime is Regime.MOVING:
            self.s = self.c
            self.regime = Regime.SERVING
            self._service_left = self.config.service.sample(self.tape, self.departures)
            return Event(t, "service_start", self.s, self.c)
        if self.regime is Regime.SERVING:
            mark = self.tape.exponential("E", self.departures)
            side = self.tape.uniform("U", self.departures)
            return departure_transition(self, mark, side)
        # idle: an arrival
        pos = self._arrival_pos
        self._arrival_wait = None
        self._arrival_pos = None
        self.arrivals += 1
        self.c = pos
        if pos == self.s:
            self.regime = Regime.SERVING
            self._service_left = self.config.service.sample(self.tape, self.departures)
        else:
            self.regime = Regime.MOVING
        return Event(t, "arrival", self.s, self.c)

    def run_events(self, n_events: int):
        return [self.step() for _ in range(n_events)]


# ---------------------------------------------------------------------------
# state-level operations


def total_intensity(profile, lam: float) -> float:
    """A(u); infinite on the line by construction."""
    return profile.intensity(lam)


def evolve(profile, dt: float):
    """Let time pass: u decreases by dt uniformly.  Returns the profile."""
    profile.evolve(dt)
    return profile


def departure_transition(state: PotentialProcess, mark: float, side: float) -> Event:
    """The instantaneous reveal at a departure, with explicit (E, U) inputs.

    The event loop feeds this with (E_n, U_n) drawn by departure index; the
    explicit entry point exists so the transition rule can be tested alone.
    """
    if state.regime is not Regime.SERVING:
        raise ContractViolation("departure transition requires the serving regime")
    t = state.clock
    lam = state.config.lam
    n = state.departures
    state.departures += 1
    state._service_left = None
    if state.circle:
        total = state.profile.intensity(lam)
        if mark >= total:
            state.profile.clear_all()
            state.c = None
            state.regime = Regime.IDLE
            state.consumed_mass += total
            return Event(
                t, "regeneration", state.s, None, index=n,
                cleared="all", reveal_mass=total,
            )
    z, a, b = state.profile.solve_reveal(state.s, mark, lam)
    if a + b <= 0.0:
        raise ContractViolation("zero boundary intensity at minimal z")
    go_left = side < a / (a + b)
    if state.circle:
        lo, hi = norm_point(state.s - z), norm_point(state.s + z)
        state.c = lo if go_left else hi
        state.profile.clear_span(lo, hi)
        cleared = (lo, (hi - lo) % 1.0)
    else:
        state.c = state.s - z if go_left else state.s + z
        state.profile.clear_interval(state.s - z, state.s + z)
        cleared = (state.s - z, state.s + z)
    state.regime = Regime.MOVING
    state.consumed_mass += mark
    return Event(
        t, "departure", state.s, state.c, index=n,
        cleared=cleared, reveal_mass=mark,
    )


def idle_arrival(state: PotentialProcess, z: float) -> PotentialProcess:
    """First arrival out of the idle state, at explicit position ``z``."""
    if state.regime is not Regime.IDLE:
        raise ContractViolation("idle_arrival requires the idle regime")
    state.arrivals += 1
    state._arrival_wait = None
    state._arrival_pos = None
    state.c = norm_point(z)
    if state.c == state.s:
        state.regime = Regime.SERVING
        state._service_left = state.config.service.sample(state.tape, state.departures)
    else:
        state.regime = Regime.MOVING
    return state


def step_potential(state: PotentialProcess) -> Event:
    """One event of the potential dynamics (alias for ``state.step()``)."""
    return state.step()


def is_proper(state_or_profile, s=None, c=None, tol: float = 1e-9):
    """Whether a circle state is proper; returns (flag, (x_min, x_max)).

    Proper means the potential is circularly unimodal (one local minimum
    and one local maximum, up to flat stretches) and the server and target
    sit at the maximum level, or the state is idle with u identically 0.
    """
    if isinstance(state_or_profile, PotentialProcess):
        profile = state_or_profile.profile
        s = state_or_profile.s
        c = state_or_profile.c
    else:
        profile = state_or_profile
    if not isinstance(profile, CircleProfile):
        raise ContractViolation("properness is defined for circle states")

    vals = profile.values
    mids = [norm_point((lo + hi) / 2.0) for lo, hi, _ in profile.seg_items()]
    # collapse near-equal neighbours so float dust does not create extrema
    levels, reps = [], []
    for v, mid in zip(vals, mids):
        if levels and abs(v - levels[-1]) <= tol:
            continue
        levels.append(v)
        reps.append(mid)
    if len(levels) > 1 and abs(levels[0] - levels[-1]) <= tol:
        levels.pop(0)
        reps.pop(0)

    m = len(levels)
    if m == 1:
        unimodal = True
        witness = (reps[0], reps[0])
    else:
        maxima = [
            i for i in range(m)
            if levels[i] > levels[i - 1] and levels[i] > levels[(i + 1) % m]
        ]
        unimodal = len(maxima) <= 1
        i_min = min(range(m), key=lambda i: levels[i])
        i_max = max(range(m), key=lambda i: levels[i])
        witness = (reps[i_min], reps[i_max])

    max_u = profile.max_w() - profile.clock
    if c is None:
        compatible = profile.is_all_revealed(tol)
    else:
        compatible = (
            profile.u_at(s) >= max_u - tol and profile.u_at(c) >= max_u - tol
        )
    return (unimodal and compatible), witness


# ---------------------------------------------------------------------------
# state builders and persistence


def empty_state(config: ModelConfig, tape: RandomTape, s: float = 0.0) -> PotentialProcess:
    """Idle state with u identically 0."""
    return PotentialProcess(CircleProfile(), s, None, Regime.IDLE, tape, config)


def constant_state(
    config: ModelConfig,
    tape: RandomTape,
    depth: float,
    s: float = 0.0,
    c: float | None = None,
) -> PotentialProcess:
    """Serving state on the constant potential u = -depth."""
    profile = CircleProfile.constant(-depth)
    c = s if c is None else c
    regime = Regime.SERVING if c == s else Regime.MOVING
    return PotentialProcess(profile, s, c, regime, tape, config)


def dump_potential(profile) -> dict:
    """JSON-ready description of a profile."""
    if isinstance(profile, CircleProfile):
        return {
            "space": "circle",
            "clock": profile.clock,
            "segments": [
                {"start": s, "end": e, "w": v} for s, e, v in profile.seg_items()
            ],
        }
    tail = profile.tail
    if tail[0] == "const":
        tail_obj = {"kind": "constant", "w": tail[1]}
    else:
        _, pstarts, pvalues = tail
        k = len(pstarts)
        segs = []
        for i in range(k):
            end = pstarts[i + 1] if i + 1 < k else pstarts[0] + 1.0
            segs.append({"start": pstarts[i], "end": end, "w": pvalues[i]})
        tail_obj = {"kind": "periodic", "segments": segs}
    return {
        "space": "line",
        "clock": profile.clock,
        "segments": [
            {"start": s, "end": e, "w": v} for s, e, v in profile.seg_items()
        ],
        "tail": tail_obj,
    }


def load_potential(obj: dict):
    """Inverse of :func:`dump_potential`; validates w <= clock on load."""
    clock = float(obj["clock"])
    segs = obj["segments"]
    if not segs:
        raise ValueError("potential dump has no segments")
    for seg in segs:
        if seg["w"] > clock + _WTOL:
            raise ValueError(
                f"reveal epoch {seg['w']} lies in the future of clock {clock}"
            )
    if obj["space"] == "circle":
        return CircleProfile(
            clock,
            [seg["start"] for seg in segs],
            [seg["w"] for seg in segs],
        )
    tail_obj = obj.get("tail") or {"kind": "constant", "w": min(s["w"] for s in segs)}
    if tail_obj["kind"] == "constant":
        if tail_obj["w"] > clock + _WTOL:
            raise ValueError("tail epoch lies in the future")
        tail = ("const", float(tail_obj["w"]))
    else:
        psegs = tail_obj["segments"]
        for seg in psegs:
            if seg["w"] > clock + _WTOL:
                raise ValueError("tail epoch lies in the future")
        tail = (
            "periodic",
            [float(seg["start"]) for seg in psegs],
            [float(seg["w"]) for seg in psegs],
        )
    starts = [seg["start"] for seg in segs] + [segs[-1]["end"]]
    return LineProfile(clock, starts, [seg["w"] for seg in segs], tail)


def save_potential(profile, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dump_potential(profile), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_potential(path):
    with open(path, "r", encoding="utf-8") as fh:
        return load_potential(json.load(fh))
