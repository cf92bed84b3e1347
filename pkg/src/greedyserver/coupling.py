"""Three processes, one tape: circle, periodic line, truncated line.

All three are driven by the same indexed streams, so before the explicit
stopping times they must produce the same events at the same times with the
same positions and potentials.  The runner advances them in lockstep and
treats any divergence as a verification failure with a first-divergence
record; this is a bug detector, not a statistical test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .engine import ModelConfig, RandomTape
from .geometry import FULL_CIRCLE, Arc, arc_contains_arc, dist, grow_arc, norm_point
from .lyapunov import valley_set
from .potential_sim import (
    CircleProfile,
    ContractViolation,
    LineProfile,
    PotentialProcess,
    Regime,
    is_proper,
)

_STOP_TOL = 1e-12


def normalize(profile: CircleProfile, s: float, c: float):
    """Rotate a proper state so the server sits at 0, at the maximum of u.

    Returns (profile, s=0.0, c) with c the representative in [-1/2, 1/2).
    """
    ok, _ = is_proper(profile, s, c)
    if not ok:
        raise ContractViolation("normalize requires a proper state")
    rotated = profile.rotated(s)
    c_rep = ((c - s + 0.5) % 1.0) - 0.5
    return rotated, 0.0, c_rep


def periodic_extension(profile: CircleProfile, half_window: float = 2.0) -> LineProfile:
    """Line profile repeating the circle profile with period 1.

    The total intensity of the result is infinite by construction, which is
    the defining property of a line potential.  Breakpoints land on the
    exact circle floats shifted by integers, so the projection back onto the
    circle is float-exact.
    """
    tail = ("periodic", list(profile.starts), list(profile.values))
    starts = list(profile.starts) + [profile.starts[0] + 1.0]
    out = LineProfile(profile.clock, starts, list(profile.values), tail)
    out.ensure_window(-half_window, half_window)
    return out


def truncate(line_profile: LineProfile, depth: float):
    """Replace the potential outside the lifted valley with the level -N/2.

    Returns (profile, l, r, degenerate) with l = inf of the valley's lift in
    [-1, 0], r = sup of its lift in [0, 1].  When the lift misses one of the
    two unit intervals the corresponding endpoint degenerates to 0 and the
    run is flagged.
    """
    clock = line_profile.clock
    threshold = clock - depth / 2.0  # w < threshold means u < -N/2
    probe = line_profile.copy()
    probe.ensure_window(-1.2, 1.2)

    def deep_intervals(lo, hi):
        out = []
        for s, e, v in probe.seg_items():
            if v < threshold and e > lo and s < hi:
                out.append((max(s, lo), min(e, hi)))
        return out

    left = deep_intervals(-1.0, 0.0)
    right = deep_intervals(0.0, 1.0)
    degenerate = not left or not right
    l = min(seg[0] for seg in left) if left else 0.0
    r = max(seg[1] for seg in right) if right else 0.0

    tail_w = clock - depth / 2.0
    if r - l <= 0.0:
        starts = [-0.5, 0.5]
        values = [tail_w]
    else:
        inner = [(s, e, v) for s, e, v in probe.seg_items() if e > l and s < r]
        starts = [l] + [s for s, _, _ in inner if l < s < r] + [r]
        values = []
        for i in range(len(starts) - 1):
            values.append(probe.w_right((starts[i] + starts[i + 1]) / 2.0))
    out = LineProfile(clock, starts, values, ("const", tail_w))
    return out, l, r, degenerate


@dataclass
class Divergence:
    """First point where the coupled constructions disagree."""

    event_index: int
    departure_index: int | None
    time: float
    what: str


@dataclass
class CoupledRun:
    """Verdicts and stopping data of one coupled run."""

    seed: int | None
    tol: float
    horizon: float
    valley_full: bool
    degenerate_truncation: bool
    l: float
    r: float
    t_cover: float | None = None  # circle: full reveal
    i_cover: int | None = None
    t_valley: float | None = None  # circle: valley revealed
    i_valley: int | None = None
    t_unit: float | None = None  # line: revealed interval reaches length 1
    i_unit: int | None = None
    t_escape: float | None = None  # line: revealed interval leaves (l, r)
    i_escape: int | None = None
    identities_ok: bool = True
    first_divergence: Divergence | None = None
    censored: bool = False
    events: int = 0
    departures: int = 0
    traveled_at_valley: dict = field(default_factory=dict)
    traveled_final: dict = field(default_factory=dict)
    moving_time: dict = field(default_factory=dict)
    max_leg_before_escape: float = 0.0

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "t_circle": {"T_o": self.t_cover, "T_v": self.t_valley},
            "t_line": {"T_1": self.t_unit, "T_U": self.t_escape},
            "identities_ok": self.identities_ok,
            "first_divergence": (
                None
                if self.first_divergence is None
                else {
                    "event_index": self.first_divergence.event_index,
                    "departure_index": self.first_divergence.departure_index,
                    "time": self.first_divergence.time,
                    "what": self.first_divergence.what,
                }
            ),
        }


def _u_values_match(p1, p2, points, tol) -> bool:
    for x1, x2 in points:
        if abs(p1.w_usc(x1) - p1.clock - (p2.w_usc(x2) - p2.clock)) > tol:
            return False
    return True


def _midpoints(breaks, lo, hi, tol):
    pts = sorted(set([lo] + [b for b in breaks if lo < b < hi] + [hi]))
    mids = []
    for a, b in zip(pts, pts[1:]):
        if b - a > max(4.0 * tol, 1e-9):
            mids.append((a + b) / 2.0)
    return mids


def _match_circle_line(circle: CircleProfile, line: LineProfile, window_lo, tol) -> bool:
    """u_circle == projected u_line on [window_lo, window_lo + 1)."""
    hi = window_lo + 1.0
    line.ensure_window(window_lo - 0.1, hi + 0.1)
    breaks = [window_lo + ((b - window_lo) % 1.0) for b in circle.starts]
    breaks += [b for b in line.starts if window_lo < b < hi]
    mids = _midpoints(breaks, window_lo, hi, tol)
    return _u_values_match(line, circle, [(m, norm_point(m)) for m in mids], tol)


def _match_lines(p1: LineProfile, p2: LineProfile, lo, hi, tol) -> bool:
    """u_1 == u_2 on (lo, hi); outside they differ by construction."""
    p1.ensure_window(lo - 0.1, hi + 0.1)
    p2.ensure_window(lo - 0.1, hi + 0.1)
    breaks = [b for b in p1.starts if lo < b < hi]
    breaks += [b for b in p2.starts if lo < b < hi]
    mids = _midpoints(breaks, lo, hi, tol)
    return _u_values_match(p1, p2, [(m, m) for m in mids], tol)


def run_coupled(
    profile: CircleProfile,
    s: float,
    c: float,
    config: ModelConfig,
    tape: RandomTape,
    horizon: float = 1e3,
    tol: float = 1e-9,
    seed: int | None = None,
) -> CoupledRun:
    """Drive the three constructions on one tape and verify the identities.

    The run advances until both line stopping times have fired (or the
    horizon); the circle process is retired at its full-reveal time.  State
    comparisons honour the strict-inequality windows: the event that fires a
    stopping time is no longer compared under that identity.
    """
    profile, s, c = normalize(profile, s, c)
    depth = profile.depth()
    if depth <= 0.0:
        raise ContractViolation("coupled runs need a non-empty potential")
    valley = valley_set(profile)
    valley_full = valley is not None and valley.is_full

    regime = Regime.SERVING if c == s else Regime.MOVING
    circle = PotentialProcess(profile.copy(), 0.0, norm_point(c), regime, tape, config)
    bar_profile = periodic_extension(profile)
    bar = PotentialProcess(bar_profile, 0.0, c, regime, tape, config)
    tilde_profile, l, r, degenerate = truncate(bar_profile, depth)
    tilde = PotentialProcess(tilde_profile, 0.0, c, regime, tape, config)

    run = CoupledRun(
        seed=seed,
        tol=tol,
        horizon=horizon,
        valley_full=valley_full,
        degenerate_truncation=degenerate,
        l=l,
        r=r,
    )

    growth: Arc | None = None
    h_lo = h_hi = None
    live_circle = True
    live_tilde = True
    tilde_leg = 0.0  # tilde travel since the previous departure

    def diverge(what, ev, dep_index):
        if run.identities_ok:
            run.identities_ok = False
            run.first_divergence = Divergence(run.events, dep_index, ev.time, what)

    while run.identities_ok and (run.i_unit is None or run.i_escape is None):
        if bar.clock + bar.next_dt() > horizon:
            run.censored = True
            break
        prev_traveled = tilde.traveled if live_tilde else 0.0
        ev_bar = bar.step()
        ev_circle = circle.step() if live_circle else None
        ev_tilde = tilde.step() if live_tilde else None
        run.events += 1
        dep = ev_bar.index

        def kinds_equal(a, b):
            norm = {"regeneration": "departure"}
            return norm.get(a, a) == norm.get(b, b)

        # lockstep discipline: same kinds, same times
        for name, ev in (("circle", ev_circle), ("tilde", ev_tilde)):
            if ev is None:
                continue
            if not kinds_equal(ev.kind, ev_bar.kind):
                diverge(f"event kind mismatch ({name}): {ev.kind} vs {ev_bar.kind}", ev_bar, dep)
            elif abs(ev.time - ev_bar.time) > tol:
                diverge(f"event time mismatch ({name})", ev_bar, dep)
        if not run.identities_ok:
            break

        fired_unit = fired_escape = False
        escape_pending = run.i_escape is None
        if ev_bar.kind in ("departure", "regeneration"):
            run.departures += 1
            lo_c, hi_c = ev_bar.cleared
            h_lo = lo_c if h_lo is None else min(h_lo, lo_c)
            h_hi = hi_c if h_hi is None else max(h_hi, hi_c)
            if h_lo > tol or h_hi < -tol:
                diverge("revealed interval does not contain the origin", ev_bar, dep)
            if not (h_lo - tol <= bar.s <= h_hi + tol):
                diverge("revealed interval does not contain the server", ev_bar, dep)
            if bar.c is not None and not (h_lo - tol <= bar.c <= h_hi + tol):
                diverge("revealed interval does not contain the target", ev_bar, dep)
            if run.i_unit is None and h_hi - h_lo >= 1.0 - _STOP_TOL:
                run.i_unit, run.t_unit = dep, ev_bar.time
                fired_unit = True
            if run.i_escape is None and (h_lo <= l + _STOP_TOL or h_hi >= r - _STOP_TOL):
                run.i_escape, run.t_escape = dep, ev_bar.time
                fired_escape = True
            if live_tilde:
                leg = tilde.traveled - prev_traveled + tilde_leg
                tilde_leg = 0.0
                if escape_pending:
                    # legs strictly before the escape, including the one that
                    # ends at the escape departure itself
                    run.max_leg_before_escape = max(run.max_leg_before_escape, leg)
        elif live_tilde:
            tilde_leg += tilde.traveled - prev_traveled

        if ev_circle is not None and ev_circle.kind in ("departure", "regeneration"):
            if ev_circle.cleared == "all":
                growth = FULL_CIRCLE
            else:
                growth = grow_arc(growth, Arc(ev_circle.cleared[0], ev_circle.cleared[1]))
            if run.i_valley is None and arc_contains_arc(growth, valley):
                run.i_valley, run.t_valley = ev_circle.index, ev_circle.time
                run.traveled_at_valley = {
                    "circle": circle.traveled,
                    "line": bar.traveled,
                    "truncated": tilde.traveled if live_tilde else None,
                }
            if run.i_cover is None and growth.is_full:
                run.i_cover, run.t_cover = ev_circle.index, ev_circle.time

        # cross-checks of the stopping identities, by departure index
        if fired_unit and live_circle and run.i_cover != run.i_unit:
            diverge("full-reveal times differ (T_o vs T_1)", ev_bar, dep)
        if run.i_cover is not None and run.i_unit is None and live_circle:
            diverge("circle covered before the line reached unit length", ev_bar, dep)
        expected_valley = min(
            x for x in (run.i_escape, run.i_unit, math.inf) if x is not None
        )
        if run.i_valley is not None and run.i_valley != expected_valley:
            if expected_valley is math.inf or run.i_valley < expected_valley:
                diverge("valley revealed before min(T_U, T_1)", ev_bar, dep)
        if (fired_unit or fired_escape) and run.i_valley is None and live_circle:
            diverge("min(T_U, T_1) fired but the valley is not revealed", ev_bar, dep)

        # state identities, skipping the event that fired the relevant window
        if live_circle and run.i_unit is None:
            window_lo = -0.5 if h_lo is None else h_lo
            if not (
                dist(circle.s, norm_point(bar.s)) <= tol
                and (circle.c is None) == (bar.c is None)
                and (circle.c is None or dist(circle.c, norm_point(bar.c)) <= tol)
                and circle.regime is bar.regime
                and _match_circle_line(circle.profile, bar.profile, window_lo, tol)
            ):
                diverge("circle state differs from projected line state", ev_bar, dep)
        if live_tilde and run.i_escape is None and not degenerate:
            if not (
                abs(bar.s - tilde.s) <= tol
                and abs((bar.c or 0.0) - (tilde.c or 0.0)) <= tol
                and bar.regime is tilde.regime
                and _match_lines(bar.profile, tilde.profile, l, r, tol)
            ):
                diverge("periodic and truncated line states differ", ev_bar, dep)

        if run.i_unit is not None:
            live_circle = False
        if run.i_escape is not None:
            live_tilde = False

    run.traveled_final = {
        "circle": circle.traveled,
        "line": bar.traveled,
        "truncated": tilde.traveled,
    }
    run.moving_time = {
        "circle": circle.moving_time,
        "line": bar.moving_time,
        "truncated": tilde.moving_time,
    }
    return run


def travel_accounting(run: CoupledRun, speed: float) -> dict:
    """Traveled-distance identities of a completed run.

    Checks moving time times speed against the traveled distance, and the
    chain: circle travel up to the valley time equals the line's equals the
    truncated line's, which is bounded by the truncated line's total.
    """
    out = {
        "moving_times_speed_ok": all(
            abs(run.moving_time[k] * speed - run.traveled_final[k]) <= 1e-9 * (1 + run.traveled_final[k])
            for k in run.moving_time
        ),
        "max_leg_before_escape": run.max_leg_before_escape,
        "per_departure_bound_ok": run.max_leg_before_escape <= 2.0 + 1e-9,
    }
    if run.traveled_at_valley:
        v = run.traveled_at_valley
        chain = (
            abs(v["circle"] - v["line"]) <= 1e-9 * (1 + v["circle"])
            and (v["truncated"] is None or abs(v["line"] - v["truncated"]) <= 1e-9 * (1 + v["line"]))
            and (v["truncated"] is None or v["truncated"] <= run.traveled_final["truncated"] + 1e-9)
        )
        out["chain_ok"] = chain
    else:
        out["chain_ok"] = None
    return out
