"""Multi-scale block detector for line trajectories and the renewal argument.

A trajectory is segmented into blocks: block 0 is the first departure plus
the travel to the revealed customer; block j >= 1 ends at the service start
of the quota-th new forward-record customer.  Each block is scored against
the published bounds on the number served, the advance, the duration, the
traveled distance and the confinement of the path.  On a failure the
detector restarts at the next service start (a time-shift renewal); the
settle time is the start of the first epoch that never fails within the
horizon.

Scope note: the success event checked here consists exactly of the bounds
listed above (plus the exact-travel requirement in block 1).  The exact
conditional-probability coin that would make per-level success probabilities
identical across histories has no closed form and is not implemented; the
reported renewal counts are the detector's own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .engine import ModelConfig, RandomTape
from .potential_sim import (
    ContractViolation,
    LineProfile,
    PotentialProcess,
    Regime,
)

SCOPE_NOTE = (
    "success events are the explicit per-block bounds (served count, advance, "
    "duration, traveled distance, confinement; exact travel in block 1); "
    "renewal counts are the detector's own"
)

_POS_TOL = 1e-9


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class BlockParams:
    """Published bounds for one block level."""

    level: int
    quota: int  # forward customers that close the block (1 at level 0)
    mass_slack: float | None  # per-reveal slack D_j; None at level 0
    served_min: float
    served_max: float
    advance_min: float
    advance_max: float
    duration_min: float
    duration_max: float


def level_quota(level: int) -> int:
    """Forward-customer quota of a block level (ceil(54 j^(1/4)) for j >= 1)."""
    if level <= 0:
        return 1
    return math.ceil(54.0 * level**0.25)


def block_params(level: int, depth_start: float, depth_end: float, speed: float) -> BlockParams:
    """Bounds for block ``level`` given the frontier depths at its ends.

    depth_start is the depth at the block's opening service start (N_j),
    depth_end at its closing one (N_{j+1}).  Level 0 only uses depth_end.
    """
    if depth_end <= 0.0 or (level >= 1 and depth_start <= 0.0):
        raise ValueError("frontier depths must be positive")
    if level == 0:
        return BlockParams(
            level=0,
            quota=1,
            mass_slack=None,
            served_min=1.0,
            served_max=1.0,
            advance_min=9.0 / depth_end,
            advance_max=36.0,
            duration_min=1.0,
            duration_max=2.0 + 36.0 / speed,
        )
    quota = level_quota(level)
    advance_max = 3.0 * quota / depth_start
    return BlockParams(
        level=level,
        quota=quota,
        mass_slack=quota / 36.0,
        served_min=float(quota),
        served_max=float(quota + 1),
        advance_min=(quota - 1) / (3.0 * depth_end),
        advance_max=advance_max,
        duration_min=quota / 2.0,
        duration_max=2.0 * (quota + 1) + 3.0 * advance_max / speed,
    )


def served_cap(level: int) -> float:
    """Cumulative upper bound on departures through block ``level``."""
    return 1.0 + sum(level_quota(j) + 1 for j in range(1, level + 1))


# ---------------------------------------------------------------------------
# shape checks


def alpha_unimodal_check(profile: LineProfile, s: float, c: float, alpha: float) -> bool:
    """Whether the state is alpha-unimodal.

    The potential must attain its maximum at both the server and the target,
    and on each side of the server every value must stay below alpha times
    the running infimum taken from the server outward.  Checked exactly on
    the piecewise-constant representation including the tail (two extra
    periods decide the periodic case).
    """
    clock = profile.clock
    max_u = max(profile.values) - clock
    if profile.tail[0] == "const":
        max_u = max(max_u, profile.tail[1] - clock)
    else:
        max_u = max(max_u, max(profile.tail[2]) - clock)
    if profile.u_at(s) < max_u - _POS_TOL or profile.u_at(c) < max_u - _POS_TOL:
        return False

    def side_values(direction: int):
        lo, hi = profile.starts[0], profile.starts[-1]
        vals = []
        if direction > 0:
            for seg_lo, seg_hi, v in profile.seg_items():
                if seg_hi > s:
                    vals.append(v - clock)
            tail_span = (hi, hi + 2.0)
        else:
            for seg_lo, seg_hi, v in reversed(list(profile.seg_items())):
                if seg_lo < s:
                    vals.append(v - clock)
            tail_span = (lo - 2.0, lo)
        for a, b, v in profile._tail_segments(*tail_span):
            vals.append(v - clock)
        return vals

    for direction in (+1, -1):
        run_inf = profile.u_at(s)
        for v in side_values(direction):
            if v > alpha * min(run_inf, v) + _POS_TOL:
                return False
            run_inf = min(run_inf, v)
    return True


def strong_transience_check(samples, ratio: float = 1.0 / 3.0, tol: float = 1e-9) -> bool:
    """Displacement at least ``ratio`` times the traveled distance, throughout.

    ``samples`` is an event-time sequence of (displacement, traveled) pairs
    measured from the segment start; the inequality is non-strict.
    """
    for disp, traveled in samples:
        if abs(disp) < ratio * traveled - tol:
            return False
    return True


def travel_bound_check(samples, factor: float = 5.0 / 3.0, tol: float = 1e-9) -> bool:
    """Traveled distance at most ``factor`` times the oriented displacement."""
    for disp, traveled in samples:
        if traveled > factor * disp + tol and traveled > tol:
            return False
    return True


# ---------------------------------------------------------------------------
# detection


@dataclass
class BlockRecord:
    """Measured quantities of one block."""

    level: int
    start_time: float  # L_j, local to the epoch
    start_pos: float  # Z_j, oriented distance from the epoch origin
    depth: float  # N_j = L_j - u0(position at L_j)
    served: int | None = None  # Q_j
    advance: float | None = None  # X_j
    duration: float | None = None  # M_j
    traveled: float | None = None  # V over the block
    success: bool = False
    failed_condition: str = ""  # empty on success
    complete: bool = False
    params: BlockParams | None = None
    entry_deep_ok: bool | None = None  # u <= -N_j/2 beyond Z_j at L_j
    entry_recent_ok: bool | None = None  # u >= -M_{j-1} just behind Z_j


@dataclass
class Epoch:
    """One renewal epoch of the detector."""

    start_clock: float
    sigma: float
    records: list[BlockRecord] = field(default_factory=list)
    failed_level: int | None = None
    departures: int = 0
    end_reason: str = "running"  # failed | horizon
    trace: list = field(default_factory=list)  # (local t, raw displacement, traveled)

    def oriented_samples(self):
        """(oriented displacement, traveled) pairs along the epoch."""
        return [(self.sigma * d, v) for _t, d, v in self.trace]

    @property
    def renewal_index(self) -> float | None:
        # J = 1 + index of the failed block, per the renewal convention
        return None if self.failed_level is None else self.failed_level + 1


def _advance_to_service_start(proc: PotentialProcess, horizon: float) -> bool:
    """Step until the process is serving; False when the horizon interferes."""
    while proc.regime is not Regime.SERVING:
        if proc.clock + proc.next_dt() > horizon:
            return False
        proc.step()
    return True


def _entry_shape(proc, origin, sigma, z_pos, depth, m_prev, x_prev_min):
    """Shape conditions on the potential at a block start (None = untestable)."""
    profile = proc.profile
    clock = profile.clock
    abs_pos = origin + sigma * z_pos
    lo, hi = (abs_pos, abs_pos + 3.0) if sigma > 0 else (abs_pos - 3.0, abs_pos)
    probe = profile.copy()
    probe.ensure_window(lo - 1.0, hi + 1.0)
    deep_ok = True
    for seg_lo, seg_hi, v in probe.seg_items():
        if seg_hi <= lo or seg_lo >= hi:
            continue
        inner_lo, inner_hi = max(seg_lo, lo), min(seg_hi, hi)
        if inner_hi - inner_lo < 1e-9:
            continue
        mid = (inner_lo + inner_hi) / 2.0
        if sigma > 0 and mid <= abs_pos:
            continue
        if sigma < 0 and mid >= abs_pos:
            continue
        if v - clock > -depth / 2.0 + 1e-9:
            deep_ok = False
    recent_ok = None
    if m_prev is not None and x_prev_min is not None:
        recent_ok = True
        b_lo = abs_pos - sigma * x_prev_min
        lo2, hi2 = (min(abs_pos, b_lo), max(abs_pos, b_lo))
        for seg_lo, seg_hi, v in probe.seg_items():
            inner_lo, inner_hi = max(seg_lo, lo2), min(seg_hi, hi2)
            if inner_hi - inner_lo < 1e-9:
                continue
            if v - clock < -m_prev - 1e-9:
                recent_ok = False
    return deep_ok, recent_ok


def detect_blocks(
    proc: PotentialProcess,
    horizon: float,
    max_levels: int | None = None,
    check_shape: bool = False,
) -> Epoch:
    """Segment one epoch into blocks, stopping at the first failure.

    The process must be serving.  Depths are measured against the potential
    frozen at the epoch start.  The epoch ends on a block failure, on the
    horizon, or after ``max_levels`` completed blocks.
    """
    if proc.circle:
        raise ContractViolation("block detection runs on the line")
    if proc.regime is not Regime.SERVING:
        raise ContractViolation("an epoch must start in the serving regime")

    origin = proc.s
    t0 = proc.clock
    frozen = proc.profile.copy()
    traveled0 = proc.traveled
    departures0 = proc.departures
    epoch = Epoch(start_clock=t0, sigma=1.0)
    epoch.trace.append((0.0, 0.0, 0.0))

    def local_time():
        return proc.clock - t0

    def frozen_u(abs_pos):
        return frozen.w_usc(abs_pos) - t0

    def note_event():
        epoch.trace.append(
            (local_time(), proc.s - origin, proc.traveled - traveled0)
        )

    def fail(record, reason):
        record.failed_condition = reason
        record.success = False
        epoch.failed_level = record.level
        epoch.end_reason = "failed"
        epoch.records.append(record)
        epoch.departures = proc.departures - departures0
        return epoch

    def out_of_time(record):
        record.failed_condition = "incomplete"
        epoch.records.append(record)
        epoch.departures = proc.departures - departures0
        epoch.end_reason = "horizon"
        return epoch

    # ---- block 0: one departure, then travel to the revealed customer
    rec = BlockRecord(level=0, start_time=0.0, start_pos=0.0, depth=0.0)
    if proc.clock + proc.next_dt() > horizon:
        return out_of_time(rec)
    ev = proc.step()
    note_event()
    if ev.kind != "departure":
        raise ContractViolation("a serving epoch must open with a departure")
    if proc.clock + proc.next_dt() > horizon:
        return out_of_time(rec)
    ev = proc.step()
    note_event()
    if ev.kind != "service_start":
        raise ContractViolation("block 0 must close with a service start")

    delta = proc.s - origin
    epoch.sigma = 1.0 if delta >= 0.0 else -1.0  # exact zero resolved forward
    z_prev = 0.0  # Z_0
    z_cur = epoch.sigma * delta  # Z_1
    l_cur = local_time()  # L_1
    depth_cur = l_cur - frozen_u(proc.s)  # N_1

    params0 = block_params(0, 1.0, depth_cur, proc.config.speed)
    rec.params = params0
    rec.served = 1
    rec.advance = z_cur
    rec.duration = l_cur
    rec.traveled = proc.traveled - traveled0
    rec.complete = True
    if not params0.advance_min - _POS_TOL <= z_cur <= params0.advance_max + _POS_TOL:
        reason = "advance_low" if z_cur < params0.advance_min else "advance_high"
        return fail(rec, reason)
    if not params0.duration_min - _POS_TOL <= l_cur <= params0.duration_max + _POS_TOL:
        reason = "duration_low" if l_cur < params0.duration_min else "duration_high"
        return fail(rec, reason)
    rec.success = True
    epoch.records.append(rec)

    # ---- blocks 1, 2, ...
    level = 1
    m_prev = rec.duration
    x_prev_min = None
    while max_levels is None or level <= max_levels:
        quota = level_quota(level)
        rec = BlockRecord(level=level, start_time=l_cur, start_pos=z_cur, depth=depth_cur)
        if check_shape:
            rec.entry_deep_ok, rec.entry_recent_ok = _entry_shape(
                proc, origin, epoch.sigma, z_cur, depth_cur, m_prev, x_prev_min
            )
        served = 0
        forward = 0
        frontier = z_cur
        travel_base = proc.traveled
        # rough duration cap to abort hopeless blocks early
        duration_cap = 2.0 * (quota + 1) + 3.0 * (3.0 * quota / depth_cur) / proc.config.speed

        closed = False
        while not closed:
            if proc.clock + proc.next_dt() > horizon:
                rec.served = served
                return out_of_time(rec)
            ev = proc.step()
            note_event()
            pos = epoch.sigma * (proc.s - origin)
            if pos <= z_prev + _POS_TOL:
                rec.served = served
                return fail(rec, "confinement")
            if ev.kind == "departure":
                served += 1
                if served > quota + 1:
                    rec.served = served
                    return fail(rec, "served_high")
            elif ev.kind == "service_start":
                if pos > frontier + _POS_TOL:
                    forward += 1
                    frontier = pos
                    if forward == quota:
                        closed = True
            if local_time() - rec.start_time > duration_cap + _POS_TOL:
                rec.served = served
                return fail(rec, "duration_high")

        # block closed at the quota-th forward record
        l_next = local_time()
        z_next = frontier
        depth_next = l_next - frozen_u(proc.s)
        params = block_params(level, depth_cur, depth_next, proc.config.speed)
        rec.params = params
        rec.served = served
        rec.advance = z_next - z_cur
        rec.duration = l_next - rec.start_time
        rec.traveled = proc.traveled - travel_base
        rec.complete = True

        if not params.served_min <= served <= params.served_max:
            reason = "served_low" if served < params.served_min else "served_high"
            return fail(rec, reason)
        if not params.advance_min - _POS_TOL <= rec.advance <= params.advance_max + _POS_TOL:
            reason = "advance_low" if rec.advance < params.advance_min else "advance_high"
            return fail(rec, reason)
        if not params.duration_min - _POS_TOL <= rec.duration <= params.duration_max + _POS_TOL:
            reason = "duration_low" if rec.duration < params.duration_min else "duration_high"
            return fail(rec, reason)
        slack = 4.0 * params.mass_slack / depth_cur
        if rec.traveled > rec.advance + slack + _POS_TOL:
            return fail(rec, "travel_excess")
        if level == 1 and abs(rec.traveled - rec.advance) > 1e-9:
            return fail(rec, "monotone_travel")
        rec.success = True
        epoch.records.append(rec)

        x_prev_min = params.advance_min
        m_prev = rec.duration
        z_prev, z_cur, l_cur, depth_cur = z_cur, z_next, l_next, depth_next
        level += 1

    epoch.departures = proc.departures - departures0
    epoch.end_reason = "horizon"
    return epoch


# ---------------------------------------------------------------------------
# renewals


@dataclass
class TransienceReport:
    """Outcome of the renewal detector on one trajectory."""

    epochs: list[Epoch]
    renewals: int  # K: failed epochs before the settled one
    settle_time: float | None  # T_Z, absolute clock of the settled epoch start
    served_before_settle: int | None
    served_cap_sum: float | None  # sum of cumulative caps at the failure levels
    censored: bool
    strong_transience_ok: bool | None
    travel_bound_ok: bool | None
    scope_note: str = SCOPE_NOTE

    def level_counts(self):
        attempts: dict[int, int] = {}
        successes: dict[int, int] = {}
        for epoch in self.epochs:
            for rec in epoch.records:
                if not rec.complete:
                    continue
                attempts[rec.level] = attempts.get(rec.level, 0) + 1
                if rec.success:
                    successes[rec.level] = successes.get(rec.level, 0) + 1
        return attempts, successes


def renewal_transience(
    proc: PotentialProcess,
    horizon: float,
    max_levels: int | None = None,
    check_shape: bool = False,
) -> TransienceReport:
    """Run block detection with restarts until an epoch never fails.

    The settle time is the start of the first failure-free epoch within the
    horizon; a run whose first epoch never fails settles at time 0.  When no
    failure-free epoch with at least one completed block fits before the
    horizon the report is censored.
    """
    epochs: list[Epoch] = []
    clock0 = proc.clock
    while True:
        if not _advance_to_service_start(proc, horizon):
            return TransienceReport(
                epochs, len(epochs), None, None, None, True, None, None
            )
        epoch = detect_blocks(proc, horizon, max_levels=max_levels, check_shape=check_shape)
        epochs.append(epoch)
        if epoch.end_reason == "failed":
            continue
        completed = [r for r in epoch.records if r.complete]
        if epoch.end_reason == "horizon" and completed and epoch.failed_level is None:
            settle = epoch.start_clock - clock0
            served_before = sum(e.departures for e in epochs[:-1])
            cap = sum(served_cap(e.renewal_index) for e in epochs[:-1])
            samples = epoch.oriented_samples()
            return TransienceReport(
                epochs=epochs,
                renewals=len(epochs) - 1,
                settle_time=settle,
                served_before_settle=served_before,
                served_cap_sum=cap,
                censored=False,
                strong_transience_ok=strong_transience_check(samples),
                travel_bound_ok=travel_bound_check(samples),
            )
        return TransienceReport(
            epochs, len(epochs), None, None, None, True, None, None
        )


# ---------------------------------------------------------------------------
# initial states


def ramp_state(
    config: ModelConfig,
    tape: RandomTape,
    rings=((0.02, 1.0),),
    tail_depth: float = 1024.0,
) -> PotentialProcess:
    """Serving line state on a symmetric stepped potential around 0.

    ``rings`` lists (outer_half_width, depth) pairs from the inside out; the
    potential is -depth on each ring and -tail_depth beyond the last ring.
    Depths must at least double outward for the state to be 1/2-unimodal.
    """
    prev = 0.0
    for half_width, _depth in rings:
        if half_width <= prev:
            raise ValueError("ring widths must increase")
        prev = half_width
    starts = []
    values = []
    bounds = [hw for hw, _ in rings]
    for i in range(len(rings) - 1, 0, -1):
        starts.append(-bounds[i])
        values.append(-rings[i][1])
    starts.append(-bounds[0])
    values.append(-rings[0][1])
    for i in range(1, len(rings)):
        starts.append(bounds[i - 1])
        values.append(-rings[i][1])
    starts.append(bounds[-1])
    profile = LineProfile(0.0, starts, values, ("const", -float(tail_depth)))
    return PotentialProcess(profile, 0.0, 0.0, Regime.SERVING, tape, config)


def transience_experiment(
    n_runs: int,
    config: ModelConfig,
    tape: RandomTape,
    horizon: float = 1e4,
    max_levels: int | None = None,
    state_factory=None,
    check_shape: bool = False,
):
    """Renewal detection over independent seeds, with pooled level statistics."""
    reports = []
    for r in range(n_runs):
        run_tape = tape.derive(r)
        if state_factory is None:
            proc = ramp_state(config, run_tape)
        else:
            proc = state_factory(run_tape)
        if not alpha_unimodal_check(proc.profile, proc.s, proc.c, 0.5):
            raise ContractViolation("initial state is not 1/2-unimodal")
        reports.append(
            renewal_transience(proc, proc.clock + horizon, max_levels=max_levels,
                               check_shape=check_shape)
        )
    attempts: dict[int, int] = {}
    successes: dict[int, int] = {}
    for rep in reports:
        a, s = rep.level_counts()
        for k, v in a.items():
            attempts[k] = attempts.get(k, 0) + v
        for k, v in s.items():
            successes[k] = successes.get(k, 0) + v
    return reports, attempts, successes
