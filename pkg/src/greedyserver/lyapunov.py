"""Drift machinery: derived constants, functionals, stopping times, experiments.

The badness functional combines the accumulated unseen intensity with the
age of the oldest point.  A run is watched until the revealed region swallows
the valley (the old, customer-dense arc), covers the whole circle, or hits a
proportional safety deadline; the report captures everything needed to check
the drift and conservation identities per run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .engine import ModelConfig, RandomTape
from .geometry import FULL_CIRCLE, Arc, arc_contains_arc, grow_arc
from .potential_sim import (
    CircleProfile,
    ContractViolation,
    PotentialProcess,
    Regime,
    constant_state,
    is_proper,
)


@dataclass(frozen=True)
class Constants:
    """Derived quantities for the drift experiments (requires 0 < lam < mu).

    headroom        rate margin 1 - lam (service rate normalized to 1)
    deadline_factor safety deadline multiplier: a run is cut at factor * B
    contraction     targeted relative drop of B at the stopping time
    slack           fluctuation allowance used by the dominating walk
    b_small         threshold under which direct regeneration is attempted
    """

    lam: float
    mu: float
    speed: float
    headroom: float
    deadline_factor: float
    contraction: float
    slack: float
    b_small: float

    def __post_init__(self) -> None:
        assert self.deadline_factor > 2.0
        assert 2.0 * self.slack * self.deadline_factor < 1.0
        assert 4.0 * self.contraction < self.headroom
        assert self.lam + 4.0 * self.contraction < 1.0


def derive_constants(
    lam: float, mu: float = 1.0, speed: float = 1.0, b_small: float = 1.0
) -> Constants:
    """Build the drift constants; rejects lam outside (0, mu)."""
    if not (0.0 < lam < mu):
        raise ValueError("drift experiments need 0 < lam < mu")
    if lam >= 1.0:
        raise ValueError("arrival rate must be below 1 in service-rate units")
    headroom = 1.0 - lam
    deadline_factor = 2.0 / headroom
    contraction = headroom * lam / 8.0
    slack = contraction / (2.0 * deadline_factor)
    return Constants(
        lam, mu, speed, headroom, deadline_factor, contraction, slack, b_small
    )


def functional_N(profile: CircleProfile) -> float:
    """Age of the oldest point: sup of -u."""
    return profile.depth()


def functional_B(profile: CircleProfile, constants: Constants) -> float:
    """Badness functional: A + 4 * contraction * N."""
    return profile.intensity(constants.lam) + 4.0 * constants.contraction * profile.depth()


def valley_set(profile: CircleProfile, tol: float = 1e-9):
    """The open region where u < -N/2: an arc, the full circle, or None.

    Only defined for proper profiles; a disconnected sub-level set raises.
    """
    depth = profile.depth()
    if depth <= tol:
        return None  # u identically 0: the strict condition never holds
    threshold = profile.clock - depth / 2.0  # w < threshold
    flags = [v < threshold for v in profile.values]
    if all(flags):
        return FULL_CIRCLE
    if not any(flags):
        return None
    k = len(flags)
    segs = list(profile.seg_items())
    # find the contiguous run of marked segments (circularly)
    first = None
    for i in range(k):
        if flags[i] and not flags[i - 1]:
            if first is not None:
                raise ContractViolation("valley set is disconnected; improper state")
            first = i
    run = []
    i = first
    while flags[i % k]:
        run.append(i % k)
        i += 1
        if len(run) > k:
            break
    for j in range(k):
        if flags[j] and j not in run:
            raise ContractViolation("valley set is disconnected; improper state")
    lo = segs[run[0]][0]
    length = sum(segs[j][1] - segs[j][0] for j in run)
    return Arc(lo, length, closed_start=False, closed_end=False)


@dataclass
class StoppingReport:
    """Everything observed on one run to the stopping time."""

    fired: str  # "valley" | "cover" | "deadline"
    elapsed: float
    intensity_before: float
    depth_before: float
    value_before: float
    intensity_after: float
    depth_after: float
    value_after: float
    moving_time: float
    serving_time: float
    idle_time: float
    departures: int
    success: bool  # value_after <= (1 - contraction) * value_before
    consumed_mass: float
    valley_time: float | None = None
    valley_index: int | None = None
    cover_time: float | None = None
    cover_index: int | None = None
    deadline: float = 0.0


def run_to_stopping(
    state: PotentialProcess,
    constants: Constants,
    on_event=None,
) -> StoppingReport:
    """Run until the valley is revealed, the circle is covered, or the deadline.

    The growth set is maintained as a growing arc, fed by each cleared arc
    and set to the full circle by an idle transition.  ``on_event`` (if
    given) is called with (state, event, growth_arc) after every event; it
    is the hook the invariant suites use.
    """
    if not state.circle:
        raise ContractViolation("stopping-time runs are defined on the circle")
    profile0 = state.profile
    a0 = profile0.intensity(constants.lam)
    n0 = profile0.depth()
    b0 = a0 + 4.0 * constants.contraction * n0
    if b0 <= 0.0:
        raise ValueError("run_to_stopping needs B(u) > 0")
    ok, _ = is_proper(state)
    if not ok:
        raise ContractViolation("run_to_stopping needs a proper state")

    valley = valley_set(profile0)
    deadline = constants.deadline_factor * b0
    t0 = state.clock
    consumed0 = state.consumed_mass
    departures0 = state.departures
    base = (state.moving_time, state.serving_time, state.idle_time)

    growth: Arc | None = None
    valley_time = valley_index = None
    cover_time = cover_index = None
    fired = None

    if valley is None:
        valley_time, valley_index = 0.0, -1
        fired = "valley"

    while fired is None:
        dt = state.next_dt()
        if state.clock + dt - t0 >= deadline:
            state.advance(deadline - (state.clock - t0))
            fired = "deadline"
            break
        ev = state.step()
        if ev.kind in ("departure", "regeneration"):
            if ev.cleared == "all":
                growth = FULL_CIRCLE
            else:
                growth = grow_arc(growth, Arc(ev.cleared[0], ev.cleared[1]))
            if valley_time is None and arc_contains_arc(growth, valley):
                valley_time = state.clock - t0
                valley_index = ev.index
            if cover_time is None and growth.is_full:
                cover_time = state.clock - t0
                cover_index = ev.index
            if valley_time is not None:
                fired = "valley"
            elif cover_time is not None:
                fired = "cover"
        if on_event is not None:
            on_event(state, ev, growth)

    elapsed = state.clock - t0
    a1 = state.profile.intensity(constants.lam)
    n1 = state.profile.depth()
    b1 = a1 + 4.0 * constants.contraction * n1
    return StoppingReport(
        fired=fired,
        elapsed=elapsed,
        intensity_before=a0,
        depth_before=n0,
        value_before=b0,
        intensity_after=a1,
        depth_after=n1,
        value_after=b1,
        moving_time=state.moving_time - base[0],
        serving_time=state.serving_time - base[1],
        idle_time=state.idle_time - base[2],
        departures=state.departures - departures0,
        success=b1 <= (1.0 - constants.contraction) * b0,
        consumed_mass=state.consumed_mass - consumed0,
        valley_time=valley_time,
        valley_index=valley_index,
        cover_time=cover_time,
        cover_index=cover_index,
        deadline=deadline,
    )


def state_for_value(
    b_target: float, constants: Constants, config: ModelConfig, tape: RandomTape
) -> PotentialProcess:
    """Constant-potential serving state with B(u) exactly ``b_target``.

    The constant potential is the worst case for the valley: it spans the
    whole circle.
    """
    if b_target <= 0.0:
        raise ValueError("B target must be positive")
    depth = b_target / (constants.lam + 4.0 * constants.contraction)
    return constant_state(config, tape, depth)


def wilson_interval(successes: int, n: int, z: float = 1.959963984540054):
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = (z / denom) * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n))
    return max(0.0, center - half), min(1.0, center + half)


@dataclass
class DriftRow:
    """One line of the drift table."""

    b_target: float
    n_runs: int
    failures: int
    rho_hat: float
    ci_low: float
    ci_high: float
    mean_elapsed: float
    mean_moving: float
    mean_serving: float
    mean_departures: float
    reports: list = field(default_factory=list)


def drift_experiment(
    b_values,
    n_runs: int,
    constants: Constants,
    config: ModelConfig,
    tape: RandomTape,
    keep_reports: bool = False,
    state_factory=None,
) -> list[DriftRow]:
    """Estimate the failure fraction of the contraction event per B value.

    ``state_factory(b, run_tape)`` may supply alternative proper initial
    states; the default is the constant potential realizing B exactly (the
    worst case for the valley, which then spans the whole circle).
    """
    rows = []
    for bi, b in enumerate(b_values):
        if b <= 0.0:
            raise ValueError("B values must be positive")
        failures = 0
        sum_t = sum_m = sum_s = sum_n = 0.0
        reports = []
        for r in range(n_runs):
            run_tape = tape.derive(bi * n_runs + r)
            if state_factory is None:
                state = state_for_value(b, constants, config, run_tape)
            else:
                state = state_factory(b, run_tape)
            rep = run_to_stopping(state, constants)
            if not rep.success:
                failures += 1
            sum_t += rep.elapsed
            sum_m += rep.moving_time
            sum_s += rep.serving_time
            sum_n += rep.departures
            if keep_reports:
                reports.append(rep)
        lo, hi = wilson_interval(failures, n_runs)
        rows.append(
            DriftRow(
                b_target=b,
                n_runs=n_runs,
                failures=failures,
                rho_hat=failures / n_runs,
                ci_low=lo,
                ci_high=hi,
                mean_elapsed=sum_t / n_runs,
                mean_moving=sum_m / n_runs,
                mean_serving=sum_s / n_runs,
                mean_departures=sum_n / n_runs,
                reports=reports,
            )
        )
    return rows


@dataclass
class SmallBResult:
    """Monte Carlo check of the direct-regeneration lower bound."""

    n_runs: int
    successes: int
    p_hat: float
    bound: float
    ci_low: float
    ci_high: float
    time_limit: float


def regeneration_bound(b_small: float, speed: float) -> float:
    """Closed-form lower bound for fast regeneration from B <= b_small."""
    return (1.0 - math.exp(-1.0)) * math.exp(-b_small - 1.0 - 1.0 / (2.0 * speed))


def small_B_regeneration(
    constants: Constants,
    config: ModelConfig,
    tape: RandomTape,
    n_runs: int,
    state_factory=None,
) -> SmallBResult:
    """Estimate P[regeneration before 1/(2v) + 1] from a B <= b_small state."""
    limit = 1.0 / (2.0 * config.speed) + 1.0
    successes = 0
    for r in range(n_runs):
        run_tape = tape.derive(r)
        if state_factory is None:
            state = state_for_value(constants.b_small, constants, config, run_tape)
        else:
            state = state_factory(run_tape)
        b0 = functional_B(state.profile, constants)
        if b0 > constants.b_small + 1e-9:
            raise ValueError("initial state exceeds the small-B threshold")
        t0 = state.clock
        while True:
            if state.clock - t0 + state.next_dt() >= limit:
                break
            ev = state.step()
            if ev.kind == "regeneration":
                successes += 1
                break
    lo, hi = wilson_interval(successes, n_runs)
    return SmallBResult(
        n_runs=n_runs,
        successes=successes,
        p_hat=successes / n_runs,
        bound=regeneration_bound(constants.b_small, config.speed),
        ci_low=lo,
        ci_high=hi,
        time_limit=limit,
    )


@dataclass
class WalkResult:
    """Hitting times of the two-step dominating walk."""

    samples: list[int]
    censored: int
    up_prob: float
    up_step: float
    down_step: float
    start: float


def dominating_walk(
    start: float,
    up_prob: float,
    up_step: float,
    down_step: float,
    tape: RandomTape,
    n_runs: int,
    horizon_steps: int = 1_000_000,
) -> WalkResult:
    """Simulate S_n = start + sum(Y_i), Y = +up_step w.p. up_prob else -down_step.

    Returns the first times n with S_n <= 0, censored at ``horizon_steps``;
    a run started at or below 0 hits at time 0.
    """
    if not (0.0 <= up_prob < 1.0):
        raise ValueError("up probability must be in [0, 1)")
    if up_step <= 0.0 or down_step <= 0.0:
        raise ValueError("step sizes must be positive")
    samples = []
    censored = 0
    for r in range(n_runs):
        run_tape = tape.derive(r)
        pos = start
        if pos <= 0.0:
            samples.append(0)
            continue
        n = 0
        while n < horizon_steps:
            u = run_tape.uniform("U", n)
            pos += up_step if u < up_prob else -down_step
            n += 1
            if pos <= 0.0:
                samples.append(n)
                break
        else:
            censored += 1
    return WalkResult(samples, censored, up_prob, up_step, down_step, start)


@dataclass
class IteratedRound:
    log_ratio: float  # log(B / b_small) after the round
    report: StoppingReport


def iterate_to_threshold(
    state: PotentialProcess,
    constants: Constants,
    max_rounds: int = 200,
) -> list[IteratedRound]:
    """Repeat run_to_stopping until B drops to b_small; logs the D_n sequence.

    This is the composite experiment behind the stability argument: the
    logged sequence is meant to be compared against the dominating walk.
    """
    rounds = []
    for _ in range(max_rounds):
        b = functional_B(state.profile, constants)
        if b <= constants.b_small:
            break
        rep = run_to_stopping(state, constants)
        rounds.append(
            IteratedRound(math.log(max(rep.value_after, 1e-300) / constants.b_small), rep)
        )
        if rep.value_after <= constants.b_small:
            break
    return rounds
