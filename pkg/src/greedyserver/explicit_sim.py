"""Full-information simulation of the customer set, the server and its target.

Two servers are provided: the greedy one, which targets the nearest waiting
customer and ignores arrivals while traveling, and the clockwise polling
baseline.  Both are event driven; travel completion times are computed in
closed form so there is no step-size error anywhere.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

from .engine import ModelConfig, RandomTape
from .geometry import dist, norm_point, vec_dist
from .potential_sim import Event, Regime, SimulationError


def velocity(s: float, c: float | None, speed: float) -> float:
    """Server velocity: 0 when served/idle, +speed clockwise, -speed otherwise.

    The tie at distance exactly 1/2 goes counterclockwise.
    """
    if c is None or c == s:
        return 0.0
    return speed if vec_dist(s, c) < vec_dist(c, s) else -speed


def select_target(s: float, customers) -> float | None:
    """Nearest waiting customer, ties broken clockwise; None when empty.

    Distances within 1e-12 count as tied, matching the endpoint-coincidence
    tolerance used throughout the circle arithmetic.
    """
    best = None
    best_d = math.inf
    best_vec = math.inf
    for x in customers:
        d = dist(s, x)
        if d < best_d - 1e-12:
            best, best_d, best_vec = x, d, vec_dist(s, x)
        elif d <= best_d + 1e-12:
            vec = vec_dist(s, x)
            if vec < best_vec:
                best, best_d, best_vec = x, min(best_d, d), vec
    return best


class ExplicitProcess:
    """Greedy server with the explicit customer multiset."""

    def __init__(
        self,
        config: ModelConfig,
        tape: RandomTape,
        customers=(),
        s: float = 0.0,
        record: bool = False,
    ):
        if config.space != "circle":
            raise ValueError("the explicit simulator runs on the circle")
        self.config = config
        self.tape = tape
        self.customers = [norm_point(x) for x in customers]
        self.s = norm_point(s)
        self.c = select_target(self.s, self.customers)
        if self.c is None:
            self.regime = Regime.IDLE
        elif self.c == self.s:
            self.regime = Regime.SERVING
        else:
            self.regime = Regime.MOVING
        self.clock = 0.0
        self.departures = 0
        self.arrivals = 0
        self.moving_time = 0.0
        self.serving_time = 0.0
        self.idle_time = 0.0
        self.traveled = 0.0
        self._service_left = (
            config.service.sample(tape, 0) if self.regime is Regime.SERVING else None
        )
        self._next_arrival: float | None = None  # absolute time
        self.log: list[Event] | None = [] if record else None
        self.log_counts: list[int] = []

    # -- scheduling

    def _arrival_time(self) -> float:
        if self._next_arrival is None:
            lam = self.config.lam
            if lam <= 0.0:
                self._next_arrival = math.inf
            else:
                wait = self.tape.exponential("ARR_DT", self.arrivals) / lam
                self._next_arrival = self.clock + wait
        return self._next_arrival

    def _own_dt(self) -> float:
        if self.regime is Regime.SERVING:
            return self._service_left
        if self.regime is Regime.MOVING:
            return dist(self.s, self.c) / self.config.speed
        return math.inf

    def _advance(self, dt: float) -> None:
        if dt == 0.0:
            return
        self.clock += dt
        if self.regime is Regime.MOVING:
            move = velocity(self.s, self.c, self.config.speed) * dt
            self.s = norm_point(self.s + move)
            self.traveled += abs(move)
            self.moving_time += dt
        elif self.regime is Regime.SERVING:
            self._service_left -= dt
            self.serving_time += dt
        else:
            self.idle_time += dt

    def _emit(self, ev: Event) -> Event:
        if self.log is not None:
            self.log.append(ev)
            self.log_counts.append(len(self.customers))
        return ev

    def step(self) -> Event:
        """Advance to the next event and apply the matching transition.

        At an exact float tie between a departure and an arrival the
        departure is processed first.
        """
        own = self._own_dt()
        arrival = self._arrival_time() - self.clock
        if not (math.isfinite(own) or math.isfinite(arrival)):
            raise SimulationError("no further events (idle with lam = 0)")

        if own <= arrival:
            self._advance(own)
            if self.regime is Regime.MOVING:
                self.s = self.c
                self.regime = Regime.SERVING
                self._service_left = self.config.service.sample(
                    self.tape, self.departures
                )
                return self._emit(
                    Event(self.clock, "service_start", self.s, self.c)
                )
            return self._depart()

        self._advance(arrival)
        pos = self.tape.uniform("ARR_POS", self.arrivals)
        self.arrivals += 1
        self._next_arrival = None
        self.customers.append(pos)
        if self.regime is Regime.IDLE:
            self.c = pos
            if pos == self.s:
                self.regime = Regime.SERVING
                self._service_left = self.config.service.sample(
                    self.tape, self.departures
                )
            else:
                self.regime = Regime.MOVING
        return self._emit(Event(self.clock, "arrival", self.s, self.c))

    def _depart(self) -> Event:
        n = self.departures
        self.departures += 1
        self._service_left = None
        self.customers.remove(self.c)
        self.c = select_target(self.s, self.customers)
        if self.c is None:
            self.regime = Regime.IDLE
            return self._emit(
                Event(self.clock, "regeneration", self.s, None, index=n)
            )
        if self.c == self.s:
            self.regime = Regime.SERVING
            self._service_left = self.config.service.sample(
                self.tape, self.departures
            )
        else:
            self.regime = Regime.MOVING
        return self._emit(Event(self.clock, "departure", self.s, self.c, index=n))

    @property
    def n_customers(self) -> int:
        return len(self.customers)


class PollingProcess:
    """Clockwise polling server: direction never depends on the state.

    When the system is empty the server keeps rolling clockwise by default;
    config.polling_idle_moves = False freezes it instead.
    """

    def __init__(
        self,
        config: ModelConfig,
        tape: RandomTape,
        customers=(),
        s: float = 0.0,
        record: bool = False,
    ):
        if config.space != "circle":
            raise ValueError("the polling simulator runs on the circle")
        self.config = config
        self.tape = tape
        self.customers = [norm_point(x) for x in customers]
        self.s = norm_point(s)
        self.serving_pos: float | None = None
        self.clock = 0.0
        self.departures = 0
        self.arrivals = 0
        self.moving_time = 0.0
        self.serving_time = 0.0
        self.idle_time = 0.0
        self.traveled = 0.0
        self._service_left: float | None = None
        self._next_arrival: float | None = None
        self.log: list[Event] | None = [] if record else None
        self.log_counts: list[int] = []
        self._maybe_start_service()

    def _maybe_start_service(self) -> None:
        for x in self.customers:
            if x == self.s:
                self.serving_pos = x
                self._service_left = self.config.service.sample(
                    self.tape, self.departures
                )
                return

    @property
    def serving(self) -> bool:
        return self.serving_pos is not None

    @property
    def rolling(self) -> bool:
        """Whether the server is in clockwise motion right now."""
        if self.serving:
            return False
        return bool(self.customers) or self.config.polling_idle_moves

    def _arrival_time(self) -> float:
        if self._next_arrival is None:
            lam = self.config.lam
            if lam <= 0.0:
                self._next_arrival = math.inf
            else:
                wait = self.tape.exponential("ARR_DT", self.arrivals) / lam
                self._next_arrival = self.clock + wait
        return self._next_arrival

    def _own_dt(self) -> float:
        if self.serving:
            return self._service_left
        if not self.customers:
            return math.inf
        gap = min(vec_dist(self.s, x) for x in self.customers)
        return gap / self.config.speed

    def _advance(self, dt: float) -> None:
        if dt == 0.0:
            return
        self.clock += dt
        if self.serving:
            self._service_left -= dt
            self.serving_time += dt
            return
        if self.rolling:
            move = self.config.speed * dt
            self.s = norm_point(self.s + move)
            self.traveled += move
        if self.customers:
            self.moving_time += dt
        else:
            self.idle_time += dt

    def _emit(self, ev: Event) -> Event:
        if self.log is not None:
            self.log.append(ev)
            self.log_counts.append(len(self.customers))
        return ev

    def step(self) -> Event:
        own = self._own_dt()
        arrival = self._arrival_time() - self.clock
        if not (math.isfinite(own) or math.isfinite(arrival)):
            raise SimulationError("no further events (idle with lam = 0)")

        if own <= arrival:
            self._advance(own)
            if self.serving:
                n = self.departures
                self.departures += 1
                self.customers.remove(self.serving_pos)
                self.serving_pos = None
                self._service_left = None
                kind = "departure" if self.customers else "regeneration"
                self._maybe_start_service()
                return self._emit(
                    Event(self.clock, kind, self.s, self.serving_pos, index=n)
                )
            # reached the nearest clockwise customer
            reached = min(self.customers, key=lambda x: vec_dist(self.s, x))
            self.s = reached
            self.serving_pos = reached
            self._service_left = self.config.service.sample(
                self.tape, self.departures
            )
            return self._emit(Event(self.clock, "service_start", self.s, reached))

        self._advance(arrival)
        pos = self.tape.uniform("ARR_POS", self.arrivals)
        self.arrivals += 1
        self._next_arrival = None
        self.customers.append(pos)
        if not self.serving and pos == self.s:
            self._maybe_start_service()
        return self._emit(Event(self.clock, "arrival", self.s, self.serving_pos))

    @property
    def n_customers(self) -> int:
        return len(self.customers)


def polling_step(process: PollingProcess) -> Event:
    """One event of the polling dynamics (alias for ``process.step()``)."""
    return process.step()


@dataclass
class RegenerationResult:
    """Outcome of one run to the first emptying of the system."""

    tau: float | None
    censored: bool
    served: int
    moving_time: float
    serving_time: float
    idle_time: float
    first_arrival: float | None = None
    log: list = field(default_factory=list)
    log_counts: list = field(default_factory=list)

    @property
    def busy_length(self) -> float | None:
        if self.tau is None or self.first_arrival is None:
            return None
        return self.tau - self.first_arrival


def run_until_regeneration(
    config: ModelConfig,
    tape: RandomTape,
    customers=(),
    s: float = 0.0,
    horizon: float = 1e5,
    model: str = "greedy",
    record: bool = False,
) -> RegenerationResult:
    """Simulate until the system first becomes empty, or censor at ``horizon``.

    Starting from the empty state the run waits for the first arrival; the
    regeneration then closes the first busy period.
    """
    if model == "greedy":
        proc = ExplicitProcess(config, tape, customers, s, record=record)
    elif model == "polling":
        proc = PollingProcess(config, tape, customers, s, record=record)
    else:
        raise ValueError(f"unknown model {model!r}")

    first_arrival = 0.0 if customers else None
    started = bool(customers)
    while True:
        if config.lam <= 0.0 and proc.n_customers == 0:
            return RegenerationResult(
                None, True, proc.departures, proc.moving_time,
                proc.serving_time, proc.idle_time, first_arrival,
                proc.log or [], proc.log_counts,
            )
        ev = proc.step()
        if ev.kind == "arrival" and not started:
            started = True
            first_arrival = ev.time
        if ev.kind == "regeneration" and started:
            return RegenerationResult(
                ev.time, False, proc.departures, proc.moving_time,
                proc.serving_time, proc.idle_time, first_arrival,
                proc.log or [], proc.log_counts,
            )
        if ev.time > horizon:
            return RegenerationResult(
                None, True, proc.departures, proc.moving_time,
                proc.serving_time, proc.idle_time, first_arrival,
                proc.log or [], proc.log_counts,
            )


def write_event_log(events, path, n_customers_by_event=None) -> None:
    """Export an event log as CSV: time, kind, S, C, n_customers."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["time", "kind", "S", "C", "n_customers"])
        for i, ev in enumerate(events):
            n = "" if n_customers_by_event is None else n_customers_by_event[i]
            writer.writerow([
                format(ev.time, ".17g"),
                ev.kind,
                format(ev.s, ".17g"),
                "" if ev.c is None else format(ev.c, ".17g"),
                n,
            ])
