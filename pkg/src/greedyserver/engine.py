"""Deterministic seeded randomness, service-time laws, and model configuration.

The :class:`RandomTape` exposes indexed streams backed by a counter-based
(splitmix64-style) generator, so reading index n of any stream is O(1) and
independent of read order.  Every simulator consumes the tape by departure
count: the n-th departure uses (E_n, U_n) and the n-th service uses T_n.
That convention is what makes the circle/line couplings exact sample-path
identities rather than distributional approximations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

#: Stream identifiers.  ARR carries two components per arrival index:
#: the inter-arrival time (ARR_DT) and the arrival position (ARR_POS).
STREAM_SALTS = {
    "E": 0x45585030,
    "U": 0x554E4946,
    "T": 0x53525643,
    "ARR_DT": 0x41525254,
    "ARR_POS": 0x41525258,
}


def _mix(z: int) -> int:
    # splitmix64 finalizer
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


class RandomTape:
    """Immutable indexed random streams derived from one 64-bit seed."""

    __slots__ = ("seed", "_bases")

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self._bases = {
            name: _mix(_mix(self.seed ^ _mix(salt)) + salt)
            for name, salt in STREAM_SALTS.items()
        }

    def __repr__(self) -> str:
        return f"RandomTape(seed={self.seed})"

    def raw(self, stream: str, index: int) -> int:
        if index < 0:
            raise IndexError(f"stream index must be >= 0, got {index}")
        base = self._bases[stream]
        return _mix(_mix((base + (index + 1) * _GOLDEN) & _MASK))

    def uniform(self, stream: str, index: int) -> float:
        """n-th Uniform(0, 1) variate of a stream; never exactly 0 or 1."""
        return ((self.raw(stream, index) >> 11) + 0.5) * 2.0**-53

    def exponential(self, stream: str, index: int) -> float:
        """n-th unit-rate exponential variate of a stream."""
        return -math.log(self.uniform(stream, index))

    def derive(self, run_id: int) -> "RandomTape":
        """Independent tape for replica ``run_id`` (nothing shared)."""
        return RandomTape(_mix((self.seed + (int(run_id) + 1) * _GOLDEN) & _MASK))


def draw(tape: RandomTape, stream: str, index: int) -> float:
    """n-th variate of a stream under its natural law.

    Streams E and ARR_DT are unit-rate exponentials; U, T and ARR_POS are
    uniforms on (0, 1).  Service laws are applied on top of the raw T
    uniforms by :func:`sample_service`, keeping the tape law-independent.
    """
    if stream in ("E", "ARR_DT"):
        return tape.exponential(stream, index)
    if stream in ("U", "T", "ARR_POS"):
        return tape.uniform(stream, index)
    raise KeyError(f"unknown stream {stream!r}")


@dataclass(frozen=True)
class ServiceLaw:
    """Service-time law with mean 1/mu.

    kind is one of "exp", "det", "geom".  The geometric law takes values on
    the lattice {tick, 2*tick, ...} with success probability ``success`` per
    tick; tick defaults to success/mu so the mean constraint tick/success =
    1/mu holds by construction.  success = 1 degenerates to deterministic.
    """

    kind: str
    mu: float
    success: float = 1.0
    tick: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("exp", "det", "geom"):
            raise ValueError(f"unknown service law {self.kind!r}")
        if self.mu <= 0.0:
            raise ValueError("service rate mu must be positive")
        if self.kind == "geom":
            if not (0.0 < self.success <= 1.0):
                raise ValueError("geometric success probability must be in (0, 1]")
            tick = self.tick
            if tick is None:
                tick = self.success / self.mu
                object.__setattr__(self, "tick", tick)
            if abs(tick / self.success - 1.0 / self.mu) > 1e-12:
                raise ValueError(
                    "geometric parameters violate tick/success = 1/mu: "
                    f"tick={tick}, success={self.success}, mu={self.mu}"
                )

    @property
    def mean(self) -> float:
        return 1.0 / self.mu

    def sample(self, tape: RandomTape, index: int) -> float:
        if self.kind == "det":
            return 1.0 / self.mu
        u = tape.uniform("T", index)
        if self.kind == "exp":
            return -math.log(u) / self.mu
        if self.success >= 1.0:
            return self.tick
        trials = math.ceil(math.log(u) / math.log1p(-self.success))
        return self.tick * max(trials, 1)


def sample_service(law: ServiceLaw, tape: RandomTape, index: int) -> float:
    """Service time T_n for the n-th departure under ``law``."""
    return law.sample(tape, index)


@dataclass(frozen=True)
class ModelConfig:
    """Arrival, service and motion parameters shared by all simulators.

    lam = 0 is accepted so that no-arrival sanity runs work; the drift
    machinery separately requires 0 < lam < mu.  lam >= mu is allowed here
    on purpose (instability experiments).
    """

    lam: float
    mu: float = 1.0
    speed: float = 1.0
    service: ServiceLaw | None = None
    space: str = "circle"
    polling_idle_moves: bool = True

    def __post_init__(self) -> None:
        if self.lam < 0.0:
            raise ValueError("arrival rate lam must be >= 0")
        if self.mu <= 0.0 or self.speed <= 0.0:
            raise ValueError("mu and speed must be positive")
        if self.space not in ("circle", "line"):
            raise ValueError(f"unknown space {self.space!r}")
        if self.service is None:
            object.__setattr__(self, "service", ServiceLaw("exp", self.mu))
        elif abs(self.service.mu - self.mu) > 1e-12:
            raise ValueError("service law rate does not match config mu")

    def describe(self) -> dict:
        svc = self.service
        label = svc.kind if svc.kind != "geom" else f"geom:{svc.success:g}"
        return {
            "lambda": self.lam,
            "mu": self.mu,
            "speed": self.speed,
            "service": label,
            "space": self.space,
        }


def parse_service(spec: str, mu: float) -> ServiceLaw:
    """Parse a CLI service spec: "exp", "det" or "geom:<p>"."""
    if spec == "exp":
        return ServiceLaw("exp", mu)
    if spec == "det":
        return ServiceLaw("det", mu)
    if spec.startswith("geom:"):
        return ServiceLaw("geom", mu, success=float(spec.split(":", 1)[1]))
    if spec == "geom":
        return ServiceLaw("geom", mu, success=0.5)
    raise ValueError(f"unknown service spec {spec!r}")
