"""Arithmetic on the unit circle R/Z: points, arcs, distances, arc unions.

Positions are plain floats kept in their canonical representative in
[0, 1).  Arcs are stored as (start, length) so that the full circle has an
unambiguous representation (length 1.0).  All operations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

#: Absolute tolerance for endpoint coincidence in arc arithmetic.
TOL = 1e-12


class DisjointArcError(ValueError):
    """Raised when two arcs that should overlap or touch do not.

    The growth set is fed only with arcs containing the server, so a
    disjoint union signals a bug in the dynamics, not a user error.
    """


def norm_point(x: float) -> float:
    """Canonical representative of ``x`` in [0, 1)."""
    return x % 1.0


def vec_dist(x: float, y: float) -> float:
    """Clockwise distance from ``x`` to ``y``, in [0, 1)."""
    return (y - x) % 1.0


def dist(x: float, y: float) -> float:
    """Distance on the circle, in [0, 0.5]."""
    d = (y - x) % 1.0
    return d if d <= 0.5 else 1.0 - d


@dataclass(frozen=True)
class Arc:
    """Oriented arc [start, start + length] on the circle.

    ``length`` lives in [0, 1]; length 1.0 means the whole circle.  The
    closure flags only matter for membership tests at the endpoints.
    """

    start: float
    length: float
    closed_start: bool = True
    closed_end: bool = True

    def __post_init__(self) -> None:
        if not (-TOL <= self.length <= 1.0 + TOL):
            raise ValueError(f"arc length out of range: {self.length}")
        object.__setattr__(self, "start", norm_point(self.start))
        object.__setattr__(self, "length", min(max(self.length, 0.0), 1.0))

    @property
    def end(self) -> float:
        return norm_point(self.start + self.length)

    @property
    def is_full(self) -> bool:
        return self.length >= 1.0 - TOL

    @property
    def is_empty(self) -> bool:
        return self.length <= TOL and not (self.closed_start or self.closed_end)


FULL_CIRCLE = Arc(0.0, 1.0)


def arc_contains(a: Arc, x: float) -> bool:
    """Membership of point ``x`` in arc ``a``, honouring closure flags."""
    if a.is_full:
        return True
    off = vec_dist(a.start, norm_point(x))
    if off <= TOL or off >= 1.0 - TOL:
        return a.closed_start
    if abs(off - a.length) <= TOL:
        return a.closed_end
    return off < a.length


def arc_contains_arc(outer: Arc | None, inner: Arc | None, tol: float = TOL) -> bool:
    """True when ``inner`` is a subset of ``outer`` (up to ``tol``)."""
    if inner is None:
        return True
    if outer is None:
        return False
    if outer.is_full:
        return True
    if inner.is_full:
        return False
    off = vec_dist(outer.start, inner.start)
    if off >= 1.0 - tol:
        off = 0.0
    return off <= outer.length + tol and off + inner.length <= outer.length + tol


def grow_arc(current: Arc | None, added: Arc) -> Arc:
    """Union of the growth set with a newly cleared arc.

    ``current`` may be None (nothing cleared yet).  The result is the merged
    arc, or ``FULL_CIRCLE`` once the combined length reaches 1.  Raises
    :class:`DisjointArcError` when the inputs neither overlap nor touch.
    """
    if current is None:
        if added.is_full:
            return FULL_CIRCLE
        return Arc(added.start, added.length)
    if current.is_full or added.is_full:
        return FULL_CIRCLE

    lo = current.start
    hi = current.start + current.length
    merged = False
    for shift in (-1.0, 0.0, 1.0):
        b0 = added.start + shift
        b1 = b0 + added.length
        if b0 <= hi + TOL and b1 >= lo - TOL:
            lo = min(lo, b0)
            hi = max(hi, b1)
            merged = True
    if not merged:
        raise DisjointArcError(
            f"cleared arc {added} does not touch growth set {current}"
        )
    if hi - lo >= 1.0 - TOL:
        return FULL_CIRCLE
    return Arc(norm_point(lo), hi - lo)


def circ_close(x: float, y: float, tol: float) -> bool:
    """Whether two positions coincide on the circle within ``tol``."""
    return dist(norm_point(x), norm_point(y)) <= tol
