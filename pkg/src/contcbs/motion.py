"""Timed actions, plans and collision geometry of constant-velocity disk agents."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .graph import Graph, point_segment_distance

INF = math.inf
EPS = 1e-9  # absolute tolerance for geometry and time comparisons
DEFAULT_RADIUS = math.sqrt(2) / 4


@dataclass(frozen=True)
class Interval:
    """Half-open time interval ``[lo, hi)``; ``hi`` may be ``inf``."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi})")

    def contains(self, t: float) -> bool:
        return self.lo - EPS <= t < self.hi

    def __repr__(self):
        return f"[{self.lo:.6g}, {self.hi:.6g})"


@dataclass(frozen=True)
class Action:
    """Move along edge ``u -> v`` or, when ``u == v``, wait at ``u``."""

    u: int
    v: int
    duration: float

    @property
    def is_wait(self) -> bool:
        return self.u == self.v

    @classmethod
    def move(cls, graph: Graph, u: int, v: int) -> "Action":
        return cls(u, v, graph.weight(u, v))

    @classmethod
    def wait(cls, v: int, duration: float) -> "Action":
        if not duration > 0:
            raise ValueError("wait duration must be positive")
        return cls(v, v, duration)

    def __repr__(self):
        if self.is_wait:
            return f"wait({self.u}, {self.duration:.6g})"
        return f"move({self.u}->{self.v})"


@dataclass(frozen=True)
class TimedAction:
    action: Action
    start: float

    @property
    def end(self) -> float:
        return self.start + self.action.duration

    def __repr__(self):
        return f"{self.action!r}@{self.start:.6g}"


@dataclass
class Plan:
    """Contiguous timed actions from ``start`` at t=0; the agent then waits at
    its last vertex forever (that wait is not part of ``actions`` nor the cost)."""

    agent: int
    start: int
    actions: list[TimedAction] = field(default_factory=list)

    @property
    def goal(self) -> int:
        return self.actions[-1].action.v if self.actions else self.start

    @property
    def cost(self) -> float:
        return plan_cost(self)

    def with_terminal(self) -> list[TimedAction]:
        """Explicit actions followed by the infinite terminal wait."""
        return [*self.actions, TimedAction(Action(self.goal, self.goal, INF), self.cost)]

    def contains(self, action: Action, window: Interval) -> bool:
        return any(ta.action == action and window.contains(ta.start) for ta in self.actions)

    def vertices(self) -> list[int]:
        return [self.start] + [ta.action.v for ta in self.actions if not ta.action.is_wait]


def plan_cost(p: Plan) -> float:
    return p.actions[-1].end if p.actions else 0.0


def plan_from_moves(graph: Graph, agent: int, path: Sequence[int], departures: Sequence[float] | None = None) -> Plan:
    """Build a plan along ``path``; ``departures[i]`` is when edge i is taken
    (defaults to no waiting). Waits are inserted to fill gaps."""
    actions: list[TimedAction] = []
    t = 0.0
    for i, (u, v) in enumerate(zip(path, path[1:])):
        dep = t if departures is None else departures[i]
        if dep < t - EPS:
            raise ValueError("departure before arrival")
        if dep > t + EPS:
            actions.append(TimedAction(Action(u, u, dep - t), t))
            t = dep
        a = Action.move(graph, u, v)
        actions.append(TimedAction(a, t))
        t += a.duration
    return Plan(agent, path[0], actions)


# --- kinematics -------------------------------------------------------------
# A timed action as (t0, t1, px, py, vx, vy): position(t) = p + v * (t - t0).

def kinematics(ta: TimedAction, graph: Graph) -> tuple[float, float, float, float, float, float]:
    a = ta.action
    px, py = graph.coords[a.u]
    if a.is_wait:
        return ta.start, ta.start + a.duration, px, py, 0.0, 0.0
    qx, qy = graph.coords[a.v]
    d = a.duration
    return ta.start, ta.start + d, px, py, (qx - px) / d, (qy - py) / d


def position_at(ta: TimedAction, graph: Graph, t: float) -> tuple[float, float]:
    t0, t1, px, py, vx, vy = kinematics(ta, graph)
    if not t0 - EPS <= t <= t1 + EPS:
        raise ValueError(f"t={t} outside action span [{t0}, {t1}]")
    s = min(max(t - t0, 0.0), t1 - t0)
    return px + vx * s, py + vy * s


def min_distance_sq(ka, kb) -> float:
    """Squared minimum centre distance over the common time window
    (``inf`` if the spans do not overlap with positive length)."""
    lo = ka[0] if ka[0] > kb[0] else kb[0]
    hi = ka[1] if ka[1] < kb[1] else kb[1]
    if not hi > lo:
        return INF
    dx = (ka[2] + ka[4] * (lo - ka[0])) - (kb[2] + kb[4] * (lo - kb[0]))
    dy = (ka[3] + ka[5] * (lo - ka[0])) - (kb[3] + kb[5] * (lo - kb[0]))
    vx, vy = ka[4] - kb[4], ka[5] - kb[5]
    v2 = vx * vx + vy * vy
    if v2 > 0.0:
        s = -(dx * vx + dy * vy) / v2
        span = hi - lo
        s = 0.0 if s < 0.0 else (span if s > span else s)
        dx += vx * s
        dy += vy * s
    return dx * dx + dy * dy


def contact_sq(r_i: float, r_j: float, slack: float = EPS) -> float:
    """Squared centre distance below which two disks collide (tangency is safe)."""
    r = r_i + r_j - slack
    return r * r


def collides(ta_i: TimedAction, ta_j: TimedAction, r_i: float, r_j: float, graph: Graph) -> bool:
    return min_distance_sq(kinematics(ta_i, graph), kinematics(ta_j, graph)) < contact_sq(r_i, r_j)


def _occupancy_window(p, kj, rr: float) -> tuple[float, float] | None:
    """Times at which a disk resting at ``p`` overlaps the moving disk ``kj``."""
    t0, t1, px, py, vx, vy = kj
    dx, dy = px - p[0], py - p[1]
    v2 = vx * vx + vy * vy
    c = dx * dx + dy * dy - rr
    if v2 == 0.0:
        return (t0, t1) if c < 0 else None
    b = dx * vx + dy * vy
    disc = b * b - v2 * c
    if disc <= 0:
        return None
    sq = math.sqrt(disc)
    s0, s1 = (-b - sq) / v2, (-b + sq) / v2
    lo, hi = max(t0, t0 + s0), min(t1, t0 + s1)
    return (lo, hi) if hi > lo else None


def unsafe_interval(
    a_i: Action,
    t_i: float,
    ta_j: TimedAction,
    r_i: float,
    r_j: float,
    graph: Graph,
) -> Interval | None:
    """Start-time window ``[t_i, t^u)`` over which ``a_i`` collides with ``ta_j``.

    For waits the window is the stretch of time during which resting at the
    vertex overlaps agent j (clipped to start at ``t_i``). Returns ``None`` if
    ``a_i`` at ``t_i`` does not collide.
    """
    kj = kinematics(ta_j, graph)
    ki = kinematics(TimedAction(a_i, t_i), graph)
    if not min_distance_sq(ki, kj) < contact_sq(r_i, r_j):
        return None
    # intervals use a slightly wider contact distance than detection so that
    # rounding near tangency can never leave a detected collision uncovered
    rr = contact_sq(r_i, r_j, 0.5 * EPS)

    if a_i.is_wait:
        window = _occupancy_window(graph.coords[a_i.u], kj, rr)
        if window is None or window[1] <= t_i:  # pragma: no cover - guarded by collision test
            return None
        return Interval(max(t_i, window[0]), window[1])

    if math.isinf(kj[1]):
        # j rests forever at a point: collision persists iff the swept segment is too close
        p, q = graph.coords[a_i.u], graph.coords[a_i.v]
        if point_segment_distance((kj[2], kj[3]), p, q) ** 2 < rr:
            return Interval(t_i, INF)
        upper = kj[0]
    else:
        upper = kj[1]

    # colliding start times form an interval (projection of a convex set), so
    # bisection on the predicate is exact up to tolerance
    d = a_i.duration
    ax, ay = graph.coords[a_i.u]
    vx, vy = ki[4], ki[5]
    lo, hi = t_i, max(upper, t_i)
    while hi - lo > 1e-11:
        mid = 0.5 * (lo + hi)
        if min_distance_sq((mid, mid + d, ax, ay, vx, vy), kj) < rr:
            lo = mid
        else:
            hi = mid
    return Interval(t_i, hi)
