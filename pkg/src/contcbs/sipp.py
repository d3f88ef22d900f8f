"""Single-agent planning over safe intervals under CCBS constraints.

Negative constraints on waits remove time from a vertex's safe intervals,
negative constraints on moves forbid departure windows along an edge, and
positive constraints (action landmarks) are consumed by the DS driver in
:mod:`contcbs.ccbs` through :meth:`LowLevelPlanner.gsipp`.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from .graph import Graph
from .motion import EPS, INF, Action, Interval, Plan, TimedAction

Heuristic = Callable[[int], float]


@dataclass(frozen=True)
class Constraint:
    """``positive=False``: agent may not start ``action`` in ``interval``
    (for waits: may not be at the vertex during ``interval``).
    ``positive=True``: agent must start ``action`` (a move) within ``interval``.
    A negative constraint on a wait of infinite duration is a park window:
    the agent may not begin its final stay at the vertex inside it."""

    agent: int
    action: Action
    interval: Interval
    positive: bool = False

    def __post_init__(self):
        if self.positive and self.action.is_wait:
            raise ValueError("positive constraints apply to move actions only")

    def __repr__(self):
        sign = "+" if self.positive else "-"
        return f"{sign}({self.agent}, {self.action!r}, {self.interval!r})"


@dataclass(frozen=True)
class SafeInterval:
    vertex: int
    interval: Interval


@dataclass(frozen=True)
class GoalSpec:
    """Reach ``vertex`` inside its ``index``-th safe interval."""

    vertex: int
    index: int


def merge_intervals(blocks: Iterable[tuple[float, float]]) -> list[tuple[float, float]]:
    out: list[list[float]] = []
    for lo, hi in sorted(blocks):
        if out and lo <= out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return [(lo, hi) for lo, hi in out]


def compute_safe_intervals(vertex: int, negatives: Iterable[tuple[float, float] | Interval | Constraint]) -> list[SafeInterval]:
    """Complement in ``[0, inf)`` of the union of forbidden stay windows."""
    blocks = []
    for c in negatives:
        if isinstance(c, Constraint):
            c = c.interval
        if isinstance(c, Interval):
            c = (c.lo, c.hi)
        blocks.append(c)
    out = []
    t = 0.0
    for lo, hi in merge_intervals(blocks):
        if lo > t:
            out.append(SafeInterval(vertex, Interval(t, lo)))
        t = max(t, hi)
    if not math.isinf(t):
        out.append(SafeInterval(vertex, Interval(t, INF)))
    return out


def constrained_departure(arrive: float, current: Interval, forbidden: Sequence[tuple[float, float]]) -> float | None:
    """Earliest departure >= ``arrive`` outside ``forbidden`` (sorted, disjoint)
    while still inside ``current``; ``None`` if the interval ends first."""
    t = arrive
    for lo, hi in forbidden:
        if lo - EPS <= t < hi:
            t = hi
        elif lo - EPS > t:
            break
    if t < current.hi - EPS:
        return t
    return None


def compute_landmarks(positives: Iterable[Constraint]) -> list[Constraint]:
    """Time-ordered landmarks; positives on the same action whose windows
    overlap collapse into their intersection (one occurrence serves both)."""
    by_action: dict[Action, list[Constraint]] = {}
    for c in positives:
        by_action.setdefault(c.action, []).append(c)
    out = []
    for action, group in by_action.items():
        group.sort(key=lambda c: (c.interval.lo, c.interval.hi))
        merged: list[Constraint] = []
        for c in group:
            last = merged[-1] if merged else None
            if last is not None and c.interval.lo < last.interval.hi:
                lo, hi = max(last.interval.lo, c.interval.lo), min(last.interval.hi, c.interval.hi)
                merged[-1] = Constraint(c.agent, action, Interval(lo, hi), True)
            else:
                merged.append(c)
        out += merged
    out.sort(key=lambda c: (c.interval.lo, c.interval.hi, c.action.u, c.action.v))
    return out


class AgentConstraints:
    """Per-agent constraint view consumed by the low-level search."""

    def __init__(self, constraints: Iterable[Constraint] = ()):
        waits: dict[int, list[tuple[float, float]]] = {}
        moves: dict[tuple[int, int], list[tuple[float, float]]] = {}
        parks: dict[int, list[tuple[float, float]]] = {}
        self.landmarks: list[Constraint] = []
        for c in constraints:
            if c.positive:
                self.landmarks.append(c)
            elif c.action.is_wait and math.isinf(c.action.duration):
                parks.setdefault(c.action.u, []).append((c.interval.lo, c.interval.hi))
            elif c.action.is_wait:
                waits.setdefault(c.action.u, []).append((c.interval.lo, c.interval.hi))
            else:
                moves.setdefault((c.action.u, c.action.v), []).append((c.interval.lo, c.interval.hi))
        self.wait_blocks = waits
        self.move_blocks = {k: merge_intervals(v) for k, v in moves.items()}
        self.park_blocks = {k: merge_intervals(v) for k, v in parks.items()}
        self.landmarks = compute_landmarks(self.landmarks)
        self._safe: dict[int, list[Interval]] = {}

    def safe_intervals(self, v: int) -> list[Interval]:
        s = self._safe.get(v)
        if s is None:
            blocks = self.wait_blocks.get(v)
            s = [si.interval for si in compute_safe_intervals(v, blocks)] if blocks else [Interval(0.0, INF)]
            self._safe[v] = s
        return s

    def park_block(self, v: int, t: float) -> tuple[float, float] | None:
        """Park window at ``v`` containing ``t``, if any."""
        for lo, hi in self.park_blocks.get(v, ()):
            if lo - EPS <= t < hi:
                return lo, hi
        return None

    def interval_index(self, v: int, t: float) -> int | None:
        for k, iv in enumerate(self.safe_intervals(v)):
            if iv.lo - EPS <= t < iv.hi - EPS:
                return k
        return None


class SearchNode:
    """State (vertex, safe-interval index) reached at time ``g``; ``dep`` is the
    departure time from the parent's vertex."""

    __slots__ = ("v", "k", "g", "parent", "dep", "final")

    def __init__(self, v: int, k: int, g: float, parent: "SearchNode | None" = None, dep: float = 0.0,
                 final: bool = False):
        self.v, self.k, self.g, self.parent, self.dep = v, k, g, parent, dep
        self.final = final  # arrival that may begin the agent's final stay

    @property
    def key(self) -> tuple[int, int, bool]:
        return self.v, self.k, self.final

    def to_plan(self, agent: int, graph: Graph) -> Plan:
        chain = []
        node = self
        while node is not None:
            chain.append(node)
            node = node.parent
        chain.reverse()
        actions: list[TimedAction] = []
        for prev, node in zip(chain, chain[1:]):
            if node.dep - prev.g > EPS:
                actions.append(TimedAction(Action(prev.v, prev.v, node.dep - prev.g), prev.g))
            if node.v == prev.v:  # waited in place until a park window closed
                continue
            actions.append(TimedAction(Action(prev.v, node.v, graph.weight(prev.v, node.v)), node.dep))
        return Plan(agent, chain[0].v, actions)

    def __repr__(self):
        return f"SearchNode(v={self.v}, k={self.k}, g={self.g:.6g})"


class LowLevelPlanner:
    """SIPP / generalised SIPP for one agent under a fixed constraint set."""

    def __init__(self, graph: Graph, constraints: AgentConstraints | Iterable[Constraint] = ()):
        self.graph = graph
        if not isinstance(constraints, AgentConstraints):
            constraints = AgentConstraints(constraints)
        self.cons = constraints
        self.expanded = 0

    def start_node(self, vertex: int) -> SearchNode | None:
        k = self.cons.interval_index(vertex, 0.0)
        return None if k is None else SearchNode(vertex, k, 0.0)

    def successors(self, node: SearchNode, goal: int | None = None) -> list[SearchNode]:
        """Earliest arrival in every reachable safe interval of each neighbour.

        With ``goal`` given, arrivals in the goal's last interval are marked
        final, and one pushed past any park window is added when needed.
        """
        cons = self.cons
        cur = cons.safe_intervals(node.v)[node.k]
        out = []
        if node.v == goal and not node.final and math.isinf(cur.hi):
            # already home but inside a park window: wait it out
            t, block = node.g, cons.park_block(goal, node.g)
            while block is not None:
                t = block[1]
                block = cons.park_block(goal, t)
            if not math.isinf(t):
                out.append(SearchNode(goal, node.k, t, node, t, final=True))
        v, g = node.v, node.g
        waits, moves = cons.wait_blocks, cons.move_blocks
        for w, d in self.graph.adj[v]:
            if w != goal and w not in waits and (v, w) not in moves:
                # unconstrained neighbour: leave at once, one safe interval there
                out.append(SearchNode(w, 0, g + d, node, g))
                continue
            forbidden = moves.get((v, w), ())
            for m, J in enumerate(cons.safe_intervals(w)):
                if J.hi - EPS <= node.g + d:
                    continue
                dep = constrained_departure(max(node.g, J.lo - d), cur, forbidden)
                if dep is None:
                    break
                arr = dep + d
                if arr < J.hi - EPS:
                    if w == goal and math.isinf(J.hi):
                        block = cons.park_block(w, arr)
                        out.append(SearchNode(w, m, arr, node, dep, final=block is None))
                        if block is not None:
                            final = self._parked_arrival(node, cur, forbidden, d, w, block)
                            if final is not None:
                                out.append(final)
                    else:
                        out.append(SearchNode(w, m, arr, node, dep))
        return out

    def _parked_arrival(self, node, cur, forbidden, d, w, block) -> SearchNode | None:
        m = len(self.cons.safe_intervals(w)) - 1
        while block is not None:
            earliest = block[1] - d
            if earliest + d < block[1]:  # rounding would land back inside the window
                earliest = math.nextafter(earliest, INF)
            dep = constrained_departure(max(node.g, earliest), cur, forbidden)
            if dep is None:
                return None
            block = self.cons.park_block(w, dep + d)
        return SearchNode(w, m, dep + d, node, dep, final=True)

    def landmark_successors(self, node: SearchNode, landmark: Constraint) -> list[SearchNode]:
        """States at B reachable by starting move(A, B) from ``node`` within the landmark window."""
        a = landmark.action
        cur = self.cons.safe_intervals(node.v)[node.k]
        window = landmark.interval
        forbidden = self.cons.move_blocks.get((a.u, a.v), ())
        d = a.duration
        out = []
        for m, J in enumerate(self.cons.safe_intervals(a.v)):
            earliest = max(node.g, J.lo - d, window.lo)
            if J.hi - EPS <= earliest + d:
                continue
            dep = constrained_departure(earliest, cur, forbidden)
            if dep is None or dep >= window.hi:
                break
            if dep + d < J.hi - EPS:
                out.append(SearchNode(a.v, m, dep + d, node, dep))
        return out

    def _search(self, starts: Iterable[SearchNode], goals: set[tuple[int, int]], h: Heuristic,
                deadline: float | None = None) -> dict[tuple[int, int], SearchNode]:
        counter = itertools.count()
        best: dict[tuple[int, int], float] = {}
        open_: list = []
        for s in starts:
            key = (s.v, s.k)
            if s.g < best.get(key, INF):
                best[key] = s.g
                hv = h(s.v)
                if not math.isinf(hv):
                    heapq.heappush(open_, (s.g + hv, -s.g, s.v, next(counter), s))
        closed: set[tuple[int, int]] = set()
        found: dict[tuple[int, int], SearchNode] = {}
        remaining = set(goals)
        while open_ and remaining:
            _, _, _, _, node = heapq.heappop(open_)
            key = (node.v, node.k)
            if key in closed:
                continue
            closed.add(key)
            self.expanded += 1
            if key in remaining:
                found[key] = node
                remaining.discard(key)
                if not remaining:
                    break
            for child in self.successors(node):
                ckey = (child.v, child.k)
                if ckey in closed or child.g >= best.get(ckey, INF):
                    continue
                hv = h(child.v)
                if math.isinf(hv):
                    continue
                best[ckey] = child.g
                heapq.heappush(open_, (child.g + hv, -child.g, child.v, next(counter), child))
        return found

    def gsipp(self, starts: Iterable[SearchNode], goals: Iterable[GoalSpec], h: Heuristic) -> dict[GoalSpec, SearchNode | None]:
        """One cheapest arrival per goal state; stops once every goal is expanded."""
        goals = list(goals)
        found = self._search(starts, {(gs.vertex, gs.index) for gs in goals}, h)
        return {gs: found.get((gs.vertex, gs.index)) for gs in goals}

    def sipp(self, starts: SearchNode | Iterable[SearchNode], goal: int, h: Heuristic) -> SearchNode | None:
        """Earliest arrival at ``goal`` in a safe interval that never ends,
        outside every park window of the goal."""
        if isinstance(starts, SearchNode):
            starts = [starts]
        last = len(self.cons.safe_intervals(goal)) - 1
        if not math.isinf(self.cons.safe_intervals(goal)[last].hi):  # pragma: no cover
            return None
        counter = itertools.count()
        best: dict[tuple, float] = {}
        open_: list = []
        for s in starts:
            if s.v == goal and s.k == last and self.cons.park_block(goal, s.g) is None:
                s = SearchNode(s.v, s.k, s.g, s.parent, s.dep, final=True)
            if s.g < best.get(s.key, INF):
                best[s.key] = s.g
                heapq.heappush(open_, (s.g + h(s.v), -s.g, s.v, next(counter), s))
        closed = set()
        while open_:
            _, _, _, _, node = heapq.heappop(open_)
            if node.key in closed:
                continue
            closed.add(node.key)
            self.expanded += 1
            if node.final:
                return node
            for child in self.successors(node, goal):
                ckey = child.key
                if ckey in closed or child.g >= best.get(ckey, INF):
                    continue
                hv = h(child.v)
                if math.isinf(hv):
                    continue
                best[ckey] = child.g
                heapq.heappush(open_, (child.g + hv, -child.g, child.v, next(counter), child))
        return None


def sipp_plan(graph: Graph, agent: int, start: int, goal: int,
              constraints: Iterable[Constraint] | AgentConstraints, h: Heuristic) -> Plan | None:
    planner = LowLevelPlanner(graph, constraints)
    s = planner.start_node(start)
    if s is None:
        return None
    node = planner.sipp(s, goal, h)
    return None if node is None else node.to_plan(agent, graph)
