"""Continuous-time Conflict-Based Search with disjoint splitting, cost-impact
conflict prioritisation and the greedy disjoint-conflict heuristic."""

from __future__ import annotations

import heapq
import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .graph import Graph, HeuristicTable
from .motion import (DEFAULT_RADIUS, EPS, INF, Action, Interval, Plan, TimedAction, _occupancy_window,
                     contact_sq, kinematics, min_distance_sq, unsafe_interval)
from .sipp import AgentConstraints, Constraint, GoalSpec, LowLevelPlanner

log = logging.getLogger(__name__)

__all__ = [
    "Instance", "SolverConfig", "Conflict", "CTNode", "Solution", "CCBS", "VARIANTS",
    "detect_conflicts", "update_conflicts", "low_level_ds", "h2_greedy", "variant_config", "solve",
]


@dataclass
class Instance:
    graph: Graph
    starts: list[int]
    goals: list[int]
    radii: list[float] = field(default_factory=list)

    def __post_init__(self):
        if len(self.starts) != len(self.goals):
            raise ValueError("starts and goals differ in length")
        if not self.radii:
            self.radii = [DEFAULT_RADIUS] * len(self.starts)
        if len(self.radii) != len(self.starts):
            raise ValueError("one radius per agent required")

    @property
    def n_agents(self) -> int:
        return len(self.starts)

    def head(self, n: int) -> "Instance":
        return Instance(self.graph, self.starts[:n], self.goals[:n], self.radii[:n])


@dataclass
class SolverConfig:
    splitting: str = "disjoint"          # vanilla | disjoint
    conflict_choice: str = "cost_impact"  # first | cost_impact
    cost_impact_aggregate: str = "min"   # min | max | sum
    use_heuristic: bool = True
    time_limit: float = 30.0
    seed: int = 0
    debug: bool = False
    record: bool = False  # keep per-expansion (key, cost, h) trace

    def __post_init__(self):
        if self.splitting not in ("vanilla", "disjoint"):
            raise ValueError(f"unknown splitting {self.splitting!r}")
        if self.conflict_choice not in ("first", "cost_impact"):
            raise ValueError(f"unknown conflict choice {self.conflict_choice!r}")
        if self.cost_impact_aggregate not in ("min", "max", "sum"):
            raise ValueError(f"unknown aggregate {self.cost_impact_aggregate!r}")


VARIANTS = {
    "CCBS": dict(splitting="vanilla", conflict_choice="first", use_heuristic=False),
    "PC": dict(splitting="vanilla", conflict_choice="cost_impact", use_heuristic=False),
    "DS": dict(splitting="disjoint", conflict_choice="first", use_heuristic=False),
    "DS+PC": dict(splitting="disjoint", conflict_choice="cost_impact", use_heuristic=False),
    "DS+PC+H": dict(splitting="disjoint", conflict_choice="cost_impact", use_heuristic=True),
}
_ALIASES = {"VANILLA": "CCBS", "CCBS+PC": "PC", "CCBS+DS": "DS", "CCBS+DS+PC": "DS+PC", "CCBS+DS+PC+H": "DS+PC+H"}


def variant_config(name: str, **overrides) -> SolverConfig:
    key = name.upper()
    key = _ALIASES.get(key, key)
    if key not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}")
    return SolverConfig(**{**VARIANTS[key], **overrides})


def canonical_variant(name: str) -> str:
    key = name.upper()
    return _ALIASES.get(key, key)


# --- conflicts --------------------------------------------------------------

class Conflict:
    """Colliding timed actions of agents ``i < j``; unsafe intervals are lazy."""

    __slots__ = ("i", "ta_i", "j", "ta_j", "_radii", "_graph", "_unsafe")

    def __init__(self, i: int, ta_i: TimedAction, j: int, ta_j: TimedAction, radii, graph: Graph):
        if i > j:
            i, ta_i, j, ta_j = j, ta_j, i, ta_i
        self.i, self.ta_i, self.j, self.ta_j = i, ta_i, j, ta_j
        self._radii = (radii[i], radii[j])
        self._graph = graph
        self._unsafe: tuple[Interval, Interval] | None = None

    @property
    def ident(self):
        return (self.i, self.ta_i, self.j, self.ta_j)

    def __eq__(self, other):
        return isinstance(other, Conflict) and self.ident == other.ident

    def __hash__(self):
        return hash(self.ident)

    def __repr__(self):
        return f"Conflict({self.i}:{self.ta_i!r}, {self.j}:{self.ta_j!r})"

    @property
    def sort_key(self):
        return (min(self.ta_i.start, self.ta_j.start), self.i, self.j, self.ta_i.start, self.ta_j.start)

    def _compute(self):
        ri, rj = self._radii
        ai, aj = self.ta_i.action, self.ta_j.action
        if ai.is_wait or aj.is_wait:
            pair = self._wait_pair()
            if pair is not None:
                self._unsafe = pair
                return
        ui = unsafe_interval(ai, self.ta_i.start, self.ta_j, ri, rj, self._graph)
        uj = unsafe_interval(aj, self.ta_j.start, self.ta_i, rj, ri, self._graph)
        if ui is None or uj is None:  # pragma: no cover - detection and geometry disagree
            raise RuntimeError(f"{self!r} has no unsafe interval")
        self._unsafe = (ui, uj)

    def _wait_pair(self) -> tuple[Interval, Interval] | None:
        """Constraint windows for conflicts involving a wait, chosen so that
        any plan pair violating both constraints collides (the children cover
        every collision-free solution). ``None`` for two finite waits, which
        fall back to plain unsafe intervals.

        A terminal wait (duration ``inf``) is constrained as a park window:
        the agent may not begin its final stay inside it.
        """
        ta_i, ta_j = self.ta_i, self.ta_j
        swap = not ta_i.action.is_wait or (ta_j.action.is_wait and math.isinf(ta_j.action.duration))
        if swap:
            ta_i, ta_j = ta_j, ta_i
        # now ta_i is a wait; if ta_j is a wait too, ta_i is the terminal one
        wi, other = ta_i, ta_j
        if other.action.is_wait:
            if not math.isinf(wi.action.duration):
                return None
            if math.isinf(other.action.duration):
                # two goals in contact: neither agent can ever park
                return Interval(0.0, INF), Interval(0.0, INF)
            # parked agent vs a resting one: split at an instant both are present
            tau = 0.5 * (max(wi.start, other.start) + other.end)
            pair = (Interval(0.0, tau), Interval(tau, INF))
            return pair[::-1] if swap else pair
        rr = contact_sq(*self._radii, 0.5 * EPS)
        window = _occupancy_window(self._graph.coords[wi.action.u], kinematics(other, self._graph), rr)
        if window is None:  # pragma: no cover - detection and geometry disagree
            raise RuntimeError(f"{self!r} has no overlap window")
        lo, hi = window
        if math.isinf(wi.action.duration):
            # parking before ``hi`` collides with the move started at any later time
            pair = (Interval(0.0, hi), Interval(other.start, INF))
        else:
            # rest window [tau, hi) against move delays below tau - lo; tau just
            # before the end of the overlap keeps the mover's window near its
            # full unsafe interval, which prunes far better than a midpoint
            a, b = max(wi.start, lo), min(wi.end, hi)
            tau = b - 1e-6 * (b - a) if b > a else a
            tau = min(max(tau, lo + 1e-12), hi - 1e-12)
            pair = (Interval(tau, hi), Interval(other.start, other.start + (tau - lo)))
        return pair[::-1] if swap else pair

    @property
    def unsafe_i(self) -> Interval:
        if self._unsafe is None:
            self._compute()
        return self._unsafe[0]

    @property
    def unsafe_j(self) -> Interval:
        if self._unsafe is None:
            self._compute()
        return self._unsafe[1]

    def agents(self) -> tuple[int, int]:
        return self.i, self.j

    def side(self, agent: int) -> tuple[TimedAction, Interval]:
        if agent == self.i:
            return self.ta_i, self.unsafe_i
        if agent == self.j:
            return self.ta_j, self.unsafe_j
        raise ValueError(f"agent {agent} not in {self!r}")

    def constraint(self, agent: int, positive: bool = False) -> Constraint:
        ta, iv = self.side(agent)
        return Constraint(agent, ta.action, iv, positive)


def _plan_kin(plan: Plan, graph: Graph):
    kin = getattr(plan, "_kin", None)
    if kin is None:
        tas = plan.with_terminal()
        kin = (tas, [kinematics(ta, graph) for ta in tas])
        plan._kin = kin
    return kin


def _pair_conflicts(pa: Plan, pb: Plan, radii, graph: Graph) -> list[Conflict]:
    tas_a, ka = _plan_kin(pa, graph)
    tas_b, kb = _plan_kin(pb, graph)
    rr = contact_sq(radii[pa.agent], radii[pb.agent])
    out = []
    j0 = 0
    for x, kx in enumerate(ka):
        while j0 < len(kb) and kb[j0][1] <= kx[0]:
            j0 += 1
        y = j0
        while y < len(kb) and kb[y][0] < kx[1]:
            if min_distance_sq(kx, kb[y]) < rr:
                out.append(Conflict(pa.agent, tas_a[x], pb.agent, tas_b[y], radii, graph))
            y += 1
    return out


def detect_conflicts(plans: Sequence[Plan], radii, graph: Graph) -> list[Conflict]:
    """Every colliding timed-action pair, terminal waits included."""
    out = []
    for a, b in itertools.combinations(range(len(plans)), 2):
        out += _pair_conflicts(plans[a], plans[b], radii, graph)
    out.sort(key=lambda c: c.sort_key)
    return out


def update_conflicts(parent_conflicts: Iterable[Conflict], replanned: int | Iterable[int],
                     plans: Sequence[Plan], radii, graph: Graph) -> list[Conflict]:
    """Keep conflicts not touching replanned agents; re-detect the rest."""
    changed = {replanned} if isinstance(replanned, int) else set(replanned)
    out = [c for c in parent_conflicts if c.i not in changed and c.j not in changed]
    done = set()
    for k in sorted(changed):
        for other in range(len(plans)):
            if other == k or (other, k) in done:
                continue
            done.add((k, other))
            out += _pair_conflicts(plans[k], plans[other], radii, graph)
    out.sort(key=lambda c: c.sort_key)
    return out


def h2_greedy(weighted: Iterable[tuple[int, int, float]]) -> float:
    """Greedy agent-disjoint conflict packing: sum of picked cost impacts."""
    items = sorted(weighted, key=lambda e: (-(e[2] if not math.isinf(e[2]) else 1e300), e[0], e[1]))
    used: set[int] = set()
    total = 0.0
    for i, j, delta in items:
        if i in used or j in used:
            continue
        used.update((i, j))
        if not math.isinf(delta):
            total += delta
    return total


# --- low level with landmarks -----------------------------------------------

class _DHCache:
    def __init__(self, tables: HeuristicTable):
        self.tables = tables
        self._stack = np.vstack([tables[p] for p in tables.pivots]) if tables.pivots else None
        self._cache: dict[int, np.ndarray] = {}

    def toward(self, target: int) -> np.ndarray:
        h = self._cache.get(target)
        if h is None:
            if target in self.tables.columns:
                h = self.tables[target]
            else:
                stack = self._stack
                ref = stack[:, target][:, None]
                with np.errstate(invalid="ignore"):
                    diff = np.abs(stack - ref)
                both_inf = np.isinf(stack) & np.isinf(ref)
                diff[both_inf] = 0.0
                h = diff.max(axis=0)
            self._cache[target] = h
        return h


def low_level_ds(agent: int, start: int, goal: int, constraints: Iterable[Constraint],
                 graph: Graph, tables: HeuristicTable, dh: _DHCache | None = None) -> Plan | None:
    """Cheapest plan satisfying negative constraints and every action landmark.

    Landmarks are visited in time order; for each one, every safe interval of
    its source vertex that overlaps the landmark window is a separate goal, so
    arriving later (in a later interval) is never pruned away prematurely.
    """
    cons = constraints if isinstance(constraints, AgentConstraints) else AgentConstraints(constraints)
    planner = LowLevelPlanner(graph, cons)
    s = planner.start_node(start)
    if s is None:
        return None
    starts = [s]
    if cons.landmarks:
        dh = dh or _DHCache(tables)
    for lm in cons.landmarks:
        a = lm.action.u
        goals = [GoalSpec(a, k) for k, iv in enumerate(cons.safe_intervals(a))
                 if iv.lo < lm.interval.hi and lm.interval.lo < iv.hi - EPS]
        if not goals:
            return None
        h_a = dh.toward(a)
        reached = planner.gsipp(starts, goals, lambda v: h_a[v])
        by_interval: dict[tuple[int, int], object] = {}
        for node in reached.values():
            if node is None:
                continue
            for succ in planner.landmark_successors(node, lm):
                key = (succ.v, succ.k)
                if key not in by_interval or succ.g < by_interval[key].g:
                    by_interval[key] = succ
        starts = [by_interval[k] for k in sorted(by_interval)]
        if not starts:
            return None
    h_goal = tables[goal]
    node = planner.sipp(starts, goal, lambda v: h_goal[v])
    return None if node is None else node.to_plan(agent, graph)


# --- constraint tree ----------------------------------------------------------

class CTNode:
    __slots__ = ("serial", "parent", "constraints", "plans", "cost", "conflicts", "h", "depth",
                 "versions", "deltas", "replanned")

    def __init__(self, serial, parent, constraints, plans, conflicts, versions, replanned=()):
        self.serial = serial
        self.parent = parent
        self.constraints: list[Constraint] = constraints
        self.plans: list[Plan] = plans
        self.cost = sum(p.cost for p in plans)
        self.conflicts: list[Conflict] = conflicts
        self.h = 0.0
        self.depth = 0 if parent is None else parent.depth + 1
        self.versions: tuple[int, ...] = versions
        self.deltas: dict[Conflict, tuple[float, float]] | None = None
        self.replanned = tuple(replanned)

    def agent_constraints(self, agent: int) -> list[Constraint]:
        out = []
        node = self
        while node is not None:
            out += [c for c in node.constraints if c.agent == agent]
            node = node.parent
        return out

    def all_constraints(self) -> list[Constraint]:
        out = []
        node = self
        while node is not None:
            out += node.constraints
            node = node.parent
        return out

    @property
    def key(self) -> float:
        return self.cost + self.h


@dataclass
class Solution:
    status: str  # solved | timeout | infeasible
    plans: list[Plan] | None
    soc: float | None
    expanded: int
    generated: int
    runtime: float
    low_level_calls: int = 0
    trace: list[tuple[float, float, float]] = field(default_factory=list)  # (key, cost, h) per expansion

    @property
    def solved(self) -> bool:
        return self.status == "solved"


class _Timeout(Exception):
    pass


class CCBS:
    """High-level constraint-tree search. One instance per solve; not thread-safe."""

    def __init__(self, instance: Instance, config: SolverConfig | None = None,
                 tables: HeuristicTable | None = None):
        self.inst = instance
        self.cfg = config or SolverConfig()
        self.graph = instance.graph
        self.tables = tables or HeuristicTable(self.graph, instance.goals)
        for g in instance.goals:
            self.tables.add(g)
        self.dh = _DHCache(self.tables)
        self._serial = itertools.count()
        self._replans: dict[tuple[int, int, Constraint], Plan | None] = {}
        self.low_level_calls = 0
        self.expanded = 0
        self.generated = 0
        self._deadline = INF

    # low level ---------------------------------------------------------------
    def _check_time(self):
        if time.perf_counter() > self._deadline:
            raise _Timeout

    def _plan(self, agent: int, constraints: list[Constraint]) -> Plan | None:
        self._check_time()
        self.low_level_calls += 1
        return low_level_ds(agent, self.inst.starts[agent], self.inst.goals[agent], constraints,
                            self.graph, self.tables, self.dh)

    def replan_with(self, node: CTNode, agent: int, extra: Constraint) -> Plan | None:
        """Agent's best plan under the node's constraints plus ``extra`` (memoised)."""
        key = (agent, node.versions[agent], extra)
        if key not in self._replans:
            self._replans[key] = self._plan(agent, node.agent_constraints(agent) + [extra])
        return self._replans[key]

    def cost_impact(self, node: CTNode, conflict: Conflict) -> tuple[float, float, float]:
        """(delta_i, delta_j, aggregate) for splitting ``node`` on ``conflict``."""
        if node.deltas is not None and conflict in node.deltas:
            di, dj = node.deltas[conflict]
        else:
            di, dj = (self._delta(node, conflict, x) for x in conflict.agents())
            if node.deltas is None:
                node.deltas = {}
            node.deltas[conflict] = (di, dj)
        return di, dj, self._aggregate(di, dj)

    def _delta(self, node: CTNode, conflict: Conflict, agent: int) -> float:
        plan = self.replan_with(node, agent, conflict.constraint(agent))
        if plan is None:
            return INF
        return max(0.0, plan.cost - node.plans[agent].cost)

    def _aggregate(self, di: float, dj: float) -> float:
        agg = self.cfg.cost_impact_aggregate
        if agg == "min":
            return min(di, dj)
        if agg == "max":
            return max(di, dj)
        return di + dj

    # high level --------------------------------------------------------------
    def choose_conflict(self, node: CTNode) -> Conflict:
        if not node.conflicts:
            raise ValueError("node has no conflicts")
        if self.cfg.conflict_choice == "first":
            return min(node.conflicts, key=lambda c: c.sort_key)
        return min(node.conflicts, key=lambda c: (-self.cost_impact(node, c)[2], c.sort_key))

    def _child(self, node: CTNode, new: list[Constraint], agent: int | None, plan: Plan | None,
               touched: Iterable[int]) -> CTNode:
        plans = list(node.plans)
        if agent is not None:
            plans[agent] = plan
        serial = next(self._serial)
        versions = list(node.versions)
        for x in touched:
            versions[x] = serial
        if agent is None:
            conflicts = list(node.conflicts)
        else:
            conflicts = update_conflicts(node.conflicts, agent, plans, self.inst.radii, self.graph)
        child = CTNode(serial, node, new, plans, conflicts, tuple(versions),
                       () if agent is None else (agent,))
        if self.cfg.debug:
            full = detect_conflicts(plans, self.inst.radii, self.graph)
            assert set(full) == set(conflicts), "cached conflicts diverge from full detection"
        self.generated += 1
        return child

    def split_vanilla(self, node: CTNode, conflict: Conflict) -> list[CTNode]:
        children = []
        for x in conflict.agents():
            c = conflict.constraint(x)
            plan = self.replan_with(node, x, c)
            if plan is not None:
                children.append(self._child(node, [c], x, plan, (x,)))
        return children

    def split_disjoint(self, node: CTNode, conflict: Conflict) -> list[CTNode]:
        di, dj, _ = self.cost_impact(node, conflict)
        x, y = (conflict.j, conflict.i) if dj > di else (conflict.i, conflict.j)
        if conflict.side(x)[0].action.is_wait:
            x, y = y, x
        if conflict.side(x)[0].action.is_wait:
            return self.split_vanilla(node, conflict)
        children = []
        neg = conflict.constraint(x)
        plan = self.replan_with(node, x, neg)
        if plan is not None:
            children.append(self._child(node, [neg], x, plan, (x,)))
        pos = conflict.constraint(x, positive=True)
        neg_y = conflict.constraint(y)
        plan_y = self.replan_with(node, y, neg_y)
        if plan_y is not None:
            children.append(self._child(node, [pos, neg_y], y, plan_y, (x, y)))
        return children

    def _root(self) -> CTNode | None:
        plans = []
        for a in range(self.inst.n_agents):
            p = self._plan(a, [])
            if p is None:
                return None
            plans.append(p)
        serial = next(self._serial)
        conflicts = detect_conflicts(plans, self.inst.radii, self.graph)
        self.generated += 1
        return CTNode(serial, None, [], plans, conflicts, tuple([serial] * len(plans)))

    def _prepare(self, node: CTNode) -> bool:
        """Compute cost impacts / heuristic on first pop. False means dead end."""
        for c in node.conflicts:
            di, dj, _ = self.cost_impact(node, c)
            if math.isinf(di) and math.isinf(dj):
                return False
        if self.cfg.use_heuristic:
            h = h2_greedy((c.i, c.j, min(node.deltas[c])) for c in node.conflicts)
            node.h = max(node.h, h)
        return True

    def solve(self) -> Solution:
        t0 = time.perf_counter()
        self._deadline = t0 + self.cfg.time_limit
        trace: list[tuple[float, float, float]] = []
        inst = self.inst
        if len(set(inst.starts)) != inst.n_agents or len(set(inst.goals)) != inst.n_agents:
            raise ValueError("starts and goals must be distinct vertices")

        def result(status, node=None):
            plans = None if node is None else node.plans
            soc = None if node is None else node.cost
            return Solution(status, plans, soc, self.expanded, self.generated,
                            time.perf_counter() - t0, self.low_level_calls, trace)

        for s, g in zip(inst.starts, inst.goals):
            if math.isinf(self.tables[g][s]):
                return result("infeasible")
        need_deltas = self.cfg.conflict_choice == "cost_impact" or self.cfg.use_heuristic
        counter = itertools.count()
        try:
            root = self._root()
            if root is None:
                return result("infeasible")
            open_ = [(root.key, len(root.conflicts), 0, next(counter), root)]
            prepared: set[int] = set()
            while open_:
                self._check_time()
                key, _, _, _, node = heapq.heappop(open_)
                if not node.conflicts:
                    self.expanded += 1  # the goal node counts as expanded
                    if self.cfg.record:
                        trace.append((key, node.cost, node.h))
                    return result("solved", node)
                if need_deltas and node.serial not in prepared:
                    prepared.add(node.serial)
                    if not self._prepare(node):
                        continue
                    if node.key > key + EPS:
                        heapq.heappush(open_, (node.key, len(node.conflicts), -node.depth, next(counter), node))
                        continue
                self.expanded += 1
                if self.cfg.record:
                    trace.append((key, node.cost, node.h))
                conflict = self.choose_conflict(node)
                if self.cfg.splitting == "disjoint":
                    children = self.split_disjoint(node, conflict)
                else:
                    children = self.split_vanilla(node, conflict)
                for child in children:
                    if self.cfg.use_heuristic:
                        child.h = max(0.0, key - child.cost)  # pathmax
                    heapq.heappush(open_, (child.key, len(child.conflicts), -child.depth, next(counter), child))
            return result("infeasible")
        except _Timeout:
            return result("timeout")


def solve(instance: Instance, config: SolverConfig | None = None, tables: HeuristicTable | None = None) -> Solution:
    return CCBS(instance, config, tables).solve()
