"""Independent solution checking and a joint-state optimality oracle for tiny grids."""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .motion import EPS, INF, DEFAULT_RADIUS, Plan, collides, contact_sq

SAMPLE_DT = 1e-3


@dataclass
class Violation:
    kind: str  # collision | discontinuity | wrong-endpoint | bad-duration
    agents: tuple[int, ...]
    time: float
    detail: str = ""

    def to_line(self) -> str:
        agents = ",".join(map(str, self.agents))
        return f"{self.kind}\tagents={agents}\tt={self.time:.9g}\t{self.detail}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_text(self) -> str:
        head = "OK" if self.ok else f"FAIL {len(self.violations)} violation(s)"
        return "\n".join([head, *(v.to_line() for v in self.violations)]) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ValidationReport":
        report = cls()
        for line in text.splitlines()[1:]:
            kind, agents, t, detail = line.split("\t", 3)
            ids = tuple(int(a) for a in agents.removeprefix("agents=").split(",") if a)
            report.violations.append(Violation(kind, ids, float(t.removeprefix("t=")), detail))
        return report


def _check_plan(instance, idx: int, plan: Plan, out: list[Violation]) -> None:
    g = instance.graph
    s, goal = instance.starts[idx], instance.goals[idx]
    if plan.start != s:
        out.append(Violation("wrong-endpoint", (idx,), 0.0, f"starts at {plan.start}, expected {s}"))
    t, here = 0.0, plan.start
    for ta in plan.actions:
        a = ta.action
        if abs(ta.start - t) > EPS:
            out.append(Violation("discontinuity", (idx,), ta.start, f"expected start {t:.9g}"))
        if a.u != here:
            out.append(Violation("discontinuity", (idx,), ta.start, f"action leaves {a.u}, agent at {here}"))
        if a.is_wait:
            if not a.duration > 0 or math.isinf(a.duration):
                out.append(Violation("bad-duration", (idx,), ta.start, f"wait duration {a.duration}"))
        elif not g.has_edge(a.u, a.v):
            out.append(Violation("bad-duration", (idx,), ta.start, f"no edge {a.u}->{a.v}"))
        elif abs(a.duration - g.weight(a.u, a.v)) > EPS:
            out.append(Violation("bad-duration", (idx,), ta.start,
                                 f"move {a.u}->{a.v} lasts {a.duration}, edge weight {g.weight(a.u, a.v)}"))
        t, here = ta.start + a.duration, a.v
    if here != goal:
        out.append(Violation("wrong-endpoint", (idx,), t, f"ends at {here}, expected {goal}"))


def _trajectory(plan: Plan, graph, times: np.ndarray) -> np.ndarray:
    bt = [0.0]
    pts = [graph.coords[plan.start]]
    for ta in plan.actions:
        bt.append(ta.start + ta.action.duration)
        pts.append(graph.coords[ta.action.v])
    pts = np.asarray(pts, dtype=float)
    bt = np.asarray(bt)
    return np.column_stack([np.interp(times, bt, pts[:, 0]), np.interp(times, bt, pts[:, 1])])


def validate_solution(instance, plans: Sequence[Plan]) -> ValidationReport:
    """Per-plan structure checks, analytic pairwise collision checks on every
    timed-action pair (terminal waits included) and a dense-sampling cross-check."""
    report = ValidationReport()
    out = report.violations
    if len(plans) != instance.n_agents:
        out.append(Violation("wrong-endpoint", (), 0.0, f"{len(plans)} plans for {instance.n_agents} agents"))
        return report
    for idx, plan in enumerate(plans):
        _check_plan(instance, idx, plan, out)
    if not report.ok:
        return report

    g, radii = instance.graph, instance.radii
    analytic: set[tuple[int, int]] = set()
    for a, b in itertools.combinations(range(len(plans)), 2):
        for x in plans[a].with_terminal():
            for y in plans[b].with_terminal():
                if collides(x, y, radii[a], radii[b], g):
                    out.append(Violation("collision", (a, b), max(x.start, y.start), f"{x!r} vs {y!r}"))
                    analytic.add((a, b))

    horizon = max((p.cost for p in plans), default=0.0) + 1.0
    times = np.arange(0.0, horizon + SAMPLE_DT / 2, SAMPLE_DT)
    traj = [_trajectory(p, g, times) for p in plans]
    for a, b in itertools.combinations(range(len(plans)), 2):
        d2 = np.sum((traj[a] - traj[b]) ** 2, axis=1)
        hits = np.flatnonzero(d2 < contact_sq(radii[a], radii[b]))
        if hits.size and (a, b) not in analytic:
            out.append(Violation("collision", (a, b), float(times[hits[0]]),
                                 "sampling-only hit: analytic check missed it (geometry bug)"))
    return report


def _unit_grid_regime(instance) -> None:
    g = instance.graph
    if instance.n_agents > 3:
        raise ValueError("brute-force oracle supports at most 3 agents")
    if g.n_vertices > 40:
        raise ValueError("brute-force oracle supports at most 40 vertices")
    for x, y in g.coords:
        if x != int(x) or y != int(y):
            raise ValueError("brute-force oracle needs integer grid coordinates")
    for u, v in g.edges():
        if g.weight(u, v) != 1.0:
            raise ValueError("brute-force oracle needs a 4-connected unit grid")
    for r in instance.radii:
        if abs(r - DEFAULT_RADIUS) > 1e-12:
            raise ValueError("brute-force oracle assumes radius sqrt(2)/4")


def brute_force_soc(instance) -> float | None:
    """Optimal sum of costs by joint-state A* over unit time steps.

    Vertex sharing and edge swaps are conflicts. An agent at its goal may
    commit (zero cost) and then never moves again; uncommitted agents pay one
    per step.
    """
    _unit_grid_regime(instance)
    g = instance.graph
    n = instance.n_agents
    goals = tuple(instance.goals)
    nbrs = [[u] + [v for v, _ in g.adj[u]] for u in range(g.n_vertices)]
    dist = []
    for goal in goals:
        d = [INF] * g.n_vertices
        d[goal] = 0
        q = [goal]
        for u in q:
            for v in nbrs[u]:
                if d[v] == INF:
                    d[v] = d[u] + 1
                    q.append(v)
        dist.append(d)

    def h(pos, done):
        return sum(dist[i][pos[i]] for i in range(n) if not done[i])

    start = (tuple(instance.starts), (False,) * n)
    if any(math.isinf(dist[i][instance.starts[i]]) for i in range(n)):
        return None
    best = {start: 0}
    heap = [(h(*start), 0, start)]
    while heap:
        f, cost, state = heapq.heappop(heap)
        if cost > best.get(state, INF):
            continue
        pos, done = state
        if all(done):
            return float(cost)
        succ = []
        for i in range(n):
            if not done[i] and pos[i] == goals[i]:
                nd = done[:i] + (True,) + done[i + 1:]
                succ.append(((pos, nd), 0))
        active = [i for i in range(n) if not done[i]]
        options = [nbrs[pos[i]] if not done[i] else [pos[i]] for i in range(n)]
        for new in itertools.product(*options):
            if len(set(new)) < n:
                continue
            if any(new[a] == pos[b] and new[b] == pos[a] and a != b
                   for a in range(n) for b in range(a + 1, n) if pos[a] != new[a]):
                continue
            succ.append(((tuple(new), done), len(active)))
        for nxt, c in succ:
            nc = cost + c
            if nc < best.get(nxt, INF):
                best[nxt] = nc
                heapq.heappush(heap, (nc + h(*nxt), nc, nxt))
    return None
