"""Shared builders and independent oracles for the test suite."""

from __future__ import annotations

import math
import random
from fractions import Fraction

import numpy as np
import pytest

from contcbs.ccbs import Instance
from contcbs.graph import Graph, GridMap, build_grid_graph, dijkstra_heuristic
from contcbs.motion import EPS, INF


def line_graph(points, edges) -> Graph:
    return Graph(points, edges)


def random_grid_instance(rng: random.Random, size: int = 10, max_agents: int = 6) -> Instance:
    """Empty or 20%-blocked square grid, k in {2, 3}, 2..max_agents agents with
    distinct starts and goals that are mutually reachable."""
    if rng.random() < 0.5:
        blocked = np.zeros((size, size), dtype=bool)
    else:
        blocked = np.array([[rng.random() < 0.2 for _ in range(size)] for _ in range(size)])
    k = rng.choice([2, 3])
    g = build_grid_graph(GridMap(size, size, blocked), k=k)
    n = rng.randint(2, max_agents)
    while True:
        vs = rng.sample(range(g.n_vertices), 2 * n)
        d = dijkstra_heuristic(g, vs[0])
        if all(np.isfinite(d[v]) for v in vs):
            return Instance(g, vs[:n], vs[n:])


def small_unit_grid_instance(rng: random.Random, max_side: int = 6, max_agents: int = 3) -> Instance:
    """4-connected unit grid of at most 6x6 cells, obstacles allowed."""
    w, h = rng.randint(2, max_side), rng.randint(2, max_side)
    while True:
        blocked = np.array([[rng.random() < 0.2 for _ in range(w)] for _ in range(h)])
        grid = GridMap(w, h, blocked)
        g = build_grid_graph(grid, k=2)
        if g.n_vertices < 4 or g.n_vertices > 40:
            continue
        n = rng.randint(1, max_agents)
        if 2 * n > g.n_vertices:
            continue
        vs = rng.sample(range(g.n_vertices), 2 * n)
        d = dijkstra_heuristic(g, vs[0])
        if all(np.isfinite(d[v]) for v in vs):
            return Instance(g, vs[:n], vs[n:])


# --- event-time lattice oracle ----------------------------------------------------------

def lattice_plan_cost(graph: Graph, start: int, goal: int, constraints, step: float = 0.5,
                      horizon: float = 40.0) -> float | None:
    """Earliest time the agent can begin its final stay at ``goal``, by forward
    reachability over a time lattice of spacing ``step``.

    Valid only when edge weights and all constraint boundaries are multiples
    of ``step`` (then every optimal event time lies on the lattice). Semantics
    mirror the planner's: presence at a vertex is a closed time set that must
    avoid every forbidden stay window ``[lo, hi)``; a move may not start in a
    forbidden window; every positive constraint needs one matching move start
    inside its window; the final stay may not begin in a park window.
    """
    S = Fraction(step).limit_denominator(1000)

    def q(t):  # lattice index of a time
        return int(round(Fraction(t).limit_denominator(10 ** 6) / S))

    for u, v in graph.edges():
        w = Fraction(graph.weight(u, v)).limit_denominator(10 ** 6)
        if (w / S).denominator != 1:
            raise ValueError("edge weight not on the lattice")
    stay: dict[int, list[tuple[int, float]]] = {}
    move: dict[tuple[int, int], list[tuple[int, float]]] = {}
    park: dict[int, list[tuple[int, float]]] = {}
    landmarks = []
    for c in constraints:
        lo = q(c.interval.lo)
        hi = INF if math.isinf(c.interval.hi) else q(c.interval.hi)
        if c.positive:
            landmarks.append(((c.action.u, c.action.v), lo, hi))
        elif c.action.is_wait and math.isinf(c.action.duration):
            park.setdefault(c.action.u, []).append((lo, hi))
        elif c.action.is_wait:
            stay.setdefault(c.action.u, []).append((lo, hi))
        else:
            move.setdefault((c.action.u, c.action.v), []).append((lo, hi))
    full = (1 << len(landmarks)) - 1
    n_steps = q(horizon)

    def present_ok(v, a, b):  # closed presence [a, b] avoids every [lo, hi)
        return all(not (lo <= b and hi > a) for lo, hi in stay.get(v, ()))

    def can_park(v, t):
        return all(hi <= t for lo, hi in stay.get(v, ())) and \
            all(not (lo <= t < hi) for lo, hi in park.get(v, ()))

    if not present_ok(start, 0, 0):
        return None
    frontier = {(start, 0)}
    arrivals: dict[int, set[tuple[int, int]]] = {}
    best = INF
    for t in range(n_steps + 1):
        if t >= best:
            break
        frontier |= arrivals.pop(t, set())
        nxt = set()
        for v, mask in frontier:
            if v == goal and mask == full and can_park(v, t):
                best = min(best, t)
            if present_ok(v, t, t + 1):
                nxt.add((v, mask))
            for w, weight in graph.adj[v]:
                if any(lo <= t < hi for lo, hi in move.get((v, w), ())):
                    continue
                d = q(weight)
                if not present_ok(w, t + d, t + d):
                    continue
                m2 = mask
                for b, (act, lo, hi) in enumerate(landmarks):
                    if act == (v, w) and lo <= t < hi:
                        m2 |= 1 << b
                arrivals.setdefault(t + d, set()).add((w, m2))
        frontier = nxt
    return None if math.isinf(best) else float(best * S)


# --- dense sampling collision oracle ------------------------------------------------------

def _track(coords, ta):
    """(t0, t1, start point, end point) of a finite timed action."""
    a = ta.action
    return ta.start, ta.start + a.duration, np.array(coords[a.u], float), np.array(coords[a.v], float)


def sampled_min_distance(coords, ta_i, ta_j, dt: float = 1e-4) -> float:
    """Minimum centre distance of two finite timed actions found by sampling at
    spacing ``dt`` and refining the best sample by ternary search.

    Positions are interpolated directly from endpoints and times, so the
    result does not depend on any code under test.
    """
    a0, a1, ap, aq = _track(coords, ta_i)
    b0, b1, bp, bq = _track(coords, ta_j)
    lo, hi = max(a0, b0), min(a1, b1)
    if not hi > lo:
        return INF

    def dist(t):
        t = np.clip(t, lo, hi)
        sa = np.clip((t - a0) / (a1 - a0), 0, 1)[..., None]
        sb = np.clip((t - b0) / (b1 - b0), 0, 1)[..., None]
        d = (ap + (aq - ap) * sa) - (bp + (bq - bp) * sb)
        return np.sqrt((d * d).sum(axis=-1))

    ts = np.append(np.arange(lo, hi, dt), hi)
    ds = dist(ts)
    k = int(np.argmin(ds))
    x, y = ts[max(k - 1, 0)], ts[min(k + 1, len(ts) - 1)]
    for _ in range(100):
        m1, m2 = x + (y - x) / 3, y - (y - x) / 3
        if dist(np.array(m1)) < dist(np.array(m2)):
            y = m2
        else:
            x = m1
    return float(min(ds[k], dist(np.array(0.5 * (x + y)))))


def random_action_pair(rng: random.Random, box: float = 3.0, max_start: float = 3.0):
    """Graph of four random points plus two timed actions (each a move at unit
    speed or a finite wait) and two radii."""
    from contcbs.motion import Action, TimedAction

    pts = [(rng.uniform(0, box), rng.uniform(0, box)) for _ in range(4)]
    g = Graph(pts, [(0, 1), (2, 3)])
    acts = []
    for u, v in ((0, 1), (2, 3)):
        if rng.random() < 0.25:
            a = Action(u, u, rng.uniform(0.1, 3.0))
        else:
            a = Action.move(g, u, v)
        acts.append(TimedAction(a, rng.uniform(0, max_start)))
    return g, acts[0], acts[1], rng.uniform(0.05, 0.6), rng.uniform(0.05, 0.6)


@pytest.fixture
def rng():
    return random.Random(12345)


@pytest.fixture
def eps():
    return EPS


# --- acceptance summary ------------------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE[number] = (ok, detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
