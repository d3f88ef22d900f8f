"""End-to-end acceptance checks; each test records a pass/fail summary line."""

import itertools
import math
import random
import statistics

import numpy as np
import pytest
from scipy.optimize import linprog

from conftest import (
    lattice_plan_cost,
    random_action_pair,
    random_grid_instance,
    sampled_min_distance,
    small_unit_grid_instance,
)
from contcbs.ccbs import VARIANTS, Instance, low_level_ds, solve, variant_config
from contcbs.graph import Graph, GridMap, HeuristicTable, build_grid_graph, random_scen_pairs
from contcbs.motion import INF, Action, Interval, TimedAction, collides, unsafe_interval
from contcbs.sipp import AgentConstraints, Constraint, GoalSpec, LowLevelPlanner, sipp_plan
from contcbs.validate import brute_force_soc, validate_solution

TIME_LIMIT = 30.0
VALIDATION_FAILURES: list[str] = []


def _validated(tag, instance, sol):
    if sol.solved:
        report = validate_solution(instance, sol.plans)
        if not report.ok:
            VALIDATION_FAILURES.append(f"{tag}: {report.violations[0].to_line()}")
    return sol


# --- criteria 1, 5 ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def agreement_runs():
    rng = random.Random(2024)
    runs = []
    for idx in range(200):
        inst = random_grid_instance(rng)
        res = {}
        for v in VARIANTS:
            sol = solve(inst, variant_config(v, time_limit=TIME_LIMIT, record=True))
            res[v] = _validated(f"c1#{idx}/{v}", inst, sol)
        runs.append((inst, res))
    return runs


def test_criterion_1_variants_agree(agreement_runs, criterion):
    bad = []
    runtime = 0.0
    for idx, (inst, res) in enumerate(agreement_runs):
        runtime += sum(s.runtime for s in res.values())
        socs = [s.soc for s in res.values()]
        if any(s is None for s in socs) or max(socs) - min(socs) > 1e-6:
            bad.append((idx, inst.n_agents, {v: (s.status, s.soc) for v, s in res.items()}))
    detail = f"{200 - len(bad)}/200 instances with equal SOC across 5 variants; solver time {runtime:.0f}s"
    if bad:
        detail += f"; first disagreements: {bad[:3]}"
    assert criterion(1, not bad, detail), detail


def test_criterion_5_heuristic_admissible_and_keys_monotone(agreement_runs, criterion):
    over, unsorted, checked = [], [], 0
    for idx, (inst, res) in enumerate(agreement_runs):
        solved = [s.soc for s in res.values() if s.solved]
        final = min(solved) if solved else None
        for v, sol in res.items():
            keys = [k for k, _, _ in sol.trace]
            if any(b < a - 1e-9 for a, b in zip(keys, keys[1:])):
                unsorted.append((idx, v))
            if final is not None:
                checked += len(sol.trace)
                if any(cost + h > final + 1e-6 for _, cost, h in sol.trace):
                    over.append((idx, v))
    ok = not over and not unsorted
    detail = (f"{checked} expanded nodes checked; admissibility breaches {len(over)}, "
              f"non-monotone runs {len(unsorted)}")
    assert criterion(5, ok, detail), (over[:5], unsorted[:5])


# --- criterion 2 -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def oracle_runs():
    out = []
    for seed in range(50):
        inst = small_unit_grid_instance(random.Random(10_000 + seed))
        sol = _validated(f"c2#{seed}", inst, solve(inst, variant_config("DS+PC+H", time_limit=TIME_LIMIT)))
        out.append((inst, brute_force_soc(inst), sol))
    return out


def test_criterion_2_oracle_equivalence(oracle_runs, criterion):
    mismatches = []
    for seed, (inst, oracle, sol) in enumerate(oracle_runs):
        got = sol.soc
        if oracle is None and got is None:
            continue
        if oracle is None or got is None or abs(oracle - got) > 1e-6:
            mismatches.append((seed, oracle, got))
    below = [m for m in mismatches if m[1] is not None and m[2] is not None and m[2] < m[1]]
    detail = (f"{50 - len(mismatches)}/50 equal to the unit-step oracle; "
              f"{len(below)} mismatches have a cheaper continuous plan, e.g. {below[:3]}")
    assert criterion(2, not mismatches, detail), mismatches


# --- criterion 3 ---------------------------------------------------------------------------

S, A, B, G, D, E = range(6)


def landmark_instance(detour: bool):
    pts = [(0, 0), (1, 0), (2, 0), (3, 0), (2, 2), (3, 2)]
    edges = [(S, A), (A, B), (B, G)] + ([(B, D), (D, E), (E, G)] if detour else [])
    g = Graph(pts, edges)
    ab = Action.move(g, A, B)
    cons = [
        Constraint(0, ab, Interval(1, 5), positive=True),           # t_ab = 1, t_ab^u = 5
        Constraint(0, Action(A, A, 1.0), Interval(2, 3)),           # t_aa = 2, t_aa^u = 3
        Constraint(0, Action(B, B, 1.0), Interval(2.5, 4.5)),
        Constraint(0, Action.move(g, B, G), Interval(2, 4.5)),
        Constraint(0, Action.move(g, B, A), Interval(0, 10)),
    ]
    return g, cons


def earliest_landmark_only(g, cons, start, goal):
    """Landmark chaining that keeps only the single earliest arrival at the
    landmark's source vertex, whichever safe interval it lands in."""
    ac = AgentConstraints(cons)
    planner = LowLevelPlanner(g, ac)
    tables = HeuristicTable(g, range(g.n_vertices))
    starts = [planner.start_node(start)]
    for lm in ac.landmarks:
        a = lm.action.u
        goals = [GoalSpec(a, k) for k in range(len(ac.safe_intervals(a)))]
        reached = [n for n in planner.gsipp(starts, goals, lambda v: tables[a][v]).values() if n is not None]
        if not reached:
            return None
        first = min(reached, key=lambda n: n.g)
        starts = planner.landmark_successors(first, lm)[:1]
        if not starts:
            return None
    node = planner.sipp(starts, goal, lambda v: tables[goal][v])
    return None if node is None else node.to_plan(0, g)


def test_criterion_3_landmark_interval_choice(criterion):
    lines, ok = [], True
    for detour in (True, False):
        g, cons = landmark_instance(detour)
        tables = HeuristicTable(g, range(g.n_vertices))
        naive = earliest_landmark_only(g, cons, S, G)
        best = low_level_ds(0, S, G, cons, g, tables)
        exact = lattice_plan_cost(g, S, G, cons)
        naive_cost = None if naive is None else naive.cost
        got = None if best is None else best.cost
        valid = best is not None and validate_solution(Instance(g, [S], [G]), [best]).ok
        if best is not None and not valid:
            VALIDATION_FAILURES.append(f"c3 detour={detour}")
        this_ok = (exact is not None and got is not None and abs(got - exact) < 1e-9 and valid
                   and (naive_cost is None or naive_cost > exact + 1e-9))
        ok &= this_ok
        lines.append(f"{'with' if detour else 'without'} detour: earliest-only {naive_cost}, "
                     f"interval-aware {got}, exhaustive {exact}")
    assert criterion(3, ok, "; ".join(lines)), lines


# --- criterion 4 -------------------------------------------------------------------------

def test_criterion_4_unsafe_interval_geometry(criterion):
    g = Graph([(0, -1), (0, 1), (-1, 0), (1, 0)], [(0, 1), (2, 3)])
    j = TimedAction(Action.move(g, 2, 3), 0.0)
    closed_form_err = 0.0
    for r in (0.1, 0.25, 0.3, math.sqrt(2) / 4):
        iv = unsafe_interval(Action.move(g, 0, 1), 0.0, j, r, r, g)
        closed_form_err = max(closed_form_err, abs(iv.lo), abs(iv.hi - math.sqrt(2) * 2 * r))

    rng = random.Random(77)
    disagreements, band, interval_errors, compared = [], 0, [], 0
    for n in range(10_000):
        g2, a, b, ra, rb = random_action_pair(rng)
        d = sampled_min_distance(g2.coords, a, b, dt=1e-4)
        if abs(d - (ra + rb)) < 1e-6:
            band += 1
            continue
        compared += 1
        hit = collides(a, b, ra, rb, g2)
        if hit != (d < ra + rb):
            disagreements.append(n)
        if hit and not a.action.is_wait and n % 5 == 0:
            iv = unsafe_interval(a.action, a.start, b, ra, rb, g2)
            if not math.isinf(iv.hi):
                after = sampled_min_distance(g2.coords, TimedAction(a.action, iv.hi), b, dt=1e-4)
                inside = sampled_min_distance(g2.coords, TimedAction(a.action, iv.hi - 1e-6), b, dt=1e-4)
                if after < ra + rb - 1e-6 or inside > ra + rb + 1e-6:
                    interval_errors.append(n)
    ok = closed_form_err < 1e-6 and not disagreements and not interval_errors
    detail = (f"crossing closed-form error {closed_form_err:.1e}; {compared} pairs compared "
              f"({band} in tangency band): {len(disagreements)} collision disagreements, "
              f"{len(interval_errors)} interval-endpoint errors")
    assert criterion(4, ok, detail), (disagreements[:5], interval_errors[:5])


# --- criterion 6 -------------------------------------------------------------------------

def h1_lp(n, weighted):
    rows = []
    for i, j, _ in weighted:
        row = np.zeros(n)
        row[[i, j]] = -1
        rows.append(row)
    res = linprog(np.ones(n), A_ub=np.array(rows), b_ub=-np.array([w for _, _, w in weighted]),
                  bounds=(0, None), method="highs")
    assert res.success
    return res.fun


def test_criterion_6_lp_dominates_greedy(criterion):
    from contcbs.ccbs import h2_greedy

    rng = random.Random(6)
    violations, equal, gaps = 0, 0, []
    for _ in range(500):
        n = rng.randint(2, 12)
        pairs = [p for p in itertools.combinations(range(n), 2) if rng.random() < 0.35]
        if not pairs:
            pairs = [(0, 1)]
        weighted = [(i, j, rng.uniform(0, 5)) for i, j in pairs]
        h1, h2 = h1_lp(n, weighted), h2_greedy(weighted)
        if h2 > h1 + 1e-7:
            violations += 1
        if abs(h1 - h2) <= 1e-7:
            equal += 1
        if h1 > 0:
            gaps.append((h1 - h2) / h1)
    detail = (f"LP >= greedy on {500 - violations}/500 graphs; equal on {equal / 5:.1f}%; "
              f"mean relative gap {100 * statistics.mean(gaps):.1f}%")
    assert criterion(6, violations == 0, detail), detail


# --- criterion 7 -------------------------------------------------------------------------

def test_criterion_7_expansion_ratio(criterion):
    grid = GridMap.empty(16, 16)
    g = build_grid_graph(grid, k=3)
    tables = None
    ratios, solved = [], {"CCBS": 0, "DS+PC+H": 0}
    for scen in range(25):
        pairs = random_scen_pairs(grid, 8, seed=scen)
        inst = Instance(g, [g.vertex_at(s) for s, _ in pairs], [g.vertex_at(t) for _, t in pairs])
        tables = HeuristicTable(g, inst.goals)
        res = {}
        for v in solved:
            res[v] = _validated(f"c7#{scen}/{v}", inst, solve(inst, variant_config(v, time_limit=TIME_LIMIT), tables))
            solved[v] += res[v].solved
        if all(s.solved for s in res.values()):
            ratios.append(100.0 * res["DS+PC+H"].expanded / res["CCBS"].expanded)
    median = statistics.median(ratios) if ratios else None
    ok = median is not None and median < 100.0
    detail = (f"solved CCBS {solved['CCBS']}/25, DS+PC+H {solved['DS+PC+H']}/25; "
              f"median expansion ratio {median if median is None else round(median, 2)}% over {len(ratios)} common")
    assert criterion(7, ok, detail), detail


# --- criterion 8 -------------------------------------------------------------------------

def test_criterion_8_all_solutions_validate(agreement_runs, oracle_runs, criterion):
    # criteria 3 and 7 record into the same list when they run first
    count = sum(s.solved for _, res in agreement_runs for s in res.values())
    count += sum(sol.solved for _, _, sol in oracle_runs)
    detail = f"{count}+ solutions validated; {len(VALIDATION_FAILURES)} failures"
    if VALIDATION_FAILURES:
        detail += f", e.g. {VALIDATION_FAILURES[:3]}"
    assert criterion(8, not VALIDATION_FAILURES, detail), VALIDATION_FAILURES[:5]


# --- criterion 9 -------------------------------------------------------------------------

def test_criterion_9_gsipp_matches_sipp(criterion):
    rng = random.Random(9)
    identical, compared = 0, 0
    for _ in range(100):
        blocked = np.array([[rng.random() < 0.15 for _ in range(8)] for _ in range(8)])
        g = build_grid_graph(GridMap(8, 8, blocked), k=rng.choice([2, 3, 4]))
        start, goal = rng.sample(range(g.n_vertices), 2)
        cons = []
        for _ in range(rng.randint(0, 25)):
            lo = rng.uniform(0, 15)
            hi = lo + rng.uniform(0.1, 4)
            if rng.random() < 0.5:
                v = rng.randrange(g.n_vertices)
                if v != start or lo > 0.5:
                    cons.append(Constraint(0, Action(v, v, 1.0), Interval(lo, hi)))
            else:
                u = rng.randrange(g.n_vertices)
                if g.adj[u]:
                    w, _ = rng.choice(g.adj[u])
                    cons.append(Constraint(0, Action.move(g, u, w), Interval(lo, hi)))
        ac = AgentConstraints(cons)
        h = HeuristicTable(g, [goal])[goal]
        last = len(ac.safe_intervals(goal)) - 1
        planner = LowLevelPlanner(g, ac)
        s = planner.start_node(start)
        compared += 1
        via_sipp = sipp_plan(g, 0, start, goal, ac, lambda v: h[v])
        node = None if s is None else planner.gsipp([s], [GoalSpec(goal, last)], lambda v: h[v])[GoalSpec(goal, last)]
        via_gsipp = None if node is None else node.to_plan(0, g)
        if via_sipp is None or via_gsipp is None:
            identical += via_sipp is None and via_gsipp is None
        else:
            identical += via_sipp.actions == via_gsipp.actions
    detail = f"{identical}/{compared} plan-identical"
    assert criterion(9, identical == compared, detail), detail
