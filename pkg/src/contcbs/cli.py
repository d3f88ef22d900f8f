"""Command-line front end: solve, bench, gen-roadmap, gen-scen, render, ratio."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from .ccbs import VARIANTS, Instance, canonical_variant, solve, variant_config
from .graph import (
    Graph,
    GridMap,
    HeuristicTable,
    ParseError,
    build_grid_graph,
    dump_scen,
    generate_roadmap,
    load_movingai_map,
    load_roadmap,
    load_scen,
    random_scen_pairs,
    serialize_roadmap,
)
from .motion import DEFAULT_RADIUS, Action, Plan, TimedAction

log = logging.getLogger("contcbs")

CSV_FIELDS = ["map", "scen", "variant", "n", "solved", "soc", "expansions", "runtime", "precompute"]
EXIT_OK, EXIT_ERROR, EXIT_TIMEOUT, EXIT_INFEASIBLE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argument errors exit 1 like every other usage error (2 means timeout)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# --- records ------------------------------------------------------------------

@dataclass
class BenchRecord:
    map: str
    scen: str
    variant: str
    n: int
    solved: bool
    soc: float | None
    expansions: int
    runtime: float
    precompute: float

    def __post_init__(self):
        if not self.solved and self.soc is not None:
            raise ValueError("unsolved record cannot carry a SOC")

    def row(self, timing: bool = True) -> list[str]:
        return [
            self.map, self.scen, self.variant, str(self.n), "1" if self.solved else "0",
            "" if self.soc is None else f"{self.soc:.9f}", str(self.expansions),
            f"{self.runtime:.6f}" if timing else "", f"{self.precompute:.6f}" if timing else "",
        ]

    @classmethod
    def from_row(cls, row: dict[str, str]) -> "BenchRecord":
        return cls(
            row["map"], row["scen"], row["variant"], int(row["n"]), row["solved"] == "1",
            float(row["soc"]) if row["soc"] else None, int(row["expansions"]),
            float(row["runtime"]) if row["runtime"] else math.nan,
            float(row["precompute"]) if row.get("precompute") else math.nan,
        )


def records_to_csv(records: Sequence[BenchRecord], timing: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in records:
        w.writerow(r.row(timing))
    return buf.getvalue()


def records_from_csv(text: str) -> list[BenchRecord]:
    reader = csv.DictReader(io.StringIO(text))
    missing = set(CSV_FIELDS[:-1]) - set(reader.fieldnames or [])
    if missing:
        raise ParseError(f"CSV lacks columns {sorted(missing)}")
    return [BenchRecord.from_row(row) for row in reader]


# --- instance loading -----------------------------------------------------------

def load_graph(path: str | Path, k: int = 3, radius: float = DEFAULT_RADIUS) -> tuple[Graph, GridMap | None]:
    """A MovingAI ``.map`` (detected by its ``type`` header) or a roadmap file."""
    text = Path(path).read_text()
    first = next((ln.split() for ln in text.splitlines() if ln.strip()), [])
    if first[:1] == ["type"]:
        grid = load_movingai_map(text)
        return build_grid_graph(grid, k=k, radius=radius), grid
    return load_roadmap(text), None


def load_roadmap_tasks(text: str, g: Graph) -> list[tuple[int, int]]:
    """Roadmap task file: one ``start goal`` vertex-id pair per line, ``#`` comments."""
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError("expected 'start goal'", lineno)
        try:
            s, t = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError("vertex ids must be integers", lineno) from None
        for v in (s, t):
            if not 0 <= v < g.n_vertices:
                raise ParseError(f"unknown vertex {v}", lineno)
        pairs.append((s, t))
    return pairs


def load_tasks(path: str | Path, g: Graph, grid: GridMap | None) -> list[tuple[int, int]]:
    text = Path(path).read_text()
    if grid is None:
        return load_roadmap_tasks(text, g)
    out = []
    for s, t in load_scen(text, grid):
        try:
            out.append((g.vertex_at(s), g.vertex_at(t)))
        except (KeyError, ValueError):
            raise ParseError(f"scenario cell {s} or {t} is blocked") from None
    return out


def make_instance(g: Graph, tasks: Sequence[tuple[int, int]], n: int, radius: float) -> Instance:
    if n > len(tasks):
        raise UsageError(f"{n} agents requested, scenario has {len(tasks)} pairs")
    head = tasks[:n]
    return Instance(g, [s for s, _ in head], [t for _, t in head], [radius] * n)


def run_instance(instance: Instance, variant: str, time_limit: float, seed: int = 0):
    t0 = time.perf_counter()
    tables = HeuristicTable(instance.graph, instance.goals)
    precompute = time.perf_counter() - t0
    res = solve(instance, variant_config(variant, time_limit=time_limit, seed=seed), tables)
    return res, precompute


# --- plan files -------------------------------------------------------------------

def format_plans(plans: Sequence[Plan]) -> str:
    """``agent i k start`` then k lines ``move|wait start duration from to``."""
    lines = []
    for p in plans:
        lines.append(f"agent {p.agent} {len(p.actions)} {p.start}")
        for ta in p.actions:
            a = ta.action
            kind = "wait" if a.is_wait else "move"
            lines.append(f"{kind} {ta.start!r} {a.duration!r} {a.u} {a.v}")
    return "\n".join(lines) + "\n"


def parse_plans(text: str) -> list[Plan]:
    plans: list[Plan] = []
    pending = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "agent":
                if pending:
                    raise ParseError("previous agent has missing actions", lineno)
                agent, pending = int(parts[1]), int(parts[2])
                start = int(parts[3]) if len(parts) > 3 else None
                plans.append(Plan(agent, -1 if start is None else start, []))
            elif parts[0] in ("move", "wait") and len(parts) == 5:
                if not plans or not pending:
                    raise ParseError("action outside an agent block", lineno)
                start, dur, u, v = float(parts[1]), float(parts[2]), int(parts[3]), int(parts[4])
                if (parts[0] == "wait") != (u == v):
                    raise ParseError("action kind does not match endpoints", lineno)
                plan = plans[-1]
                if plan.start < 0:
                    plan.start = u
                plan.actions.append(TimedAction(Action(u, v, dur), start))
                pending -= 1
            else:
                raise ParseError(f"unrecognised line {raw.strip()!r}", lineno)
        except (ValueError, IndexError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"malformed line {raw.strip()!r}", lineno) from None
    if pending:
        raise ParseError("plan file ends inside an agent block")
    return plans


# --- rendering -----------------------------------------------------------------------

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
            "#bcbd22", "#7f7f7f"]


def render_svg(g: Graph, plans: Sequence[Plan], radius: float = DEFAULT_RADIUS,
               grid: GridMap | None = None, scale: float = 40.0) -> str:
    for p in plans:
        for v in [p.start] + [ta.action.v for ta in p.actions] + [ta.action.u for ta in p.actions]:
            if not 0 <= v < g.n_vertices:
                raise ValueError(f"plan of agent {p.agent} references unknown vertex {v}")
    xs = [x for x, _ in g.coords] or [0.0]
    ys = [y for _, y in g.coords] or [0.0]
    pad = 1.0
    x0, y0 = min(xs) - pad, min(ys) - pad
    width = (max(xs) - min(xs) + 2 * pad) * scale
    height = (max(ys) - min(ys) + 2 * pad) * scale + 30

    def pt(v):
        x, y = g.coords[v]
        return (x - x0) * scale, (y - y0) * scale

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
           f'viewBox="0 0 {width:.1f} {height:.1f}">',
           '<rect width="100%" height="100%" fill="white"/>']
    if grid is not None:
        for y in range(grid.height):
            for x in range(grid.width):
                if not grid.passable(x, y):
                    out.append(f'<rect x="{(x - 0.5 - x0) * scale:.1f}" y="{(y - 0.5 - y0) * scale:.1f}" '
                               f'width="{scale:.1f}" height="{scale:.1f}" fill="#444"/>')
    out.append('<g stroke="#ccc" stroke-width="1">')
    for u, v in g.edges():
        (ax, ay), (bx, by) = pt(u), pt(v)
        out.append(f'<line x1="{ax:.1f}" y1="{ay:.1f}" x2="{bx:.1f}" y2="{by:.1f}"/>')
    out.append("</g>")
    for p in plans:
        color = _PALETTE[p.agent % len(_PALETTE)]
        verts = p.vertices()
        points = " ".join(f"{x:.1f},{y:.1f}" for x, y in map(pt, verts))
        out.append(f'<polyline class="trajectory" data-agent="{p.agent}" points="{points}" fill="none" '
                   f'stroke="{color}" stroke-width="3" stroke-opacity="0.8"/>')
        sx, sy = pt(verts[0])
        gx, gy = pt(verts[-1])
        out.append(f'<circle cx="{sx:.1f}" cy="{sy:.1f}" r="{radius * scale:.1f}" fill="{color}" '
                   f'fill-opacity="0.35" stroke="{color}"><title>start {p.agent}</title></circle>')
        out.append(f'<rect x="{gx - 5:.1f}" y="{gy - 5:.1f}" width="10" height="10" fill="{color}">'
                   f'<title>goal {p.agent}</title></rect>')
    ly = height - 15
    out.append(f'<circle cx="20" cy="{ly:.1f}" r="{radius * scale:.1f}" fill="none" stroke="black"/>')
    out.append(f'<text x="{25 + radius * scale:.1f}" y="{ly + 4:.1f}" font-size="12" font-family="sans-serif">'
               f'{escape(f"agent radius {radius:.4f}")}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# --- bench protocol ----------------------------------------------------------------------

def _bench_task(args) -> list[BenchRecord]:
    map_path, map_id, scen_path, variant, time_limit, k, radius, max_agents, seed = args
    g, grid = load_graph(map_path, k, radius)
    tasks = load_tasks(scen_path, g, grid)
    scen_id = Path(scen_path).name
    records = []
    top = len(tasks) if max_agents is None else min(max_agents, len(tasks))
    for n in range(2, top + 1):
        inst = make_instance(g, tasks, n, radius)
        res, pre = run_instance(inst, variant, time_limit, seed)
        records.append(BenchRecord(map_id, scen_id, variant, n, res.solved, res.soc, res.expanded,
                                   res.runtime, pre))
        log.info("%s %s %s n=%d %s", map_id, scen_id, variant, n, res.status)
        if not res.solved:
            break
    return records


def bench(map_path: str, scen_paths: Sequence[str], variants: Sequence[str], time_limit: float,
          k: int = 3, radius: float = DEFAULT_RADIUS, max_agents: int | None = None, seed: int = 0,
          jobs: int = 1) -> list[BenchRecord]:
    """Incremental protocol: n = 2, 3, ... per scenario and variant until the first failure."""
    map_id = Path(map_path).name
    tasks = [(map_path, map_id, s, canonical_variant(v), time_limit, k, radius, max_agents, seed)
             for s in sorted(scen_paths) for v in variants]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            chunks = list(pool.map(_bench_task, tasks))
    else:
        chunks = [_bench_task(t) for t in tasks]
    records = [r for chunk in chunks for r in chunk]
    order = {canonical_variant(v): i for i, v in enumerate(variants)}
    records.sort(key=lambda r: (r.scen, order[r.variant], r.n))
    return records


def expansion_ratios(a: Sequence[BenchRecord], b: Sequence[BenchRecord]) -> list[tuple[str, int, float | None, int]]:
    """Per (map, n): median over commonly solved instances of 100 * exp_b / exp_a."""
    index_a = {(r.map, r.scen, r.n): r for r in a}
    index_b = {(r.map, r.scen, r.n): r for r in b}
    cells: dict[tuple[str, int], list[float]] = {}
    for key in sorted(set(index_a) | set(index_b), key=lambda t: (t[0], t[2], t[1])):
        cells.setdefault((key[0], key[2]), [])
        ra, rb = index_a.get(key), index_b.get(key)
        if ra and rb and ra.solved and rb.solved and ra.expansions > 0:
            cells[(key[0], key[2])].append(100.0 * rb.expansions / ra.expansions)
    return [(m, n, statistics.median(v) if v else None, len(v)) for (m, n), v in sorted(cells.items())]


def _select_variant(records: list[BenchRecord], name: str | None, which: str) -> list[BenchRecord]:
    present = sorted({r.variant for r in records})
    if name is None:
        if len(present) != 1:
            raise UsageError(f"CSV {which} holds variants {present}; pick one with --variant-{which}")
        return records
    key = canonical_variant(name)
    if key not in present:
        raise UsageError(f"variant {name} not found in CSV {which} (has {present})")
    return [r for r in records if r.variant == key]


# --- subcommands -----------------------------------------------------------------------

def cmd_solve(args) -> int:
    g, grid = load_graph(args.map, args.k, args.radius)
    tasks = load_tasks(args.scen, g, grid)
    n = args.agents if args.agents is not None else len(tasks)
    inst = make_instance(g, tasks, n, args.radius)
    res, pre = run_instance(inst, args.variant, args.time_limit, args.seed)
    rec = BenchRecord(Path(args.map).name, Path(args.scen).name, canonical_variant(args.variant), n,
                      res.solved, res.soc, res.expanded, res.runtime, pre)
    print(",".join(rec.row()))
    if res.solved and args.out:
        Path(args.out).write_text(format_plans(res.plans))
    return {"solved": EXIT_OK, "timeout": EXIT_TIMEOUT}.get(res.status, EXIT_INFEASIBLE)


def cmd_bench(args) -> int:
    scens = list(args.scen or [])
    if args.scen_dir:
        scens += [str(p) for p in sorted(Path(args.scen_dir).glob("*.scen"))]
        scens += [str(p) for p in sorted(Path(args.scen_dir).glob("*.tasks"))]
    if not scens:
        raise UsageError("no scenario files given")
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        variant_config(v)  # validate names before the sweep
    records = bench(args.map, scens, variants, args.time_limit, args.k, args.radius,
                    args.max_agents, args.seed, args.jobs)
    text = records_to_csv(records, timing=not args.omit_timing)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_gen_roadmap(args) -> int:
    grid = load_movingai_map(Path(args.map).read_text()) if args.map else None
    g = generate_roadmap(args.width, args.height, args.nodes, args.connect_radius, args.seed,
                         grid=grid, agent_radius=args.radius)
    text = serialize_roadmap(g)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_gen_scen(args) -> int:
    grid = load_movingai_map(Path(args.map).read_text())
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.map).stem
    for i in range(args.count):
        pairs = random_scen_pairs(grid, args.agents, args.seed + i)
        (out / f"{stem}-random-{i + 1}.scen").write_text(dump_scen(pairs, Path(args.map).name,
                                                                  grid.width, grid.height))
    return EXIT_OK


def cmd_render(args) -> int:
    g, grid = load_graph(args.map, args.k, args.radius)
    plans = parse_plans(Path(args.plan).read_text())
    svg = render_svg(g, plans, args.radius, grid)
    if args.out:
        Path(args.out).write_text(svg)
    else:
        sys.stdout.write(svg)
    return EXIT_OK


def cmd_ratio(args) -> int:
    a = records_from_csv(Path(args.csv_a).read_text())
    b = records_from_csv(Path(args.csv_b or args.csv_a).read_text())
    a = _select_variant(a, args.variant_a, "a")
    b = _select_variant(b, args.variant_b, "b")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["map", "n", "ratio_pct", "instances"])
    for m, n, ratio, count in expansion_ratios(a, b):
        w.writerow([m, n, "" if ratio is None else f"{ratio:.2f}", count])
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="contcbs", description="Continuous-time conflict-based search for disk agents.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def graph_opts(sp, map_required=True):
        sp.add_argument("--map", required=map_required, help="MovingAI .map or roadmap file")
        sp.add_argument("--k", type=int, default=3, help="grid neighbourhood 2^k (grids only)")
        sp.add_argument("--radius", type=float, default=DEFAULT_RADIUS)

    sp = sub.add_parser("solve", help="solve one instance")
    graph_opts(sp)
    sp.add_argument("--scen", required=True, help=".scen file, or 'start goal' task file for roadmaps")
    sp.add_argument("--agents", type=int, help="use the first N pairs (default: all)")
    sp.add_argument("--variant", default="DS+PC+H", help=", ".join(VARIANTS))
    sp.add_argument("--time-limit", type=float, default=30.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="write the plan file here")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("bench", help="incremental-agent benchmark sweep to CSV")
    graph_opts(sp)
    sp.add_argument("--scen", action="append", help="scenario file (repeatable)")
    sp.add_argument("--scen-dir", help="directory of .scen / .tasks files")
    sp.add_argument("--variants", default="CCBS,DS+PC+H")
    sp.add_argument("--time-limit", type=float, default=30.0)
    sp.add_argument("--max-agents", type=int)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--omit-timing", action="store_true", help="blank runtime columns for reproducible CSVs")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("gen-roadmap", help="random geometric roadmap")
    sp.add_argument("--map", help="optional MovingAI map providing obstacles and extent")
    sp.add_argument("--width", type=float, default=10.0)
    sp.add_argument("--height", type=float, default=10.0)
    sp.add_argument("--nodes", type=int, default=100)
    sp.add_argument("--connect-radius", type=float, default=2.0)
    sp.add_argument("--radius", type=float, default=DEFAULT_RADIUS)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_gen_roadmap)

    sp = sub.add_parser("gen-scen", help="random scenario files for a grid map")
    sp.add_argument("--map", required=True)
    sp.add_argument("--agents", type=int, required=True)
    sp.add_argument("--count", type=int, default=25)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_gen_scen)

    sp = sub.add_parser("render", help="draw a plan file as SVG")
    graph_opts(sp)
    sp.add_argument("--plan", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("ratio", help="median expansion ratio b/a per map and n")
    sp.add_argument("csv_a")
    sp.add_argument("csv_b", nargs="?")
    sp.add_argument("--variant-a")
    sp.add_argument("--variant-b")
    sp.set_defaults(func=cmd_ratio)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        return args.func(args)
    except (OSError, ValueError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
