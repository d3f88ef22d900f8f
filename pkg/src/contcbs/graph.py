"""Geometric graphs: MovingAI grids, 2^k-neighbourhood grid graphs, roadmaps and
distance tables used as low-level heuristics."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

PASSABLE = frozenset(".G")
BLOCKED = frozenset("@OTW")


class ParseError(ValueError):
    """Malformed map, scenario or roadmap text."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class Graph:
    """Undirected graph embedded in the plane; edge weight is Euclidean length.

    Vertex ids are dense ``0..n-1``. ``adj[u]`` lists ``(v, weight)`` pairs.
    """

    def __init__(self, coords: Sequence[tuple[float, float]], edges: Iterable[tuple[int, int]]):
        self.coords: list[tuple[float, float]] = [(float(x), float(y)) for x, y in coords]
        n = len(self.coords)
        self.adj: list[list[tuple[int, float]]] = [[] for _ in range(n)]
        self._w: dict[tuple[int, int], float] = {}
        for u, v in edges:
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u}, {v}) references unknown vertex")
            if u == v or (u, v) in self._w:
                continue
            w = math.dist(self.coords[u], self.coords[v])
            if w <= 0:
                raise ValueError(f"edge ({u}, {v}) has zero length")
            self._w[(u, v)] = self._w[(v, u)] = w
            self.adj[u].append((v, w))
            self.adj[v].append((u, w))
        # vertex lookup by integer cell, filled by build_grid_graph
        self.cell_to_vertex: dict[tuple[int, int], int] = {}

    @property
    def n_vertices(self) -> int:
        return len(self.coords)

    @property
    def n_edges(self) -> int:
        return len(self._w) // 2

    def weight(self, u: int, v: int) -> float:
        return self._w[(u, v)]

    def has_edge(self, u: int, v: int) -> bool:
        return (u, v) in self._w

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges as ``(u, v)`` with ``u < v``, sorted."""
        return sorted((u, v) for (u, v) in self._w if u < v)

    def vertex_at(self, cell: tuple[int, int]) -> int:
        try:
            return self.cell_to_vertex[cell]
        except KeyError:
            raise KeyError(f"cell {cell} is not a vertex of this graph") from None

    def __repr__(self) -> str:
        return f"Graph(n_vertices={self.n_vertices}, n_edges={self.n_edges})"


@dataclass
class GridMap:
    width: int
    height: int
    blocked: np.ndarray  # shape (height, width), True = blocked

    def __post_init__(self):
        self.blocked = np.asarray(self.blocked, dtype=bool)
        if self.blocked.shape != (self.height, self.width):
            raise ValueError(
                f"blocked has shape {self.blocked.shape}, expected {(self.height, self.width)}"
            )

    def passable(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height and not self.blocked[y, x]

    @classmethod
    def empty(cls, width: int, height: int) -> "GridMap":
        return cls(width, height, np.zeros((height, width), dtype=bool))

    def to_text(self) -> str:
        rows = ["".join("@" if b else "." for b in row) for row in self.blocked]
        return "\n".join(["type octile", f"height {self.height}", f"width {self.width}", "map", *rows]) + "\n"


def load_movingai_map(text: str) -> GridMap:
    lines = text.splitlines()
    header: dict[str, str] = {}
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        if line == "map":
            break
        parts = line.split()
        if len(parts) != 2 or parts[0] not in ("type", "height", "width"):
            raise ParseError(f"unexpected header line {line!r}", i)
        header[parts[0]] = parts[1]
    else:
        raise ParseError("missing 'map' line")
    for key in ("height", "width"):
        if key not in header:
            raise ParseError(f"missing '{key}' in header")
    try:
        height, width = int(header["height"]), int(header["width"])
    except ValueError:
        raise ParseError("height/width must be integers") from None
    if height <= 0 or width <= 0:
        raise ParseError("height/width must be positive")

    blocked = np.zeros((height, width), dtype=bool)
    row = 0
    for lineno in range(i, len(lines)):
        raw = lines[lineno].rstrip("\r\n")
        if row == height:
            if raw.strip():
                raise ParseError("more map rows than declared height", lineno + 1)
            continue
        if len(raw) != width:
            raise ParseError(f"row has length {len(raw)}, expected {width}", lineno + 1)
        for x, ch in enumerate(raw):
            if ch in PASSABLE:
                continue
            if ch in BLOCKED:
                blocked[row, x] = True
            else:
                raise ParseError(f"unknown map character {ch!r}", lineno + 1)
        row += 1
    if row != height:
        raise ParseError(f"map has {row} rows, expected {height}", len(lines))
    return GridMap(width, height, blocked)


def neighborhood_moves(k: int) -> list[tuple[int, int]]:
    """The 2^k move vectors, counter-clockwise from (1, 0)."""
    if not 2 <= k <= 5:
        raise ValueError(f"neighbourhood exponent k must be in [2, 5], got {k}")
    moves = [(1, 0), (0, 1), (-1, 0), (0, -1)]
    for _ in range(k - 2):
        refined = []
        for a, b in zip(moves, moves[1:] + moves[:1]):
            sx, sy = a[0] + b[0], a[1] + b[1]
            g = math.gcd(sx, sy)
            refined += [a, (sx // g, sy // g)]
        moves = refined
    return moves


def _swept_cells(dx: int, dy: int) -> list[tuple[int, int]]:
    """Cells whose closed unit square touches the segment (0,0)->(dx,dy)."""
    cells = []
    for cx in range(min(0, dx), max(0, dx) + 1):
        for cy in range(min(0, dy), max(0, dy) + 1):
            lo, hi = Fraction(0), Fraction(1)
            for c, d in ((cx, dx), (cy, dy)):
                a, b = Fraction(2 * c - 1, 2), Fraction(2 * c + 1, 2)
                if d == 0:
                    if not a <= 0 <= b:
                        lo, hi = Fraction(1), Fraction(0)
                    continue
                s0, s1 = sorted((a / d, b / d))
                lo, hi = max(lo, s0), min(hi, s1)
            if lo <= hi:
                cells.append((cx, cy))
    return cells


def build_grid_graph(grid: GridMap, k: int = 3, radius: float = math.sqrt(2) / 4) -> Graph:
    """Grid graph with one vertex per passable cell at (col, row).

    A move is legal iff every cell touched by the centre-to-centre segment is
    passable (touching a blocked corner counts).
    """
    moves = neighborhood_moves(k)
    if not 0 < radius < 0.5 * math.sqrt(2):
        raise ValueError(f"radius must be in (0, sqrt(2)/2), got {radius}")
    cell_to_vertex: dict[tuple[int, int], int] = {}
    coords = []
    for y in range(grid.height):
        for x in range(grid.width):
            if not grid.blocked[y, x]:
                cell_to_vertex[(x, y)] = len(coords)
                coords.append((x, y))
    swept = {m: _swept_cells(*m) for m in moves}
    edges = []
    for (x, y), u in cell_to_vertex.items():
        for m in moves:
            tx, ty = x + m[0], y + m[1]
            if (tx, ty) not in cell_to_vertex:
                continue
            if all(grid.passable(x + cx, y + cy) for cx, cy in swept[m]):
                v = cell_to_vertex[(tx, ty)]
                if u < v:
                    edges.append((u, v))
    g = Graph(coords, edges)
    g.cell_to_vertex = cell_to_vertex
    return g


def load_scen(text: str, grid: GridMap | None = None) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    """Parse a MovingAI ``version 1`` scenario into ordered (start, goal) cells."""
    lines = text.splitlines()
    body_start = None
    for i, line in enumerate(lines):
        if line.strip():
            if line.split()[:1] != ["version"]:
                raise ParseError("missing 'version' header", i + 1)
            body_start = i + 1
            break
    if body_start is None:
        raise ParseError("missing 'version' header")
    pairs = []
    for lineno in range(body_start, len(lines)):
        line = lines[lineno].strip()
        if not line:
            continue
        fields = line.split("\t") if "\t" in line else line.split()
        if len(fields) != 9:
            raise ParseError(f"expected 9 fields, got {len(fields)}", lineno + 1)
        try:
            w, h, sx, sy, gx, gy = (int(f) for f in fields[2:8])
            float(fields[8])
        except ValueError:
            raise ParseError("non-numeric field", lineno + 1) from None
        if grid is not None:
            w, h = grid.width, grid.height
        for x, y in ((sx, sy), (gx, gy)):
            if not (0 <= x < w and 0 <= y < h):
                raise ParseError(f"coordinate ({x}, {y}) outside {w}x{h} map", lineno + 1)
        pairs.append(((sx, sy), (gx, gy)))
    return pairs


def dump_scen(pairs, map_name: str, width: int, height: int) -> str:
    out = ["version 1"]
    for (s, g) in pairs:
        opt = math.dist(s, g)
        out.append(f"0\t{map_name}\t{width}\t{height}\t{s[0]}\t{s[1]}\t{g[0]}\t{g[1]}\t{opt:.8f}")
    return "\n".join(out) + "\n"


def load_roadmap(text: str) -> Graph:
    """Parse ``v id x y`` / ``e u v`` records; ``#`` starts a comment."""
    verts: dict[int, tuple[float, float]] = {}
    edges: list[tuple[int, int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "v" and len(parts) == 4:
                vid = int(parts[1])
                if vid in verts:
                    raise ParseError(f"duplicate vertex id {vid}", lineno)
                verts[vid] = (float(parts[2]), float(parts[3]))
            elif parts[0] == "e" and len(parts) == 3:
                edges.append((int(parts[1]), int(parts[2]), lineno))
            else:
                raise ParseError(f"unrecognised record {line!r}", lineno)
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"bad number in {line!r}", lineno) from None
    if sorted(verts) != list(range(len(verts))):
        raise ParseError("vertex ids must be 0..n-1")
    for u, v, lineno in edges:
        for x in (u, v):
            if x not in verts:
                raise ParseError(f"edge endpoint {x} is not a vertex", lineno)
        if u == v:
            raise ParseError("self-loop edge", lineno)
    return Graph([verts[i] for i in range(len(verts))], [(u, v) for u, v, _ in edges])


def serialize_roadmap(g: Graph) -> str:
    lines = [f"# roadmap: {g.n_vertices} vertices, {g.n_edges} edges"]
    lines += [f"v {i} {x!r} {y!r}" for i, (x, y) in enumerate(g.coords)]
    lines += [f"e {u} {v}" for u, v in g.edges()]
    return "\n".join(lines) + "\n"


def _segment_box_distance(p, q, lo, hi) -> float:
    """Distance between segment pq and the axis-aligned box [lo, hi]."""
    # Liang-Barsky: segment touches the box
    s0, s1 = 0.0, 1.0
    d = (q[0] - p[0], q[1] - p[1])
    inside = True
    for ax in range(2):
        if d[ax] == 0:
            if not lo[ax] <= p[ax] <= hi[ax]:
                inside = False
                break
            continue
        a, b = (lo[ax] - p[ax]) / d[ax], (hi[ax] - p[ax]) / d[ax]
        s0, s1 = max(s0, min(a, b)), min(s1, max(a, b))
    if inside and s0 <= s1:
        return 0.0

    def point_box(pt):
        dx = max(lo[0] - pt[0], 0.0, pt[0] - hi[0])
        dy = max(lo[1] - pt[1], 0.0, pt[1] - hi[1])
        return math.hypot(dx, dy)

    best = min(point_box(p), point_box(q))
    for corner in ((lo[0], lo[1]), (lo[0], hi[1]), (hi[0], lo[1]), (hi[0], hi[1])):
        best = min(best, point_segment_distance(corner, p, q))
    return best


def point_segment_distance(c, p, q) -> float:
    dx, dy = q[0] - p[0], q[1] - p[1]
    L2 = dx * dx + dy * dy
    s = 0.0 if L2 == 0 else max(0.0, min(1.0, ((c[0] - p[0]) * dx + (c[1] - p[1]) * dy) / L2))
    return math.hypot(p[0] + s * dx - c[0], p[1] + s * dy - c[1])


def _clear_of_obstacles(grid: GridMap, p, q, clearance: float) -> bool:
    xs = (min(p[0], q[0]) - clearance, max(p[0], q[0]) + clearance)
    ys = (min(p[1], q[1]) - clearance, max(p[1], q[1]) + clearance)
    for cy in range(max(0, math.floor(ys[0] + 0.5)), min(grid.height - 1, math.ceil(ys[1] - 0.5)) + 1):
        for cx in range(max(0, math.floor(xs[0] + 0.5)), min(grid.width - 1, math.ceil(xs[1] - 0.5)) + 1):
            if grid.blocked[cy, cx]:
                box = ((cx - 0.5, cy - 0.5), (cx + 0.5, cy + 0.5))
                if _segment_box_distance(p, q, *box) < clearance:
                    return False
    return True


def generate_roadmap(
    width: float,
    height: float,
    n_nodes: int,
    connect_radius: float,
    seed: int,
    grid: GridMap | None = None,
    agent_radius: float = math.sqrt(2) / 4,
) -> Graph:
    """Random geometric roadmap; returns the largest connected component.

    With ``grid`` given, points and edges keep ``agent_radius`` clearance from
    blocked cells and the map frame is ``[-0.5, W-0.5] x [-0.5, H-0.5]``.
    """
    if n_nodes < 2:
        raise ValueError("n_nodes must be >= 2")
    rng = np.random.default_rng(seed)
    if grid is None:
        lo, hi = (0.0, 0.0), (float(width), float(height))
    else:
        lo, hi = (-0.5, -0.5), (grid.width - 0.5, grid.height - 0.5)
    pts: list[tuple[float, float]] = []
    attempts = 0
    while len(pts) < n_nodes:
        attempts += 1
        if attempts > 1000 * n_nodes:
            raise ValueError("could not place points in free space")
        p = (float(rng.uniform(lo[0], hi[0])), float(rng.uniform(lo[1], hi[1])))
        if grid is not None and not _clear_of_obstacles(grid, p, p, agent_radius):
            continue
        pts.append(p)

    edges = []
    for u in range(n_nodes):
        for v in range(u + 1, n_nodes):
            if math.dist(pts[u], pts[v]) > connect_radius:
                continue
            if grid is not None and not _clear_of_obstacles(grid, pts[u], pts[v], agent_radius):
                continue
            edges.append((u, v))

    nbrs: list[list[int]] = [[] for _ in range(n_nodes)]
    for u, v in edges:
        nbrs[u].append(v)
        nbrs[v].append(u)
    comp = [-1] * n_nodes
    best: list[int] = []
    for s in range(n_nodes):
        if comp[s] >= 0:
            continue
        comp[s] = s
        stack, members = [s], [s]
        while stack:
            u = stack.pop()
            for v in nbrs[u]:
                if comp[v] < 0:
                    comp[v] = s
                    stack.append(v)
                    members.append(v)
        if len(members) > len(best):
            best = members
    if len(best) < 2:
        raise ValueError("generated roadmap has no connected component with an edge")
    best.sort()
    relabel = {old: new for new, old in enumerate(best)}
    return Graph(
        [pts[i] for i in best],
        [(relabel[u], relabel[v]) for u, v in edges if u in relabel and v in relabel],
    )


def dijkstra_heuristic(g: Graph, goal: int) -> np.ndarray:
    """Exact cost-to-go to ``goal`` for every vertex (``inf`` if unreachable)."""
    dist = np.full(g.n_vertices, np.inf)
    dist[goal] = 0.0
    heap = [(0.0, goal)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, w in g.adj[u]:
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


class HeuristicTable:
    """Dijkstra tables keyed by goal vertex; also serve as differential-heuristic pivots."""

    def __init__(self, g: Graph, goals: Iterable[int] = ()):
        self.graph = g
        self.columns: dict[int, np.ndarray] = {}
        for goal in goals:
            self.add(goal)

    def add(self, goal: int) -> np.ndarray:
        if goal not in self.columns:
            self.columns[goal] = dijkstra_heuristic(self.graph, goal)
        return self.columns[goal]

    def __getitem__(self, goal: int) -> np.ndarray:
        return self.columns[goal]

    @property
    def pivots(self) -> list[int]:
        return list(self.columns)


def dh_estimate(tables: HeuristicTable, v: int, target: int) -> float:
    """max over pivots of |h_p(v) - h_p(target)|; inf when reachability differs."""
    if not tables.columns:
        raise ValueError("heuristic table has no pivots")
    best = 0.0
    for col in tables.columns.values():
        a, b = col[v], col[target]
        if math.isinf(a) or math.isinf(b):
            if math.isinf(a) != math.isinf(b):
                return math.inf
            continue
        best = max(best, abs(a - b))
    return best


def largest_component_cells(grid: GridMap) -> list[tuple[int, int]]:
    """Passable cells of the largest 4-connected component, row-major."""
    seen: set[tuple[int, int]] = set()
    best: list[tuple[int, int]] = []
    for y in range(grid.height):
        for x in range(grid.width):
            if (x, y) in seen or not grid.passable(x, y):
                continue
            seen.add((x, y))
            comp, stack = [], [(x, y)]
            while stack:
                cx, cy = stack.pop()
                comp.append((cx, cy))
                for nx, ny in ((cx + 1, cy), (cx - 1, cy), (cx, cy + 1), (cx, cy - 1)):
                    if (nx, ny) not in seen and 0 <= nx < grid.width and 0 <= ny < grid.height \
                            and grid.passable(nx, ny):
                        seen.add((nx, ny))
                        stack.append((nx, ny))
            if len(comp) > len(best):
                best = comp
    return sorted(best, key=lambda c: (c[1], c[0]))


def random_scen_pairs(grid: GridMap, n: int, seed: int) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    """``n`` start/goal pairs with distinct starts and distinct goals, all in
    the largest connected region."""
    cells = largest_component_cells(grid)
    if len(cells) < n:
        raise ValueError(f"only {len(cells)} connected cells for {n} agents")
    rng = np.random.default_rng(seed)
    starts = rng.choice(len(cells), size=n, replace=False)
    goals = rng.choice(len(cells), size=n, replace=False)
    return [(cells[s], cells[g]) for s, g in zip(starts, goals)]
