"""Navigation graphs, episodes, shortest paths and the world file format."""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence

import numpy as np

SCHEMA_VERSION = 1
DEFAULT_SUCCESS_RADIUS = 3.0
_GEN_ATTEMPTS = 16
_LEN_SLACK = 1e-9


class GraphError(ValueError):
    """A graph or episode violates one of its structural invariants."""


class GraphGenerationError(RuntimeError):
    pass


class EpisodeGenerationError(RuntimeError):
    pass


class WorldFormatError(ValueError):
    """Malformed world file. ``field`` is a dotted path, ``line`` is 1-based when known."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(field)
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class DistanceField:
    source: int
    dist: tuple[float, ...]
    pred: tuple[int, ...]  # -1 at the source

    def path_to(self, target: int) -> list[int]:
        path = [target]
        while path[-1] != self.source:
            path.append(self.pred[path[-1]])
        path.reverse()
        return path


def _dijkstra(adj: Sequence[Sequence[tuple[int, float]]], source: int) -> DistanceField:
    # Heap entries (dist, node) pop the lowest id among equal distances; a
    # predecessor is only replaced on strict improvement.
    n = len(adj)
    dist = [math.inf] * n
    pred = [-1] * n
    done = [False] * n
    dist[source] = 0.0
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v, w in adj[u]:
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
    return DistanceField(source, tuple(dist), tuple(pred))


@dataclass(frozen=True)
class NavGraph:
    """Undirected metric graph; node ids are dense in ``[0, node_count)``.

    ``edges`` holds ``(u, v, length)`` with ``u < v``, sorted.
    """

    positions: tuple[tuple[float, float], ...]
    edges: tuple[tuple[int, int, float], ...]

    def __post_init__(self) -> None:
        n = len(self.positions)
        if n < 1:
            raise GraphError("graph has no nodes")
        seen = set()
        for u, v, length in self.edges:
            if not (0 <= u < n and 0 <= v < n):
                raise GraphError(f"edge ({u}, {v}) references unknown node")
            if u == v:
                raise GraphError(f"self-loop at node {u}")
            if not (u < v):
                raise GraphError(f"edge ({u}, {v}) not in canonical order")
            if (u, v) in seen:
                raise GraphError(f"duplicate edge ({u}, {v})")
            seen.add((u, v))
            if not (math.isfinite(length) and length > 0):
                raise GraphError(f"invalid edge length {length!r} on ({u}, {v})")
            if length < self.euclidean(u, v) - _LEN_SLACK:
                raise GraphError(f"edge ({u}, {v}) shorter than the straight line")
        if not self.is_connected():
            raise GraphError("graph is not connected")

    @property
    def node_count(self) -> int:
        return len(self.positions)

    @cached_property
    def adjacency(self) -> tuple[tuple[tuple[int, float], ...], ...]:
        adj: list[list[tuple[int, float]]] = [[] for _ in self.positions]
        for u, v, length in self.edges:
            adj[u].append((v, length))
            adj[v].append((u, length))
        return tuple(tuple(sorted(row)) for row in adj)

    @cached_property
    def _lengths(self) -> dict[tuple[int, int], float]:
        out = {}
        for u, v, length in self.edges:
            out[(u, v)] = length
            out[(v, u)] = length
        return out

    @cached_property
    def _dist_cache(self) -> dict[int, DistanceField]:
        return {}

    def neighbors(self, u: int) -> tuple[int, ...]:
        return tuple(v for v, _ in self.adjacency[u])

    def has_edge(self, u: int, v: int) -> bool:
        return (u, v) in self._lengths

    def edge_length(self, u: int, v: int) -> float:
        try:
            return self._lengths[(u, v)]
        except KeyError:
            raise GraphError(f"no edge between {u} and {v}") from None

    def euclidean(self, u: int, v: int) -> float:
        (x1, y1), (x2, y2) = self.positions[u], self.positions[v]
        return math.hypot(x1 - x2, y1 - y2)

    def is_connected(self) -> bool:
        parent = list(range(self.node_count))

        def find(a: int) -> int:
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for u, v, _ in self.edges:
            parent[find(u)] = find(v)
        return len({find(a) for a in range(self.node_count)}) == 1

    def distances(self, source: int) -> DistanceField:
        if not (isinstance(source, (int, np.integer)) and 0 <= source < self.node_count):
            raise GraphError(f"unknown source node {source!r}")
        cache = self._dist_cache
        df = cache.get(source)
        if df is None:
            df = _dijkstra(self.adjacency, int(source))
            cache[source] = df
        return df

    def distance(self, u: int, v: int) -> float:
        return self.distances(v).dist[u]

    def path_length(self, path: Sequence[int]) -> float:
        return math.fsum(self.edge_length(a, b) for a, b in zip(path, path[1:]))


def shortest_distances(graph: NavGraph, source: int) -> DistanceField:
    return graph.distances(source)


@dataclass(frozen=True)
class GraphParams:
    node_count: int
    mean_degree: float
    area_side: float


def generate_graph(params: GraphParams, seed: int) -> NavGraph:
    """Random geometric graph: uniform points, k-nearest links, then augmentation.

    Each node links to its ``mean_degree // 2`` nearest neighbours; the globally
    shortest remaining pairs are then added until the mean degree target is met,
    and components are joined by their closest cross pair.
    """
    n = params.node_count
    if n < 2:
        raise ValueError("node_count must be >= 2")
    if params.mean_degree < 2:
        raise ValueError("mean_degree must be >= 2")
    if not params.area_side > 0:
        raise ValueError("area_side must be > 0")

    rng = np.random.default_rng(seed)
    for _ in range(_GEN_ATTEMPTS):
        pts = rng.uniform(0.0, params.area_side, size=(n, 2))
        d = np.hypot(pts[:, None, 0] - pts[None, :, 0], pts[:, None, 1] - pts[None, :, 1])
        iu = np.triu_indices(n, k=1)
        if np.min(d[iu]) <= 0.0:
            continue
        edges = _connect(d, params.mean_degree)
        positions = tuple((float(x), float(y)) for x, y in pts)
        # Lengths are recomputed by hypot on Python floats so they match
        # NavGraph.euclidean bit for bit.
        out = []
        for u, v in sorted(edges):
            (x1, y1), (x2, y2) = positions[u], positions[v]
            out.append((u, v, math.hypot(x1 - x2, y1 - y2)))
        return NavGraph(positions, tuple(out))
    raise GraphGenerationError(
        f"no valid graph after {_GEN_ATTEMPTS} attempts (params {params!r})"
    )


def _connect(d: np.ndarray, mean_degree: float) -> set[tuple[int, int]]:
    n = d.shape[0]
    k = min(n - 1, max(1, int(mean_degree) // 2))
    order = np.argsort(d, axis=1, kind="stable")
    edges: set[tuple[int, int]] = set()
    for u in range(n):
        for v in order[u, 1 : k + 1]:
            a, b = sorted((u, int(v)))
            edges.add((a, b))

    target = min(n * (n - 1) // 2, int(math.ceil(mean_degree * n / 2)))
    if len(edges) < target:
        iu, ju = np.triu_indices(n, k=1)
        for idx in np.argsort(d[iu, ju], kind="stable"):
            if len(edges) >= target:
                break
            edges.add((int(iu[idx]), int(ju[idx])))

    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        parent[find(a)] = find(b)
    while True:
        roots = [find(a) for a in range(n)]
        comp0 = [a for a in range(n) if roots[a] == roots[0]]
        if len(comp0) == n:
            return edges
        rest = [a for a in range(n) if roots[a] != roots[0]]
        sub = d[np.ix_(comp0, rest)]
        i, j = np.unravel_index(int(np.argmin(sub)), sub.shape)
        a, b = sorted((comp0[i], rest[j]))
        edges.add((a, b))
        parent[find(a)] = find(b)


@dataclass(frozen=True)
class Episode:
    graph: NavGraph = field(compare=False, repr=False)
    start: int
    goal: int
    reference_path: tuple[int, ...]
    success_radius: float = DEFAULT_SUCCESS_RADIUS
    seed: int = 0

    def __post_init__(self) -> None:
        g = self.graph
        for name in ("start", "goal"):
            node = getattr(self, name)
            if not 0 <= node < g.node_count:
                raise GraphError(f"episode {name} {node} not in graph")
        path = self.reference_path
        if not path or path[0] != self.start or path[-1] != self.goal:
            raise GraphError("reference_path must run from start to goal")
        for a, b in zip(path, path[1:]):
            if not g.has_edge(a, b):
                raise GraphError(f"reference_path step {a}->{b} is not an edge")
        if not self.success_radius > 0:
            raise GraphError("success_radius must be > 0")
        if not self.shortest_length > self.success_radius:
            raise GraphError("start already lies within success_radius of goal")
        if abs(g.path_length(path) - self.shortest_length) > 1e-9 * max(1.0, self.shortest_length):
            raise GraphError("reference_path is not a shortest path")

    @property
    def shortest_length(self) -> float:
        return self.graph.distance(self.start, self.goal)

    @property
    def hops(self) -> int:
        return len(self.reference_path) - 1

    def dist_to_goal(self, node: int) -> float:
        return self.graph.distances(self.goal).dist[node]


@dataclass(frozen=True)
class EpisodeParams:
    min_path_hops: int
    success_radius: float = DEFAULT_SUCCESS_RADIUS
    max_path_hops: int | None = None


def qualifying_pairs(graph: NavGraph, params: EpisodeParams) -> list[tuple[int, int]]:
    """Unordered pairs (start < goal) whose reference path satisfies the hop window."""
    out = []
    for s in range(graph.node_count):
        df = graph.distances(s)
        for t in range(s + 1, graph.node_count):
            if not df.dist[t] > params.success_radius:
                continue
            hops = len(df.path_to(t)) - 1
            if hops < params.min_path_hops:
                continue
            if params.max_path_hops is not None and hops > params.max_path_hops:
                continue
            out.append((s, t))
    return out


def generate_episode(graph: NavGraph, params: EpisodeParams, seed: int) -> Episode:
    pairs = qualifying_pairs(graph, params)
    if not pairs:
        raise EpisodeGenerationError(f"no (start, goal) pair satisfies {params!r}")
    idx = 0 if len(pairs) == 1 else int(np.random.default_rng(seed).integers(len(pairs)))
    start, goal = pairs[idx]
    path = tuple(graph.distances(start).path_to(goal))
    return Episode(graph, start, goal, path, float(params.success_radius), int(seed))


# ---------------------------------------------------------------------------
# world files


def _num(x: float) -> str:
    return format(float(x), ".17g")


def save_world(graph: NavGraph, episodes: Sequence[Episode], path: str | Path) -> None:
    lines = ["{", f'  "schema_version": {SCHEMA_VERSION},', '  "graph": {', '    "nodes": [']
    nodes = [
        f'      {{"id": {i}, "x": {_num(x)}, "y": {_num(y)}}}'
        for i, (x, y) in enumerate(graph.positions)
    ]
    lines.append(",\n".join(nodes))
    lines += ["    ],", '    "edges": [']
    edges = [f'      {{"u": {u}, "v": {v}, "len": {_num(w)}}}' for u, v, w in graph.edges]
    if edges:
        lines.append(",\n".join(edges))
    lines += ["    ]", "  },", '  "episodes": [']
    eps = []
    for ep in episodes:
        if ep.graph != graph:
            raise GraphError("episode belongs to a different graph")
        eps.append(
            f'    {{"start": {ep.start}, "goal": {ep.goal}, '
            f'"reference_path": {json.dumps(list(ep.reference_path))}, '
            f'"success_radius": {_num(ep.success_radius)}, "seed": {ep.seed}}}'
        )
    if eps:
        lines.append(",\n".join(eps))
    lines += ["  ]", "}", ""]
    Path(path).write_text("\n".join(lines), encoding="utf-8")


def _get(obj: Any, key: str, where: str, kind: type | tuple[type, ...]) -> Any:
    if not isinstance(obj, dict) or key not in obj:
        raise WorldFormatError("missing field", f"{where}.{key}" if where else key)
    val = obj[key]
    if kind is float:
        ok = isinstance(val, (int, float)) and not isinstance(val, bool)
    elif kind is int:
        ok = isinstance(val, int) and not isinstance(val, bool)
    else:
        ok = isinstance(val, kind)
    if not ok:
        raise WorldFormatError(f"expected {getattr(kind, '__name__', kind)}, got {val!r}",
                               f"{where}.{key}" if where else key)
    return val


def load_world(path: str | Path) -> tuple[NavGraph, list[Episode]]:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise WorldFormatError(exc.msg, line=exc.lineno) from exc

    version = _get(doc, "schema_version", "", int)
    if version != SCHEMA_VERSION:
        raise WorldFormatError(f"unsupported schema_version {version}", "schema_version")
    g = _get(doc, "graph", "", dict)
    raw_nodes = _get(g, "nodes", "graph", list)
    raw_edges = _get(g, "edges", "graph", list)

    positions: dict[int, tuple[float, float]] = {}
    for i, node in enumerate(raw_nodes):
        where = f"graph.nodes[{i}]"
        nid = _get(node, "id", where, int)
        x = float(_get(node, "x", where, float))
        y = float(_get(node, "y", where, float))
        if nid in positions:
            raise WorldFormatError(f"duplicate node id {nid}", f"{where}.id")
        if not (math.isfinite(x) and math.isfinite(y)):
            raise WorldFormatError("non-finite position", where)
        positions[nid] = (x, y)
    n = len(positions)
    if sorted(positions) != list(range(n)):
        raise WorldFormatError("node ids must be dense in [0, node_count)", "graph.nodes")

    def check_node(nid: int, where: str) -> None:
        if nid not in positions:
            raise WorldFormatError(f"unknown node id {nid}", where)

    edges = []
    for i, e in enumerate(raw_edges):
        where = f"graph.edges[{i}]"
        u = _get(e, "u", where, int)
        v = _get(e, "v", where, int)
        w = float(_get(e, "len", where, float))
        check_node(u, f"{where}.u")
        check_node(v, f"{where}.v")
        if not (math.isfinite(w) and w > 0):
            raise WorldFormatError(f"invalid edge length {w!r}", f"{where}.len")
        if u == v:
            raise WorldFormatError(f"self-loop at node {u}", where)
        a, b = (u, v) if u < v else (v, u)
        edges.append((a, b, w))
    edges.sort()
    try:
        graph = NavGraph(tuple(positions[i] for i in range(n)), tuple(edges))
    except GraphError as exc:
        raise WorldFormatError(str(exc), "graph") from exc

    episodes = []
    for i, ep in enumerate(_get(doc, "episodes", "", list)):
        where = f"episodes[{i}]"
        start = _get(ep, "start", where, int)
        goal = _get(ep, "goal", where, int)
        ref = _get(ep, "reference_path", where, list)
        check_node(start, f"{where}.start")
        check_node(goal, f"{where}.goal")
        for j, nid in enumerate(ref):
            if not isinstance(nid, int) or isinstance(nid, bool):
                raise WorldFormatError(f"expected int, got {nid!r}", f"{where}.reference_path[{j}]")
            check_node(nid, f"{where}.reference_path[{j}]")
        radius = float(_get(ep, "success_radius", where, float))
        seed = _get(ep, "seed", where, int)
        try:
            episodes.append(Episode(graph, start, goal, tuple(ref), radius, seed))
        except GraphError as exc:
            raise WorldFormatError(str(exc), where) from exc
    return graph, episodes
