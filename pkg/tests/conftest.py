from __future__ import annotations

import math

import pytest

from fastnav.nav_graph import Episode, EpisodeParams, GraphParams, NavGraph, generate_episode, generate_graph


def line_graph(n: int, spacing: float = 1.0) -> NavGraph:
    pos = tuple((i * spacing, 0.0) for i in range(n))
    return NavGraph(pos, tuple((i, i + 1, spacing) for i in range(n - 1)))


def make_graph(positions, pairs) -> NavGraph:
    """Graph whose edge lengths are the straight-line distances."""
    edges = []
    for u, v in sorted((min(a, b), max(a, b)) for a, b in pairs):
        (x1, y1), (x2, y2) = positions[u], positions[v]
        edges.append((u, v, math.hypot(x2 - x1, y2 - y1)))
    return NavGraph(tuple(map(tuple, positions)), tuple(edges))


def episode_on(graph: NavGraph, start: int, goal: int, radius: float = 0.5, seed: int = 0) -> Episode:
    path = tuple(graph.distances(start).path_to(goal))
    return Episode(graph, start, goal, path, radius, seed)


def small_episodes(n_graphs: int = 4, per_graph: int = 10, nodes: int = 40, side: float = 14.0):
    gp = GraphParams(nodes, 4, side)
    out = []
    for gi in range(n_graphs):
        g = generate_graph(gp, 100 + gi)
        for ei in range(per_graph):
            out.append(generate_episode(g, EpisodeParams(3, 3.0, 6), 7000 + 100 * gi + ei))
    return out


@pytest.fixture(scope="session")
def episodes():
    return small_episodes()


# acceptance verdicts, printed once at the end of the session
ACCEPTANCE: dict[int, str] = {}


def record(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
