"""Topological memory: observation-keyed vertices with visit counts, learned-distance edges."""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, NoPath
from .latentmodel import ModelParams, predicted_distance

DELTA_1 = 4.0
DELTA_2 = 15.0
W_MAX_EDGE = 20.0


@dataclass
class TopoNode:
    id: int
    o: np.ndarray
    count: int = 1


class TopoGraph:
    """Directed graph; ``edges[(i, j)]`` is the predicted timestep distance i -> j."""

    def __init__(self, n_rays: int):
        self.n_rays = n_rays
        self.nodes: list[TopoNode] = []
        self.edges: dict[tuple[int, int], float] = {}
        self._obs = np.zeros((0, n_rays))
        self._adj: dict[int, dict[int, float]] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def observations(self) -> np.ndarray:
        return self._obs

    def node(self, vid: int) -> TopoNode:
        if not 0 <= vid < len(self.nodes):
            raise ContractError(f"unknown vertex {vid}")
        return self.nodes[vid]

    def add_node(self, o, count: int = 1) -> TopoNode:
        o = np.asarray(o, dtype=np.float64)
        if o.shape != (self.n_rays,):
            raise ContractError(f"observation must have {self.n_rays} rays")
        node = TopoNode(len(self.nodes), o.copy(), count)
        self.nodes.append(node)
        self._obs = np.vstack([self._obs, o[None]])
        self._adj[node.id] = {}
        return node

    def set_edge(self, i: int, j: int, w: float) -> None:
        if i == j:
            raise ContractError("self-edges are not allowed")
        w = float(w)
        if not (math.isfinite(w) and w >= 0):
            raise ContractError(f"edge weight must be finite and >= 0, got {w}")
        self.edges[(i, j)] = w
        self._adj[i][j] = w

    def neighbors(self, vid: int) -> dict[int, float]:
        return self._adj[vid]

    def counts(self) -> np.ndarray:
        return np.array([n.count for n in self.nodes], dtype=np.int64)

    # -- serialization ----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n_rays": self.n_rays,
            "vertices": [{"id": n.id, "count": n.count, "o": n.o.tolist()} for n in self.nodes],
            "edges": [{"from": i, "to": j, "weight": w} for (i, j), w in self.edges.items()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TopoGraph":
        g = cls(int(d["n_rays"]))
        for rec in sorted(d["vertices"], key=lambda r: r["id"]):
            node = g.add_node(rec["o"], int(rec["count"]))
            if node.id != rec["id"]:
                raise ContractError("vertex ids must be contiguous from 0")
        for e in d["edges"]:
            g.set_edge(int(e["from"]), int(e["to"]), float(e["weight"]))
        return g

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "TopoGraph":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def summary(self) -> dict:
        c = self.counts()
        w = np.array(list(self.edges.values())) if self.edges else np.zeros(0)
        return {
            "vertices": len(self.nodes),
            "edges": len(self.edges),
            "count_min": int(c.min()) if len(c) else 0,
            "count_median": float(np.median(c)) if len(c) else 0.0,
            "count_max": int(c.max()) if len(c) else 0,
            "frontier_vertices": int(np.sum(c == 1)),
            "edge_weight_median": float(np.median(w)) if len(w) else 0.0,
            "edge_weight_max": float(w.max()) if len(w) else 0.0,
        }


def _distances_to_vertices(G: TopoGraph, params: ModelParams, o) -> np.ndarray:
    o = np.asarray(o, dtype=np.float64)
    return np.atleast_1d(predicted_distance(params, np.broadcast_to(o, G.observations.shape), G.observations))


def associate_to_vertex(G: TopoGraph, params: ModelParams, o) -> TopoNode:
    """Vertex with the smallest predicted distance from ``o``; ties go to the lowest id."""
    if len(G) == 0:
        raise ContractError("graph is empty; expand it before associating")
    d = _distances_to_vertices(G, params, o)
    return G.nodes[int(np.argmin(d))]


def expand_graph(G: TopoGraph, params: ModelParams, o, delta_1: float | None = DELTA_1) -> tuple[TopoNode, bool]:
    """Add ``o`` as a vertex with edges both ways to every existing vertex.

    If the nearest vertex is predicted closer than ``delta_1`` its count is
    bumped instead (pass ``delta_1=None`` to always add). Returns the vertex and
    whether it is new.
    """
    o = np.asarray(o, dtype=np.float64)
    n = len(G)
    if n:
        out_w = _distances_to_vertices(G, params, o)
        if delta_1 is not None:
            k = int(np.argmin(out_w))
            if out_w[k] < delta_1:
                G.nodes[k].count += 1
                return G.nodes[k], False
        in_w = np.atleast_1d(predicted_distance(params, G.observations, np.broadcast_to(o, G.observations.shape)))
    node = G.add_node(o)
    for j in range(n):
        G.set_edge(node.id, j, out_w[j])
        G.set_edge(j, node.id, in_w[j])
    return node, True


def least_explored_neighbor(G: TopoGraph, params: ModelParams, o, delta_2: float = DELTA_2) -> tuple[np.ndarray, float, TopoNode]:
    """Lowest-count vertex among the associated vertex and its out-neighbors under ``delta_2``.

    Returns (observation, predicted distance from ``o`` to it, vertex).
    """
    v = associate_to_vertex(G, params, o)
    members = [v.id] + [j for j, w in G.neighbors(v.id).items() if w < delta_2]
    best = min(members, key=lambda j: (G.nodes[j].count, j))
    node = G.nodes[best]
    return node.o, float(predicted_distance(params, o, node.o)), node


def increment_count(G: TopoGraph, vid: int) -> TopoNode:
    node = G.node(vid)
    node.count += 1
    return node


def shortest_path(G: TopoGraph, v_s: int, v_g: int, w_max: float = W_MAX_EDGE) -> list[int]:
    """Dijkstra over edges lighter than ``w_max``; raises :class:`NoPath` if cut off."""
    G.node(v_s)
    G.node(v_g)
    if v_s == v_g:
        return [v_s]
    dist = {v_s: 0.0}
    parent = {v_s: -1}
    done = set()
    heap = [(0.0, v_s)]
    while heap:
        du, u = heapq.heappop(heap)
        if u in done:
            continue
        if u == v_g:
            break
        done.add(u)
        for v, w in G.neighbors(u).items():
            if w >= w_max or v in done:
                continue
            nd = du + w
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                parent[v] = u
                heapq.heappush(heap, (nd, v))
    if v_g not in dist:
        raise NoPath(f"no path {v_s} -> {v_g} with edges < {w_max}")
    path = [v_g]
    while parent[path[-1]] != -1:
        path.append(parent[path[-1]])
    return path[::-1]


def path_cost(G: TopoGraph, path: list[int]) -> float:
    return float(sum(G.edges[(a, b)] for a, b in zip(path[:-1], path[1:])))
