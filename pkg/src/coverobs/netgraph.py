"""Paired physical/communication network topologies.

A :class:`NetworkPair` couples two graphs over the same node set 1..n: a
(possibly directed) physical influence graph, where an edge j -> i means the
state of node j enters the dynamics of node i, and an undirected communication
graph over which nodes exchange estimates.  The communication graph must be
connected.

Node identifiers are 1-based everywhere in this module, matching the on-disk
format.  Adjacency is stored as boolean matrices indexed by ``id - 1``.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class GraphError(Exception):
    """Raised for malformed, disconnected, or otherwise unusable graphs."""


def _as_readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=bool, copy=True)
    out.setflags(write=False)
    return out


def _is_connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    if n <= 1:
        return True
    seen = np.zeros(n, dtype=bool)
    queue = deque([0])
    seen[0] = True
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(adj[u]):
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return bool(seen.all())


@dataclass(frozen=True)
class NetworkPair:
    """Physical and communication adjacency over a common 1-based node set.

    ``phys_adj[i-1, j-1]`` is True when node j's state enters node i's
    dynamics (j is a physical in-neighbor of i).  ``comm_adj`` is symmetric
    with zero diagonal; the communication graph must be connected.
    """

    n: int
    phys_adj: np.ndarray
    comm_adj: np.ndarray

    def __post_init__(self) -> None:
        phys = _as_readonly(self.phys_adj)
        comm = _as_readonly(self.comm_adj)
        object.__setattr__(self, "phys_adj", phys)
        object.__setattr__(self, "comm_adj", comm)
        if self.n < 1:
            raise GraphError(f"need at least one node, got n={self.n}")
        for name, adj in (("phys_adj", phys), ("comm_adj", comm)):
            if adj.shape != (self.n, self.n):
                raise GraphError(f"{name} has shape {adj.shape}, expected {(self.n, self.n)}")
            if adj.diagonal().any():
                raise GraphError(f"{name} has nonzero diagonal (self-loops are not allowed)")
        if not np.array_equal(comm, comm.T):
            raise GraphError("communication adjacency must be symmetric")
        if not _is_connected(comm):
            raise GraphError("communication graph is disconnected")

    def nodes(self) -> range:
        return range(1, self.n + 1)

    def phys_neighbors(self, i: int) -> frozenset[int]:
        """In-neighbors of i in the physical graph (nodes influencing i)."""
        self._check_node(i)
        return frozenset(int(j) + 1 for j in np.flatnonzero(self.phys_adj[i - 1]))

    def comm_neighbors(self, i: int) -> frozenset[int]:
        self._check_node(i)
        return frozenset(int(j) + 1 for j in np.flatnonzero(self.comm_adj[i - 1]))

    def phys_degree(self, i: int) -> int:
        return int(self.phys_adj[i - 1].sum())

    def comm_degree(self, i: int) -> int:
        return int(self.comm_adj[i - 1].sum())

    def _check_node(self, i: int) -> None:
        if not 1 <= i <= self.n:
            raise GraphError(f"node id {i} outside 1..{self.n}")

    @classmethod
    def from_edges(
        cls,
        n: int,
        phys_edges: Iterable[Sequence[int]],
        comm_edges: Iterable[Sequence[int]],
    ) -> "NetworkPair":
        """Build a pair from 1-based edge lists.

        A physical edge ``[s, d]`` is directed as written: s influences d.
        Communication edges are symmetrized.
        """
        phys = np.zeros((n, n), dtype=bool)
        comm = np.zeros((n, n), dtype=bool)
        for s, d in phys_edges:
            if not (1 <= s <= n and 1 <= d <= n) or s == d:
                raise GraphError(f"bad physical edge [{s}, {d}] for n={n}")
            phys[d - 1, s - 1] = True
        for a, b in comm_edges:
            if not (1 <= a <= n and 1 <= b <= n) or a == b:
                raise GraphError(f"bad communication edge [{a}, {b}] for n={n}")
            comm[a - 1, b - 1] = True
            comm[b - 1, a - 1] = True
        return cls(n=n, phys_adj=phys, comm_adj=comm)


@dataclass(frozen=True)
class SubgraphSpectrum:
    """Grounded Laplacian data for one induced communication subgraph."""

    nodes: tuple[int, ...]
    anchor: int
    laplacian: np.ndarray = field(repr=False)
    grounded_min_eig: float


def distances_to(pair: NetworkPair, b: int) -> np.ndarray:
    """Hop counts from every node to b over the communication graph (-1 if cut off)."""
    pair._check_node(b)
    dist = np.full(pair.n, -1, dtype=int)
    dist[b - 1] = 0
    queue = deque([b - 1])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(pair.comm_adj[u]):
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def shortest_path(
    pair: NetworkPair, a: int, b: int, dist_to_target: np.ndarray | None = None
) -> list[int]:
    """Shortest communication path from a to b, inclusive of both endpoints.

    Among equally short paths the lexicographically smallest node sequence is
    returned, so the result is unique and reproducible.  Callers issuing many
    queries toward the same target can pass a precomputed ``distances_to``
    array.  Raises :class:`GraphError` if b is unreachable from a.
    """
    pair._check_node(a)
    pair._check_node(b)
    if a == b:
        return [a]
    dist = distances_to(pair, b) if dist_to_target is None else dist_to_target
    if dist[a - 1] < 0:
        raise GraphError(f"no communication path from {a} to {b}")
    # Greedy descent on distance-to-target; picking the smallest admissible
    # next node at each hop yields the lexicographic minimum.
    path = [a]
    cur = a - 1
    while cur != b - 1:
        nxt = min(
            v for v in np.flatnonzero(pair.comm_adj[cur]) if dist[v] == dist[cur] - 1
        )
        path.append(int(nxt) + 1)
        cur = int(nxt)
    return path


def _undirected_edge_set(adj: np.ndarray) -> set[tuple[int, int]]:
    rows, cols = np.nonzero(adj)
    return {(int(min(r, c)) + 1, int(max(r, c)) + 1) for r, c in zip(rows, cols)}


def similarity(pair: NetworkPair) -> float:
    """Edge-set overlap between the two graphs in [0, 1].

    The physical graph is collapsed to undirected edges first.  Defined as
    twice the shared edge count over the sum of both edge counts; raises if
    both graphs are empty.
    """
    phys = _undirected_edge_set(pair.phys_adj)
    comm = _undirected_edge_set(pair.comm_adj)
    total = len(phys) + len(comm)
    if total == 0:
        raise GraphError("similarity undefined: both graphs have no edges")
    return 2.0 * len(phys & comm) / total


def grounded_spectrum(
    pair: NetworkPair, nodes: Sequence[int], anchor: int
) -> SubgraphSpectrum:
    """Smallest eigenvalue of L + S on an induced communication subgraph.

    L is the Laplacian of the subgraph induced by ``nodes``; S is zero except
    for a single 1 at the anchor's diagonal position.  The induced subgraph
    must be connected, which makes the smallest eigenvalue strictly positive.
    """
    nodes = tuple(int(v) for v in nodes)
    if len(set(nodes)) != len(nodes) or not nodes:
        raise GraphError(f"nodes must be nonempty and distinct, got {nodes}")
    for v in nodes:
        pair._check_node(v)
    if anchor not in nodes:
        raise GraphError(f"anchor {anchor} not among nodes {nodes}")
    idx = np.array([v - 1 for v in nodes])
    sub = pair.comm_adj[np.ix_(idx, idx)].astype(float)
    if not _is_connected(sub.astype(bool)):
        raise GraphError(f"induced communication subgraph on {nodes} is disconnected")
    lap = np.diag(sub.sum(axis=1)) - sub
    grounded = lap.copy()
    grounded[nodes.index(anchor), nodes.index(anchor)] += 1.0
    eigs = np.linalg.eigvalsh(grounded)
    return SubgraphSpectrum(
        nodes=nodes,
        anchor=int(anchor),
        laplacian=lap,
        grounded_min_eig=float(eigs[0]),
    )


def star_pair(n: int) -> NetworkPair:
    """Star on n nodes with node 1 at the center, identical on both layers."""
    if n < 2:
        raise GraphError("a star needs at least 2 nodes")
    edges = [(1, k) for k in range(2, n + 1)]
    both = edges + [(k, 1) for k in range(2, n + 1)]
    return NetworkPair.from_edges(n, both, edges)


def _spanning_tree_edges(rng: np.random.Generator, n: int) -> set[tuple[int, int]]:
    order = rng.permutation(n) + 1
    edges = set()
    for k in range(1, n):
        attach = order[rng.integers(0, k)]
        a, b = int(order[k]), int(attach)
        edges.add((min(a, b), max(a, b)))
    return edges


def _pick(rng: np.random.Generator, pool: list) -> object:
    return pool[int(rng.integers(0, len(pool)))]


def gen_random_pair(
    n: int,
    avg_phys_degree: float,
    target_similarity: float,
    seed: int,
    tol: float = 0.05,
    max_tries: int = 200,
) -> NetworkPair:
    """Sample a random pair with a requested edge-set overlap.

    The physical graph is undirected with roughly ``n * avg_phys_degree / 2``
    edges (connected whenever the budget allows a spanning tree).  The
    communication graph reuses a fraction of the physical edges to land the
    similarity within ``tol`` of the target, then is repaired to be connected.
    Deterministic in ``seed``; raises :class:`GraphError` when the target
    cannot be met within ``max_tries`` attempts.
    """
    if n < 2:
        raise GraphError("need n >= 2 to generate a pair")
    if not 0.0 <= target_similarity <= 1.0:
        raise GraphError(f"target similarity {target_similarity} outside [0, 1]")
    rng = np.random.default_rng(seed)
    all_pairs = [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)]
    m = int(round(n * avg_phys_degree / 2.0))
    m = max(1, min(m, len(all_pairs)))
    lo, hi = target_similarity - tol, target_similarity + tol
    best_gap = np.inf

    for _ in range(max_tries):
        if m >= n - 1:
            phys = _spanning_tree_edges(rng, n)
            extra_pool = [e for e in all_pairs if e not in phys]
            while len(phys) < m and extra_pool:
                e = _pick(rng, extra_pool)
                extra_pool.remove(e)
                phys.add(e)
        else:
            idx = rng.choice(len(all_pairs), size=m, replace=False)
            phys = {all_pairs[int(k)] for k in sorted(idx)}

        shared_n = int(round(target_similarity * m))
        phys_list = sorted(phys)
        keep = rng.choice(len(phys_list), size=min(shared_n, m), replace=False)
        comm = {phys_list[int(k)] for k in sorted(keep)}
        nonphys = [e for e in all_pairs if e not in phys]
        while len(comm) < m and nonphys:
            e = _pick(rng, nonphys)
            nonphys.remove(e)
            comm.add(e)

        comm = _repair_connectivity(rng, n, comm, phys)
        comm = _tune_similarity(rng, n, comm, phys, target_similarity)
        sim = _edge_set_similarity(phys, comm)
        gap = abs(sim - target_similarity)
        if lo - 1e-12 <= sim <= hi + 1e-12:
            phys_dir = [(a, b) for a, b in phys] + [(b, a) for a, b in phys]
            return NetworkPair.from_edges(n, phys_dir, sorted(comm))
        best_gap = min(best_gap, gap)

    raise GraphError(
        f"could not reach similarity {target_similarity}±{tol} for n={n}, "
        f"avg degree {avg_phys_degree} (best gap {best_gap:.3f})"
    )


def _edge_set_similarity(phys: set, comm: set) -> float:
    if not phys and not comm:
        return 0.0
    return 2.0 * len(phys & comm) / (len(phys) + len(comm))


def _components(n: int, edges: set[tuple[int, int]]) -> list[set[int]]:
    adj: dict[int, set[int]] = {v: set() for v in range(1, n + 1)}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    comps, seen = [], set()
    for start in range(1, n + 1):
        if start in seen:
            continue
        comp, queue = {start}, deque([start])
        seen.add(start)
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    comp.add(v)
                    queue.append(v)
        comps.append(comp)
    return comps


def _repair_connectivity(
    rng: np.random.Generator, n: int, comm: set, phys: set
) -> set:
    comm = set(comm)
    while True:
        comps = _components(n, comm)
        if len(comps) == 1:
            return comm
        a_comp = sorted(comps[0])
        b_comp = sorted(comps[1])
        crossing = [
            (min(a, b), max(a, b)) for a in a_comp for b in b_comp
        ]
        phys_crossing = [e for e in crossing if e in phys]
        pool = phys_crossing if phys_crossing else crossing
        comm.add(_pick(rng, pool))


def _tune_similarity(
    rng: np.random.Generator, n: int, comm: set, phys: set, target: float
) -> set:
    """Hill-climb single edge edits until no move gets the overlap closer.

    Candidate moves only shift the shared/total edge counts, so their effect
    on the similarity is evaluated arithmetically before touching the sets.
    """
    comm = set(comm)
    m = len(phys)
    total_pairs = n * (n - 1) // 2
    for _ in range(2 * (m + len(comm)) + 16):
        k = len(comm & phys)
        mc = len(comm)
        cur = 2.0 * k / (m + mc) if (m + mc) else 0.0
        gap = abs(cur - target)
        fresh_count = total_pairs - (mc + m - k)
        options: list[tuple[str, float]] = []
        if phys - comm:
            options.append(("add_phys", 2.0 * (k + 1) / (m + mc + 1)))
        if fresh_count > 0:
            options.append(("add_fresh", 2.0 * k / (m + mc + 1)))
        if comm - phys:
            options.append(("drop", 2.0 * k / (m + mc - 1) if m + mc > 1 else 0.0))
        options.sort(key=lambda opt: abs(opt[1] - target))
        moved = False
        for kind, value in options:
            if abs(value - target) >= gap - 1e-12:
                break
            if kind == "add_phys":
                comm.add(_pick(rng, sorted(phys - comm)))
                moved = True
            elif kind == "add_fresh":
                fresh = sorted(
                    e for e in _all_pairs(n) if e not in comm and e not in phys
                )
                comm.add(_pick(rng, fresh))
                moved = True
            else:
                droppable = [
                    e for e in sorted(comm - phys)
                    if len(_components(n, comm - {e})) == 1
                ]
                if not droppable:
                    continue
                comm.remove(_pick(rng, droppable))
                moved = True
            break
        if not moved:
            break
    return comm


def _all_pairs(n: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)]


def save_pair(pair: NetworkPair, path: str | Path, manifest_hash: str | None = None) -> None:
    """Write a pair as JSON with 1-based edge lists, physical edges directed."""
    rows, cols = np.nonzero(pair.phys_adj)
    phys_edges = sorted([int(c) + 1, int(r) + 1] for r, c in zip(rows, cols))
    comm_edges = sorted(
        [a, b] for a, b in _undirected_edge_set(pair.comm_adj)
    )
    doc: dict = {"n": pair.n, "phys_edges": phys_edges, "comm_edges": comm_edges}
    if manifest_hash is not None:
        doc["manifest_hash"] = manifest_hash
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_pair(path: str | Path) -> NetworkPair:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GraphError(f"not valid JSON: {path}: {exc}") from exc
    try:
        n = int(doc["n"])
        phys_edges = doc["phys_edges"]
        comm_edges = doc["comm_edges"]
    except (KeyError, TypeError) as exc:
        raise GraphError(f"graph file {path} missing required keys") from exc
    return NetworkPair.from_edges(n, phys_edges, comm_edges)
