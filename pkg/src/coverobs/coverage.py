"""Construction of overlapping node covers driving distributed observers.

Every node ends up belonging to one or more cover sets.  The sets a node
belongs to determine which states its local observer reconstructs, so the sum
of the sizes of those sets (the node's *load*) is the quantity worth keeping
small.  Covers are built in two passes:

* an establish pass walks nodes in order of increasing communication degree
  and, for each physical in-neighbor not yet reachable through an existing
  set, collects the nodes of a shortest communication path into one new set;
* a merge pass walks nodes in order of decreasing communication degree and
  fuses groups of that node's sets sharing at least two members, whenever two
  arithmetic conditions on the resulting loads hold.

Merged-away sets are kept as empty tombstones so set identifiers stay stable.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .netgraph import (
    GraphError,
    NetworkPair,
    distances_to,
    gen_random_pair,
    shortest_path,
)


class CoverageError(Exception):
    """Raised for invalid cover assignments or unusable inputs."""


# Beyond this many sets at one node, merge candidates are restricted to small
# groups to keep enumeration polynomial.
FULL_ENUMERATION_LIMIT = 20
CAPPED_GROUP_SIZE = 3


@dataclass(frozen=True)
class CoverSet:
    """One cover set; ``members`` is sorted and may be empty (tombstone)."""

    id: int
    members: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "members", tuple(sorted(int(v) for v in self.members)))
        if len(set(self.members)) != len(self.members):
            raise CoverageError(f"set {self.id} has duplicate members {self.members}")

    @property
    def empty(self) -> bool:
        return not self.members


@dataclass(frozen=True)
class CoverAssignment:
    """A family of cover sets plus each node's list of set memberships.

    ``membership[i]`` holds the ids of the nonempty sets containing node i,
    ascending.  :meth:`from_sets` derives it; the direct constructor accepts
    anything so tests can build deliberately broken assignments.
    """

    n: int
    sets: tuple[CoverSet, ...]
    membership: dict[int, tuple[int, ...]] = field(repr=False)

    @classmethod
    def from_sets(cls, n: int, sets: Iterable[CoverSet]) -> "CoverAssignment":
        sets = tuple(sorted(sets, key=lambda s: s.id))
        ids = [s.id for s in sets]
        if len(set(ids)) != len(ids):
            raise CoverageError(f"duplicate set ids in {ids}")
        membership: dict[int, tuple[int, ...]] = {}
        for i in range(1, n + 1):
            membership[i] = tuple(s.id for s in sets if i in s.members)
        return cls(n=n, sets=sets, membership=membership)

    def set_by_id(self, p: int) -> CoverSet:
        for s in self.sets:
            if s.id == p:
                return s
        raise CoverageError(f"no cover set with id {p}")

    def sets_of(self, i: int) -> tuple[int, ...]:
        return self.membership.get(i, ())

    def covered(self, i: int) -> frozenset[int]:
        """Union of the node's sets: every state its observer reconstructs."""
        out: set[int] = set()
        for p in self.sets_of(i):
            out.update(self.set_by_id(p).members)
        return frozenset(out)

    def load(self, i: int) -> int:
        return sum(len(self.set_by_id(p).members) for p in self.sets_of(i))

    def occurrence(self, j: int, i: int) -> int:
        """How many of node i's sets contain node j."""
        return sum(1 for p in self.sets_of(i) if j in self.set_by_id(p).members)

    def nonempty_sets(self) -> tuple[CoverSet, ...]:
        return tuple(s for s in self.sets if not s.empty)

    def loads(self) -> dict[int, int]:
        return {i: self.load(i) for i in range(1, self.n + 1)}

    def total_load(self) -> int:
        return sum(self.load(i) for i in range(1, self.n + 1))


def order_nodes(pair: NetworkPair, phase: str) -> list[int]:
    """Processing order for a pass; ties fall back to ascending node id."""
    if phase == "establish":
        key = lambda i: (pair.comm_degree(i), -pair.phys_degree(i), i)
    elif phase == "merge":
        key = lambda i: (-pair.comm_degree(i), -pair.phys_degree(i), i)
    else:
        raise ValueError(f"unknown phase {phase!r}")
    return sorted(pair.nodes(), key=key)


def establish(pair: NetworkPair) -> CoverAssignment:
    """First pass: path-collection sets giving every node neighbor coverage.

    For each node, the physical in-neighbors missing from the union of its
    current sets are fixed at loop entry; the nodes of a shortest
    communication path to each are unioned into a single new set.  Nodes left
    in no set afterwards (isolated ones) get a singleton set.
    """
    sets: list[CoverSet] = []
    covered: dict[int, set[int]] = {i: set() for i in pair.nodes()}
    dist_cache: dict[int, np.ndarray] = {}
    next_id = 1

    for i in order_nodes(pair, "establish"):
        missing = sorted(pair.phys_neighbors(i) - covered[i])
        if not missing:
            continue
        new_members: set[int] = set()
        for j in missing:
            if j not in dist_cache:
                dist_cache[j] = distances_to(pair, j)
            new_members.update(shortest_path(pair, i, j, dist_to_target=dist_cache[j]))
        sets.append(CoverSet(next_id, tuple(new_members)))
        next_id += 1
        for k in new_members:
            covered[k].update(new_members)

    in_some = set().union(*(s.members for s in sets)) if sets else set()
    for i in pair.nodes():
        if i not in in_some:
            sets.append(CoverSet(next_id, (i,)))
            next_id += 1
    return CoverAssignment.from_sets(pair.n, sets)


def _candidate_groups(
    pi: tuple[int, ...], members: dict[int, set[int]]
) -> list[tuple[int, ...]]:
    max_size = len(pi) if len(pi) <= FULL_ENUMERATION_LIMIT else CAPPED_GROUP_SIZE
    out: list[tuple[int, ...]] = []
    for size in range(2, max_size + 1):
        for combo in itertools.combinations(pi, size):
            core = set(members[combo[0]])
            for p in combo[1:]:
                core &= members[p]
                if len(core) < 2:
                    break
            if len(core) >= 2:
                out.append(combo)
    return out


def merge_candidates(assignment: CoverAssignment, i: int) -> list[tuple[int, ...]]:
    """Groups of node i's sets eligible for fusing: shared core of >= 2 nodes.

    Enumerated by ascending group size, then lexicographically on the sorted
    set ids, so downstream processing is reproducible.  When the node belongs
    to more than ``FULL_ENUMERATION_LIMIT`` sets, only groups of up to
    ``CAPPED_GROUP_SIZE`` sets are considered.
    """
    pi = assignment.sets_of(i)
    members = {p: set(assignment.set_by_id(p).members) for p in pi}
    return _candidate_groups(pi, members)


def _loads_from(members: dict[int, set[int]], nodes: Iterable[int]) -> dict[int, int]:
    out = {}
    for l in nodes:
        out[l] = sum(len(mem) for mem in members.values() if l in mem)
    return out


def merge(assignment: CoverAssignment, pair: NetworkPair) -> CoverAssignment:
    """Second pass: fuse set groups when doing so balances and shrinks loads.

    Nodes are visited in decreasing communication degree.  A group fuses into
    its first set (tombstoning the others) when, with U the union of the group
    and D* = |U|: (a) D* - D(l) <= D(i) - D* for every other node l in U, and
    (b) D*^2 <= sum of D(l) over l in U, both evaluated on the current state.
    A node's candidate list is fixed when the node is first visited; each
    group is re-checked against the updated sets when its turn comes, and
    groups left with fewer than two surviving sets are skipped.
    """
    members: dict[int, set[int]] = {s.id: set(s.members) for s in assignment.sets}
    # node -> ids of the nonempty sets containing it, kept current so each
    # visit avoids rebuilding the whole membership index
    holder: dict[int, set[int]] = {i: set() for i in pair.nodes()}
    for s in assignment.sets:
        for v in s.members:
            holder[v].add(s.id)

    for i in order_nodes(pair, "merge"):
        for combo in _candidate_groups(tuple(sorted(holder[i])), members):
            union: set[int] = set().union(*(members[p] for p in combo))
            surviving = sum(1 for p in combo if members[p])
            if not union or surviving <= 1:
                continue
            d_star = len(union)
            load = _loads_from(members, union)
            ok_balance = all(
                d_star - load[l] <= load[i] - d_star for l in union if l != i
            )
            ok_total = d_star * d_star <= sum(load[l] for l in union)
            if ok_balance and ok_total:
                members[combo[0]] = union
                for v in union:
                    holder[v].add(combo[0])
                for p in combo[1:]:
                    for v in members[p]:
                        holder[v].discard(p)
                    members[p] = set()
    return CoverAssignment.from_sets(
        assignment.n,
        [CoverSet(p, tuple(mem)) for p, mem in sorted(members.items())],
    )


def solve(pair: NetworkPair) -> CoverAssignment:
    """Establish then merge; the result is checked before being returned."""
    assignment = merge(establish(pair), pair)
    report = validate(assignment, pair)
    if not report.ok:
        raise CoverageError(
            "solver produced an invalid assignment: " + "; ".join(report.violations)
        )
    return assignment


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate(assignment: CoverAssignment, pair: NetworkPair) -> ValidationReport:
    """Check an assignment against the structural rules.

    Verifies: every node belongs to at least one nonempty set; membership
    lists agree with the sets (and never mention tombstones); the union of a
    node's sets contains all its physical in-neighbors; each nonempty set's
    members induce a connected communication subgraph.
    """
    v: list[str] = []
    if assignment.n != pair.n:
        return ValidationReport((f"assignment covers {assignment.n} nodes, graph has {pair.n}",))
    by_id = {s.id: s for s in assignment.sets}

    for i in pair.nodes():
        stored = assignment.sets_of(i)
        derived = tuple(s.id for s in assignment.sets if i in s.members)
        if stored != derived:
            v.append(f"node {i}: membership {stored} but sets say {derived}")
        for p in stored:
            if p in by_id and by_id[p].empty:
                v.append(f"node {i}: membership lists empty set {p}")
        if not derived:
            v.append(f"node {i}: not in any cover set")
        covered = set().union(*(by_id[p].members for p in derived)) if derived else set()
        missing = sorted(pair.phys_neighbors(i) - covered)
        if missing:
            v.append(f"node {i}: physical neighbors {missing} not covered")

    for s in assignment.nonempty_sets():
        try:
            from .netgraph import grounded_spectrum

            grounded_spectrum(pair, s.members, anchor=s.members[0])
        except GraphError:
            v.append(f"set {s.id}: members {list(s.members)} induce a disconnected communication subgraph")
    return ValidationReport(tuple(v))


@dataclass(frozen=True)
class DimensionStats:
    """Observer dimensions n*D(i) across nodes, plus savings vs. n*N."""

    block_order: int
    node_count: int
    max_dim: int
    min_dim: int
    mean_dim: float
    max_reduction: float
    min_reduction: float
    mean_reduction: float


def dimension_stats(assignment: CoverAssignment, block_order: int) -> DimensionStats:
    full = block_order * assignment.n
    dims = [block_order * assignment.load(i) for i in range(1, assignment.n + 1)]
    mean = float(np.mean(dims))
    return DimensionStats(
        block_order=block_order,
        node_count=assignment.n,
        max_dim=max(dims),
        min_dim=min(dims),
        mean_dim=mean,
        max_reduction=1.0 - max(dims) / full,
        min_reduction=1.0 - min(dims) / full,
        mean_reduction=1.0 - mean / full,
    )


def pareto_local_audit(
    assignment: CoverAssignment, pair: NetworkPair
) -> tuple[bool, str | None]:
    """Confirm no single edit lowers one node's load without cost elsewhere.

    Edits tried: removing one node from one set, deleting one set outright,
    and unconditionally fusing any merge-candidate group.  An edit that keeps
    the assignment valid, strictly lowers some node's load, and raises no
    node's load is a counterexample; its description is returned.
    """
    base = assignment.loads()

    def check(edited: CoverAssignment, what: str) -> str | None:
        if not validate(edited, pair).ok:
            return None
        new = edited.loads()
        if any(new[l] > base[l] for l in new):
            return None
        if any(new[l] < base[l] for l in new):
            return what
        return None

    for s in assignment.nonempty_sets():
        for victim in s.members:
            edited_sets = [
                CoverSet(t.id, tuple(m for m in t.members if not (t.id == s.id and m == victim)))
                for t in assignment.sets
            ]
            hit = check(
                CoverAssignment.from_sets(assignment.n, edited_sets),
                f"drop node {victim} from set {s.id}",
            )
            if hit:
                return False, hit

    for s in assignment.nonempty_sets():
        edited_sets = [
            CoverSet(t.id, () if t.id == s.id else t.members) for t in assignment.sets
        ]
        hit = check(
            CoverAssignment.from_sets(assignment.n, edited_sets),
            f"delete set {s.id}",
        )
        if hit:
            return False, hit

    seen: set[tuple[int, ...]] = set()
    for i in pair.nodes():
        for combo in merge_candidates(assignment, i):
            if combo in seen:
                continue
            seen.add(combo)
            union: set[int] = set()
            for p in combo:
                union.update(assignment.set_by_id(p).members)
            edited_sets = []
            for t in assignment.sets:
                if t.id == combo[0]:
                    edited_sets.append(CoverSet(t.id, tuple(union)))
                elif t.id in combo:
                    edited_sets.append(CoverSet(t.id, ()))
                else:
                    edited_sets.append(t)
            hit = check(
                CoverAssignment.from_sets(assignment.n, edited_sets),
                f"fuse sets {list(combo)}",
            )
            if hit:
                return False, hit

    return True, None


def runtime_scaling(
    sizes: Sequence[int],
    seed: int = 0,
    avg_phys_degree: float = 3.0,
    target_similarity: float = 0.85,
    repeats: int = 2,
) -> list[dict]:
    """Time :func:`solve` on generated pairs of growing size (best of repeats)."""
    rows = []
    for n in sizes:
        pair = gen_random_pair(
            n, avg_phys_degree, target_similarity, seed=seed * 1009 + n
        )
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            assignment = solve(pair)
            best = min(best, time.perf_counter() - t0)
        rows.append(
            {"n": n, "seconds": float(best), "total_load": assignment.total_load()}
        )
    return rows


def save_cover(
    assignment: CoverAssignment,
    path: str | Path,
    manifest_hash: str | None = None,
) -> None:
    doc: dict = {
        "node_count": assignment.n,
        "sets": [
            {"id": s.id, "members": list(s.members)}
            for s in assignment.nonempty_sets()
        ],
        "membership": {str(i): list(assignment.sets_of(i)) for i in range(1, assignment.n + 1)},
        "loads": {str(i): assignment.load(i) for i in range(1, assignment.n + 1)},
    }
    if manifest_hash is not None:
        doc["manifest_hash"] = manifest_hash
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_cover(path: str | Path) -> CoverAssignment:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CoverageError(f"not valid JSON: {path}: {exc}") from exc
    try:
        n = int(doc["node_count"])
        sets = [CoverSet(int(s["id"]), tuple(s["members"])) for s in doc["sets"]]
    except (KeyError, TypeError) as exc:
        raise CoverageError(f"cover file {path} missing required keys") from exc
    assignment = CoverAssignment.from_sets(n, sets)
    stored = doc.get("membership")
    if stored is not None:
        derived = {str(i): list(assignment.sets_of(i)) for i in range(1, n + 1)}
        if {k: list(v) for k, v in stored.items()} != derived:
            raise CoverageError(f"cover file {path}: membership does not match sets")
    return assignment
