"""
Causal diagrams: paths, colliders, d-separation and backdoor blocking.

A :class:`CausalDag` is an immutable directed acyclic graph over string node
identifiers. Paths are simple paths in the skeleton of the graph; each step
records whether it is traversed along the arrow (``forward``) or against it
(``backward``).

Blocking follows the usual rules. A path is blocked by a conditioning set
``cond`` if it contains a non-collider that is in ``cond``, or a collider
that neither is in ``cond`` nor has a descendant in ``cond``.
:func:`d_separated` answers the set query by reachability ("Bayes ball")
and never enumerates paths; :func:`backdoor_blocked` works on the enumerated
backdoor paths directly.

Text format (one edge per line)::

    # comment
    Z -> X
    Z -> Y
    X -> Y
    node W      # isolated node
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from functools import partial
from pathlib import Path as FsPath
from typing import Iterable

import numba as nb
import numpy as np

__all__ = [
    "CausalDag",
    "GraphError",
    "Path",
    "Step",
    "enumerate_paths",
    "is_collider",
    "is_blocked",
    "backdoor_paths",
    "d_separated",
    "backdoor_blocked",
    "MAX_PATHS",
]

MAX_PATHS = 100_000


class GraphError(ValueError):
    """Invalid graph, unknown node or malformed query."""


def _as_node_set(nodes: str | Iterable[str] | None) -> frozenset[str]:
    if nodes is None:
        return frozenset()
    if isinstance(nodes, str):
        return frozenset([nodes])
    return frozenset(nodes)


class CausalDag:
    """Immutable DAG over named nodes.

    Parameters
    ----------
    edges : iterable of (tail, head)
        Directed edges ``tail -> head``.
    nodes : iterable of str, optional
        Additional (possibly isolated) nodes.

    Raises
    ------
    GraphError
        On self-edges, duplicate edges or a directed cycle.
    """

    __slots__ = ("_nodes", "_edges", "_parents", "_children", "_order", "_masks")

    def __init__(self, edges: Iterable[tuple[str, str]] = (), nodes: Iterable[str] = ()):
        edge_list = [(str(t), str(h)) for t, h in edges]
        seen: set[tuple[str, str]] = set()
        for t, h in edge_list:
            if t == h:
                raise GraphError(f"self-edge on node {t!r}")
            if (t, h) in seen:
                raise GraphError(f"duplicate edge {t} -> {h}")
            seen.add((t, h))
        all_nodes = set(str(n) for n in nodes)
        for t, h in edge_list:
            all_nodes.add(t)
            all_nodes.add(h)

        parents: dict[str, list[str]] = {n: [] for n in all_nodes}
        children: dict[str, list[str]] = {n: [] for n in all_nodes}
        for t, h in edge_list:
            parents[h].append(t)
            children[t].append(h)

        self._nodes = frozenset(all_nodes)
        self._edges = frozenset(seen)
        self._parents = {n: tuple(sorted(ps)) for n, ps in parents.items()}
        self._children = {n: tuple(sorted(cs)) for n, cs in children.items()}
        self._order = self._toposort()
        self._masks = None

    def _toposort(self) -> tuple[str, ...]:
        # Kahn's algorithm, lexicographic tie-break for a deterministic order
        indeg = {n: len(self._parents[n]) for n in self._nodes}
        heap = [n for n, d in indeg.items() if d == 0]
        heapq.heapify(heap)
        order = []
        while heap:
            n = heapq.heappop(heap)
            order.append(n)
            for c in self._children[n]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    heapq.heappush(heap, c)
        if len(order) != len(self._nodes):
            cyclic = sorted(n for n, d in indeg.items() if d > 0)
            raise GraphError(f"graph contains a directed cycle through {cyclic}")
        return tuple(order)

    @property
    def nodes(self) -> frozenset[str]:
        return self._nodes

    @property
    def edges(self) -> frozenset[tuple[str, str]]:
        return self._edges

    def parents(self, node: str) -> tuple[str, ...]:
        self._check(node)
        return self._parents[node]

    def children(self, node: str) -> tuple[str, ...]:
        self._check(node)
        return self._children[node]

    def topological_order(self) -> tuple[str, ...]:
        return self._order

    def descendants(self, node: str) -> frozenset[str]:
        """Descendants of ``node``, excluding the node itself."""
        self._check(node)
        out: set[str] = set()
        stack = list(self._children[node])
        while stack:
            n = stack.pop()
            if n not in out:
                out.add(n)
                stack.extend(self._children[n])
        return frozenset(out)

    def ancestors(self, nodes: str | Iterable[str]) -> frozenset[str]:
        """Ancestors of a node set, including the nodes themselves."""
        start = _as_node_set(nodes)
        for n in start:
            self._check(n)
        out = set(start)
        stack = list(start)
        while stack:
            for p in self._parents[stack.pop()]:
                if p not in out:
                    out.add(p)
                    stack.append(p)
        return frozenset(out)

    def without_incoming(self, node: str) -> "CausalDag":
        """Graph with every arrow into ``node`` removed."""
        self._check(node)
        return CausalDag([e for e in self._edges if e[1] != node], self._nodes)

    def _bitmasks(self):
        """Bit per node plus parent, child and ancestor-closure masks, built on first use."""
        if self._masks is None:
            bit = {n: 1 << i for i, n in enumerate(self._order)}
            k = len(bit)
            pm, cm, am = [0] * k, [0] * k, [0] * k
            for i, n in enumerate(self._order):
                for q in self._parents[n]:
                    pm[i] |= bit[q]
                    am[i] |= am[bit[q].bit_length() - 1]
                for c in self._children[n]:
                    cm[i] |= bit[c]
                am[i] |= bit[n] | pm[i]
            pm, cm, am = tuple(pm), tuple(cm), tuple(am)
            tables = None
            if k <= _TABLE_NODES:
                tables = np.stack([_union_table(pm), _union_table(cm), _union_table(am)])
            self._masks = (bit, pm, cm, am, tables)
        return self._masks

    def _check(self, node: str) -> None:
        if node not in self._nodes:
            raise GraphError(f"unknown node {node!r}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CausalDag):
            return NotImplemented
        return self._nodes == other._nodes and self._edges == other._edges

    def __hash__(self) -> int:
        return hash((self._nodes, self._edges))

    def __repr__(self) -> str:
        edges = ", ".join(f"{t}->{h}" for t, h in sorted(self._edges))
        return f"CausalDag([{edges}])"

    # text format

    @classmethod
    def from_text(cls, text: str) -> "CausalDag":
        edges = []
        nodes = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "->" in line:
                tail, _, head = line.partition("->")
                tail, head = tail.strip(), head.strip()
                if not tail or not head or " " in tail or " " in head or "->" in head:
                    raise GraphError(f"line {lineno}: malformed edge {raw.strip()!r}")
                edges.append((tail, head))
            else:
                parts = line.split()
                if len(parts) != 2 or parts[0] != "node":
                    raise GraphError(f"line {lineno}: expected 'A -> B' or 'node A', got {raw.strip()!r}")
                nodes.append(parts[1])
        return cls(edges, nodes)

    @classmethod
    def read(cls, path: str | FsPath) -> "CausalDag":
        return cls.from_text(FsPath(path).read_text())

    def to_text(self) -> str:
        lines = [f"{t} -> {h}" for t, h in sorted(self._edges)]
        connected = {n for e in self._edges for n in e}
        lines += [f"node {n}" for n in sorted(self._nodes - connected)]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Step:
    """One traversed edge. ``forward`` means ``a -> b``, otherwise ``a <- b``."""

    a: str
    b: str
    forward: bool

    @property
    def orientation(self) -> str:
        return "forward" if self.forward else "backward"

    def reversed(self) -> "Step":
        return Step(self.b, self.a, not self.forward)


@dataclass(frozen=True)
class Path:
    steps: tuple[Step, ...]

    def __post_init__(self):
        if not self.steps:
            raise GraphError("a path needs at least one step")
        for s1, s2 in zip(self.steps, self.steps[1:]):
            if s1.b != s2.a:
                raise GraphError(f"steps {s1} and {s2} are not consecutive")
        if len(set(self.nodes)) != len(self.nodes):
            raise GraphError("path repeats a node")

    @property
    def nodes(self) -> tuple[str, ...]:
        return (self.steps[0].a,) + tuple(s.b for s in self.steps)

    @property
    def interior(self) -> tuple[str, ...]:
        return self.nodes[1:-1]

    def reversed(self) -> "Path":
        return Path(tuple(s.reversed() for s in reversed(self.steps)))

    def colliders(self) -> tuple[str, ...]:
        return tuple(
            s1.b for s1, s2 in zip(self.steps, self.steps[1:]) if s1.forward and not s2.forward
        )

    def __str__(self) -> str:
        out = [self.steps[0].a]
        for s in self.steps:
            out.append("->" if s.forward else "<-")
            out.append(s.b)
        return " ".join(out)


def enumerate_paths(g: CausalDag, a: str, b: str) -> list[Path]:
    """All simple paths between ``a`` and ``b`` in the skeleton of ``g``.

    Returned in lexicographic order of their node sequences.

    Raises
    ------
    GraphError
        If a node is unknown, ``a == b``, or more than ``MAX_PATHS`` paths exist.
    """
    g._check(a)
    g._check(b)
    if a == b:
        raise GraphError("path endpoints must be distinct")

    nbrs = {
        n: sorted([(c, True) for c in g._children[n]] + [(p, False) for p in g._parents[n]])
        for n in g.nodes
    }
    found: list[tuple[Step, ...]] = []
    on_path = {a}
    steps: list[Step] = []

    def dfs(n: str) -> None:
        for m, fwd in nbrs[n]:
            if m in on_path:
                continue
            steps.append(Step(n, m, fwd))
            if m == b:
                found.append(tuple(steps))
                if len(found) > MAX_PATHS:
                    raise GraphError(f"more than {MAX_PATHS} paths between {a!r} and {b!r}")
            else:
                on_path.add(m)
                dfs(m)
                on_path.discard(m)
            steps.pop()

    dfs(a)
    paths = [Path(s) for s in found]
    paths.sort(key=lambda p: p.nodes)
    return paths


def is_collider(p: Path, n: str) -> bool:
    """True iff both steps adjacent to interior node ``n`` point into it."""
    nodes = p.nodes
    if n not in nodes[1:-1]:
        raise GraphError(f"{n!r} is not an interior node of {p}")
    i = nodes.index(n)
    return p.steps[i - 1].forward and not p.steps[i].forward


def is_blocked(g: CausalDag, p: Path, cond: str | Iterable[str] = ()) -> bool:
    """Whether ``cond`` blocks the path ``p`` in graph ``g``."""
    cond = _as_node_set(cond)
    for n in p.interior:
        if is_collider(p, n):
            if n not in cond and not (g.descendants(n) & cond):
                return True
        elif n in cond:
            return True
    return False


def backdoor_paths(g: CausalDag, x: str, y: str) -> list[Path]:
    """Collider-free paths from ``x`` to ``y`` whose first step enters ``x``."""
    return [p for p in enumerate_paths(g, x, y) if not p.steps[0].forward and not p.colliders()]


def _check_disjoint(g: CausalDag, **sets: frozenset[str]) -> None:
    unknown = frozenset().union(*sets.values()) - g._nodes
    if unknown:
        for name, s in sets.items():
            for n in sorted(s & unknown):
                raise GraphError(f"unknown node {n!r} in {name}")
    names = list(sets)
    for i, u in enumerate(names):
        for v in names[i + 1 :]:
            common = sets[u] & sets[v]
            if common:
                raise GraphError(f"{u} and {v} overlap in {sorted(common)}")


def _mask(bit: dict, nodes: str | Iterable[str] | None) -> int:
    if nodes is None:
        return 0
    if isinstance(nodes, str):
        return bit[nodes]
    m = 0
    for n in nodes:
        m |= bit[n]
    return m


# node-mask lookup tables are built for graphs up to this size
_TABLE_NODES = 12


def _union_table(per_node: tuple[int, ...]) -> np.ndarray:
    # table[m] = OR of per_node[i] over the bits i of m
    table = np.zeros(1 << len(per_node), dtype=np.int64)
    for i, v in enumerate(per_node):
        table[1 << i : 2 << i] = table[: 1 << i] | v
    return table


@nb.njit(cache=True)
def _reach_kernel(tables: np.ndarray, start: int, c: int, target: int) -> int:
    # same traversal as _reach_mask, over rows (parents, children, ancestors) of tables
    free = ~c
    anc = tables[2, c]
    up, down = start, 0
    seen_up = seen_down = 0
    while up or down:
        seen_up |= up
        seen_down |= down
        up, down = tables[0, (up & free) | (down & anc)] & ~seen_up, tables[1, (up | down) & free] & ~seen_down
        if (up | down) & target & free:
            break
    return (seen_up | seen_down | up | down) & free


def _union(per_node: tuple[int, ...], m: int) -> int:
    out = 0
    while m:
        low = m & -m
        out |= per_node[low.bit_length() - 1]
        m ^= low
    return out


def _reach_mask(masks: tuple, start: int, c: int, target: int = 0) -> int:
    """Bitmask of nodes d-connected to ``start`` given ``c`` (excluding ``c`` itself).

    Bayes-ball over the node bitmasks ``masks`` from ``CausalDag._bitmasks``.
    ``up`` holds nodes the ball reached from a child, ``down`` those reached
    from a parent. With a non-zero ``target`` the search stops as soon as it
    reaches one of the target nodes. Small graphs use the compiled kernel.
    """
    _, pm, cm, am, tables = masks
    if tables is not None:
        return _reach_kernel(tables, start, c, target)
    pu, cu = partial(_union, pm), partial(_union, cm)
    anc = _union(am, c)
    free = ~c
    up, down = start, 0
    seen_up = seen_down = 0
    while up or down:
        seen_up |= up
        seen_down |= down
        # an unobserved node passes the ball on in every direction from below,
        # only downwards from above; an observed collider (or ancestor of one) bounces it back up.
        # Parent and child unions distribute over |, so each direction needs one lookup.
        up, down = pu((up & free) | (down & anc)) & ~seen_up, cu((up | down) & free) & ~seen_down
        if (up | down) & target & free:
            break
    return (seen_up | seen_down | up | down) & free


def _reachable(g: CausalDag, start: frozenset[str], cond: frozenset[str]) -> set[str]:
    """Nodes d-connected to ``start`` given ``cond`` (excluding ``cond`` itself)."""
    masks = g._bitmasks()
    bit = masks[0]
    reached = _reach_mask(masks, _mask(bit, start), _mask(bit, cond))
    return {n for n in g._order if reached & bit[n]}


def d_separated(
    g: CausalDag,
    a: str | Iterable[str],
    b: str | Iterable[str],
    cond: str | Iterable[str] | None = None,
) -> bool:
    """Whether ``cond`` d-separates node sets ``a`` and ``b`` in ``g``.

    Raises
    ------
    GraphError
        If the sets overlap, are empty, or name unknown nodes.
    """
    masks = g._masks or g._bitmasks()
    bit = masks[0]
    # inline mask building: this function sits in tight query loops
    ma = mb = mc = 0
    try:
        if isinstance(a, str):
            ma = bit[a]
        else:
            for n in a:
                ma |= bit[n]
        if isinstance(b, str):
            mb = bit[b]
        else:
            for n in b:
                mb |= bit[n]
        if isinstance(cond, str):
            mc = bit[cond]
        elif cond is not None:
            for n in cond:
                mc |= bit[n]
    except KeyError:
        ma = mb = mc = -1
    if ma & mb or ma & mc or mb & mc or not ma or not mb:
        # slow path, only to produce the error message
        a, b, cond = _as_node_set(a), _as_node_set(b), _as_node_set(cond)
        if not a or not b:
            raise GraphError("d-separation query needs non-empty node sets")
        _check_disjoint(g, a=a, b=b, cond=cond)
    if masks[4] is not None:
        return not (_reach_kernel(masks[4], ma, mc, mb) & mb)
    return not (_reach_mask(masks, ma, mc, mb) & mb)


def backdoor_blocked(g: CausalDag, x: str, y: str, cond: str | Iterable[str] | None = None) -> bool:
    """Whether ``cond`` blocks every path from ``x`` to ``y`` that starts with an arrow into ``x``.

    Paths through colliders are included; they count as blocked unless ``cond``
    opens the collider (the collider or one of its descendants is in ``cond``).
    With no such path the answer is vacuously ``True``.
    """
    cond = _as_node_set(cond)
    g._check(x)
    g._check(y)
    if x in cond or y in cond:
        raise GraphError("exposure and outcome must not be in the conditioning set")
    _check_disjoint(g, cond=cond)
    for p in enumerate_paths(g, x, y):
        if p.steps[0].forward:
            continue
        if not is_blocked(g, p, cond):
            return False
    return True
