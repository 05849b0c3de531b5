"""Structural reasoning on the network graph.

The graph has a node ``("w", k)`` per node signal and ``("e", k)`` per white
noise source.  Module edges ``w_l -> w_j`` exist where ``G_jl != 0`` and
noise edges ``e_k -> w_j`` where ``(H F)_jk != 0`` with ``F F^T = Lambda``,
i.e. the sources are taken with unit covariance before reading off edges.

A path is *direct* when it is a single edge and *unmeasured* when all its
intermediate w-nodes lie in the unmeasured set ``Z``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import networkx as nx

from .network import NetworkModel

__all__ = [
    "NetworkGraph",
    "NodePartition",
    "ConfounderFinding",
    "ConditionResult",
    "CheckReport",
    "NoValidBlockingSetError",
    "build_graph",
    "path_exists",
    "find_path",
    "unmeasured_paths",
    "is_confounder",
    "find_confounders",
    "algorithm_a",
    "check_property1",
    "select_blocking_set",
    "blocking_candidates",
]

Node = tuple[str, int]
WITNESS_CAP = 16


def w(k: int) -> Node:
    return ("w", k)


def e(k: int) -> Node:
    return ("e", k)


def fmt_node(n: Node) -> str:
    return f"{n[0]}{n[1]}"


def fmt_path(path: Iterable[Node]) -> str:
    return " -> ".join(fmt_node(n) for n in path)


def fmt_set(s: Iterable[int]) -> str:
    return "{" + ", ".join(str(k) for k in sorted(s)) + "}"


@dataclass(frozen=True, eq=False)
class NetworkGraph:
    L: int
    digraph: nx.DiGraph

    @property
    def module_edges(self) -> set[tuple[int, int]]:
        """``(l, j)`` for each edge ``w_l -> w_j``."""
        return {(a[1], b[1]) for a, b in self.digraph.edges if a[0] == "w"}

    @property
    def noise_edges(self) -> set[tuple[int, int]]:
        """``(k, j)`` for each edge ``e_k -> w_j``."""
        return {(a[1], b[1]) for a, b in self.digraph.edges if a[0] == "e"}

    def successors(self, n: Node) -> list[Node]:
        return sorted(self.digraph.successors(n))

    def in_neighbors(self, j: int) -> set[int]:
        return {p[1] for p in self.digraph.predecessors(w(j)) if p[0] == "w"}


def build_graph(model: NetworkModel) -> NetworkGraph:
    g = nx.DiGraph()
    g.add_nodes_from(w(k) for k in model.nodes)
    g.add_nodes_from(e(k) for k in model.nodes)
    for (j, l) in model.modules:
        if j != l:
            g.add_edge(w(l), w(j))
    pattern = model.noise_pattern()
    for j in model.nodes:
        for k in model.nodes:
            if pattern[j - 1, k - 1]:
                g.add_edge(e(k), w(j))
    return NetworkGraph(model.L, g)


def _as_pred(allowed) -> Callable[[int], bool]:
    if callable(allowed):
        return allowed
    allowed = frozenset(allowed or ())
    return allowed.__contains__


def find_path(g: NetworkGraph, source: Node, target: Node, allowed) -> list[Node] | None:
    """Shortest path ``source -> target`` whose intermediate w-nodes satisfy ``allowed``.

    ``allowed`` is a predicate on node indices or a set of admissible indices.
    A single edge has no intermediates and always qualifies.  Returns ``None``
    if there is no such path (a node does not reach itself without a cycle).
    """
    ok = _as_pred(allowed)
    parent = {source: None}
    frontier = [source]
    while frontier:
        nxt = []
        for n in frontier:
            for m in g.successors(n):
                if m == target:
                    path = [m, n]
                    while parent[path[-1]] is not None:
                        path.append(parent[path[-1]])
                    return path[::-1]
                if m in parent or m[0] != "w" or not ok(m[1]):
                    continue
                parent[m] = n
                nxt.append(m)
        frontier = nxt
    return None


def path_exists(g: NetworkGraph, source: Node, target: Node, allowed=()) -> bool:
    return find_path(g, source, target, allowed) is not None


def unmeasured_paths(g: NetworkGraph, source: Node, target: Node, Z, cap: int = WITNESS_CAP) -> list[list[Node]]:
    """Up to ``cap`` simple direct-or-unmeasured paths, shortest first."""
    Z = frozenset(Z)
    keep = [n for n in g.digraph.nodes if n in (source, target) or (n[0] == "w" and n[1] in Z)]
    sub = g.digraph.subgraph(keep)
    if source not in sub or target not in sub:
        return []
    if source == target:
        return []
    paths = []
    try:
        for p in nx.shortest_simple_paths(sub, source, target):
            paths.append(list(p))
            if len(paths) >= cap:
                break
    except nx.NetworkXNoPath:
        return []
    return paths


@dataclass(frozen=True)
class NodePartition:
    """Index sets of an identification setup for target module ``G_ji``.

    ``Y = Q + {o}`` are predicted outputs, ``D = Q + A + B`` predictor inputs,
    ``Z`` the unmeasured rest.  ``o`` is ``None`` when ``j`` is in ``Q``.
    """

    L: int
    target: tuple[int, int]
    Y: frozenset
    D: frozenset
    Q: frozenset
    A: frozenset
    B: frozenset = frozenset()
    o: int | None = None

    @property
    def Z(self) -> frozenset:
        return frozenset(range(1, self.L + 1)) - self.D - self.Y

    @property
    def measured(self) -> frozenset:
        return self.D | self.Y

    @property
    def outputs(self) -> list[int]:
        """Predicted outputs in a fixed order: Q ascending, then o."""
        return sorted(self.Q) + ([self.o] if self.o is not None else [])

    @property
    def inputs(self) -> list[int]:
        return sorted(self.D)

    def order(self) -> list[int]:
        """Measured nodes in block order Q, o, B, A."""
        return self.outputs + sorted(self.B) + sorted(self.A)

    def with_blocking(self, B: Iterable[int]) -> "NodePartition":
        B = frozenset(B)
        return replace(self, B=B, D=self.Q | self.A | B)

    def check_invariants(self, model: NetworkModel | None = None) -> list[str]:
        problems = []
        o = frozenset() if self.o is None else frozenset({self.o})
        if self.Y != self.Q | o or (self.o is not None and self.o in self.Q):
            problems.append("Y is not the disjoint union of Q and {o}")
        if self.D != self.Q | self.A | self.B or (self.Q & self.A) or (self.Q & self.B) or (self.A & self.B):
            problems.append("D is not the disjoint union of Q, A and B")
        if self.Q != self.Y & self.D:
            problems.append("Q differs from Y & D")
        j, i = self.target
        if j not in self.Y:
            problems.append(f"target output {j} not in Y")
        if i not in self.D:
            problems.append(f"target input {i} not in D")
        if model is not None:
            for x in sorted(self.Y):
                missing = model.in_neighbors(x) - self.D
                if missing:
                    problems.append(f"in-neighbours {fmt_set(missing)} of w{x} are not predictor inputs")
        return problems

    def describe(self) -> dict:
        return {
            "target": list(self.target),
            "Y": sorted(self.Y),
            "D": sorted(self.D),
            "Q": sorted(self.Q),
            "o": self.o,
            "A": sorted(self.A),
            "B": sorted(self.B),
            "Z": sorted(self.Z),
        }


@dataclass(frozen=True)
class ConfounderFinding:
    e_index: int
    output_witness: int
    input_witness: int
    kind: str
    output_path: tuple
    input_path: tuple
    path_pairs: tuple = ()

    def describe(self) -> str:
        return (
            f"e{self.e_index} ({self.kind}): "
            f"{fmt_path(self.input_path)} ; {fmt_path(self.output_path)}"
        )


def is_confounder(g: NetworkGraph, e_index: int, inputs, outputs, Z,
                  cap: int = WITNESS_CAP) -> ConfounderFinding | None:
    """Whether ``e_index`` confounds the estimation problem ``inputs -> outputs``.

    Requires simultaneous direct-or-unmeasured paths from the source to some
    input node and to some output node.  The finding is ``direct`` when a
    single-edge witness exists on both sides.
    """
    Z = frozenset(Z)
    src = e(e_index)
    to_in = {a: find_path(g, src, w(a), Z) for a in sorted(inputs)}
    to_out = {y: find_path(g, src, w(y), Z) for y in sorted(outputs)}
    to_in = {k: p for k, p in to_in.items() if p is not None}
    to_out = {k: p for k, p in to_out.items() if p is not None}
    if not to_in or not to_out:
        return None
    direct_in = [k for k, p in to_in.items() if len(p) == 2]
    direct_out = [k for k, p in to_out.items() if len(p) == 2]
    if direct_in and direct_out:
        a, y, kind = direct_in[0], direct_out[0], "direct"
    else:
        a, y, kind = next(iter(to_in)), next(iter(to_out)), "indirect"

    pairs = []
    for ai in sorted(to_in):
        for yi in sorted(to_out):
            for pi in unmeasured_paths(g, src, w(ai), Z, cap):
                for po in unmeasured_paths(g, src, w(yi), Z, cap):
                    pairs.append((tuple(pi), tuple(po)))
                    if len(pairs) >= cap:
                        break
                if len(pairs) >= cap:
                    break
            if len(pairs) >= cap:
                break
        if len(pairs) >= cap:
            break
    return ConfounderFinding(
        e_index=e_index,
        output_witness=y,
        input_witness=a,
        kind=kind,
        output_path=tuple(to_out[y]),
        input_path=tuple(to_in[a]),
        path_pairs=tuple(pairs),
    )


def find_confounders(g: NetworkGraph, inputs, outputs, Z, cap: int = WITNESS_CAP) -> list[ConfounderFinding]:
    out = []
    for k in range(1, g.L + 1):
        f = is_confounder(g, k, inputs, outputs, Z, cap)
        if f is not None:
            out.append(f)
    return out


class TargetModuleError(ValueError):
    pass


def algorithm_a(model: NetworkModel, j: int, i: int) -> NodePartition:
    """Select predicted outputs ``Y`` and predictor inputs ``D`` for ``G_ji``.

    Every in-neighbour of a predicted output becomes a predictor input; it is
    also promoted to a predicted output when its disturbance is correlated
    with the disturbance of a node already in ``Y``.  The sweep restarts
    whenever ``Y`` grows, until a fixed point.  ``B`` is left empty.
    """
    if model.G(j, i).is_zero:
        raise TargetModuleError(f"module G_{j}{i} is not present in the network")
    corr = model.correlation_pattern()
    Y = [j]
    D: set[int] = set()
    changed = True
    while changed:
        changed = False
        for x in sorted(Y):
            for k in sorted(model.in_neighbors(x)):
                D.add(k)
                if k not in Y and any(corr[k - 1, l - 1] for l in Y):
                    Y.append(k)
                    changed = True
            if changed:
                break
    Yf, Df = frozenset(Y), frozenset(D)
    Q = Yf & Df
    o = None if j in Q else j
    return NodePartition(L=model.L, target=(j, i), Y=Yf, D=Df, Q=Q, A=Df - Q, B=frozenset(), o=o)


@dataclass
class ConditionResult:
    name: str
    passed: bool
    applicable: bool = True
    witnesses: list[str] = field(default_factory=list)
    paths: list[tuple] = field(default_factory=list)

    def line(self) -> str:
        status = "pass" if self.passed else "FAIL"
        if not self.applicable:
            status += " (not applicable)"
        s = f"condition {self.name}: {status}"
        if self.witnesses:
            s += " -- " + "; ".join(self.witnesses)
        return s


@dataclass
class CheckReport:
    partition: NodePartition
    confounders: list[ConfounderFinding]
    conditions: list[ConditionResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    def failed(self) -> list[str]:
        return [c.name for c in self.conditions if not c.passed]

    def __getitem__(self, name: str) -> ConditionResult:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def lines(self) -> list[str]:
        return [c.line() for c in self.conditions]


def check_property1(model_or_graph, partition: NodePartition, cap: int = WITNESS_CAP) -> CheckReport:
    """Evaluate conditions 1 and 2a-2d for the blocking set ``partition.B``.

    Confounders are those of ``A -> (Q, o)`` with every non-selected node
    unmeasured (``Z0 = L - Y - A``).  The remaining conditions use the
    partition's own ``Z = Z0 - B``.
    """
    g = model_or_graph if isinstance(model_or_graph, NetworkGraph) else build_graph(model_or_graph)
    P = partition
    A, B, Z = P.A, P.B, P.Z
    Z0 = frozenset(range(1, P.L + 1)) - P.Y - A
    confs = find_confounders(g, A, P.Y, Z0, cap)
    has_conf = bool(confs)
    j, i = P.target

    c1 = ConditionResult("1", passed=has_conf or not B, applicable=not has_conf)
    if not c1.passed:
        c1.witnesses.append(f"no confounders for A -> Y but B = {fmt_set(B)} is not void")

    c2a = ConditionResult("2a", True, applicable=has_conf)
    for f in confs:
        for a in sorted(A):
            p = find_path(g, e(f.e_index), w(a), Z)
            if p is not None:
                c2a.passed = False
                c2a.witnesses.append(f"confounder e{f.e_index} reaches w{a} unblocked: {fmt_path(p)}")
                c2a.paths.append(tuple(p))

    c2b = ConditionResult("2b", True, applicable=bool(B))
    for k in range(1, P.L + 1):
        for b in sorted(B):
            pb = find_path(g, e(k), w(b), Z)
            if pb is None:
                continue
            for a in sorted(A):
                pa = find_path(g, e(k), w(a), Z)
                if pa is not None:
                    c2b.passed = False
                    c2b.witnesses.append(f"e{k} reaches w{b} and w{a} unmeasured: {fmt_path(pb)} ; {fmt_path(pa)}")
                    c2b.paths.extend([tuple(pb), tuple(pa)])

    def _no_path_from(node: int, name: str) -> ConditionResult:
        c = ConditionResult(name, True, applicable=bool(B))
        for b in sorted(B):
            if b == node:
                c.passed = False
                c.witnesses.append(f"w{node} itself is in B")
                continue
            p = find_path(g, w(node), w(b), Z)
            if p is not None:
                c.passed = False
                c.witnesses.append(f"w{node} reaches blocking node w{b}: {fmt_path(p)}")
                c.paths.append(tuple(p))
        return c

    c2c = _no_path_from(i, "2c")
    c2d = _no_path_from(j, "2d")
    return CheckReport(P, confs, [c1, c2a, c2b, c2c, c2d])


class NoValidBlockingSetError(ValueError):
    def __init__(self, message: str, best: CheckReport | None = None):
        super().__init__(message)
        self.best = best


def blocking_candidates(partition: NodePartition) -> list[int]:
    return sorted(set(range(1, partition.L + 1)) - partition.Y - partition.A)


def select_blocking_set(model: NetworkModel, partition: NodePartition,
                        max_size: int | None = None, max_candidates: int = 1 << 20,
                        trace: list | None = None) -> NodePartition:
    """First blocking set passing ``check_property1``, by size then lexicographic order.

    When ``trace`` is a list, the ``CheckReport`` of every candidate tried is appended.
    """
    g = build_graph(model)
    cands = blocking_candidates(partition)
    limit = len(cands) if max_size is None else min(max_size, len(cands))
    best = None
    tried = 0
    for size in range(limit + 1):
        for combo in itertools.combinations(cands, size):
            tried += 1
            if tried > max_candidates:
                break
            rep = check_property1(g, partition.with_blocking(combo))
            if trace is not None:
                trace.append(rep)
            if rep.passed:
                return rep.partition
            if best is None or len(rep.failed()) < len(best.failed()):
                best = rep
    detail = ""
    if best is not None:
        detail = f"; best candidate B = {fmt_set(best.partition.B)} fails " + ", ".join(
            l for l in best.lines() if "FAIL" in l
        )
    raise NoValidBlockingSetError(
        f"no blocking set among {fmt_set(cands)} satisfies the blocking conditions (searched {tried} candidates){detail}",
        best,
    )
