"""Undirected simple graphs: loading, labels, edge splits, synthetic SBMs."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np


class GraphFormatError(ValueError):
    """Malformed edge-list or label input."""

    def __init__(self, message, line_no=None, source=None):
        self.line_no = line_no
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}"
        if line_no is not None:
            where += f":{line_no}" if where else f"line {line_no}"
        super().__init__(f"{where}: {message}" if where else message)


class GraphValidationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected simple graph on nodes ``0..num_nodes-1``.

    ``edges`` is an ``(m, 2)`` int array with ``u < v`` in lexicographic
    order. ``node_ids[k]`` is the original id of compact node ``k``.
    ``labels`` maps compact node -> class id for labelled nodes.
    """

    num_nodes: int
    edges: np.ndarray
    node_ids: np.ndarray | None = None
    labels: dict[int, int] | None = None
    _adjacency: list = field(default=None, repr=False)

    def __repr__(self):
        labelled = 0 if self.labels is None else len(self.labels)
        return f"Graph(num_nodes={self.num_nodes}, num_edges={len(self.edges)}, labelled={labelled})"

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        if self.node_ids is None:
            ids = np.arange(self.num_nodes, dtype=np.int64)
        else:
            ids = np.asarray(self.node_ids, dtype=np.int64)
        ids.setflags(write=False)
        object.__setattr__(self, "node_ids", ids)
        self._validate()

    def _validate(self):
        n, e = self.num_nodes, self.edges
        if n < 0:
            raise GraphValidationError("negative node count")
        if len(self.node_ids) != n:
            raise GraphValidationError("node id map does not cover every node")
        if len(e):
            if e.min() < 0 or e.max() >= n:
                raise GraphValidationError("edge endpoint out of range")
            if np.any(e[:, 0] >= e[:, 1]):
                raise GraphValidationError("edges must satisfy u < v (no self-loops)")
            keys = e[:, 0] * n + e[:, 1]
            if np.any(np.diff(keys) <= 0):
                raise GraphValidationError("edges must be sorted and unique")
        if self.labels is not None:
            for node in self.labels:
                if not 0 <= node < n:
                    raise GraphValidationError(f"label for unknown node {node}")

    @classmethod
    def from_edges(cls, num_nodes, pairs, node_ids=None, labels=None) -> "Graph":
        """Build from arbitrary pairs: drops self-loops, merges duplicates."""
        return cls(num_nodes, canonical_edges(pairs, num_nodes), node_ids, labels)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def adjacency(self) -> list[np.ndarray]:
        if self._adjacency is None:
            n = self.num_nodes
            both = np.concatenate([self.edges, self.edges[:, ::-1]])
            order = np.lexsort((both[:, 1], both[:, 0]))
            both = both[order]
            splits = np.searchsorted(both[:, 0], np.arange(1, n))
            adj = np.split(both[:, 1], splits) if n else []
            object.__setattr__(self, "_adjacency", adj)
        return self._adjacency

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.num_nodes)

    def edge_keys(self) -> np.ndarray:
        return self.edges[:, 0] * self.num_nodes + self.edges[:, 1]

    def has_edge(self, u, v) -> bool:
        if u == v:
            return False
        u, v = min(u, v), max(u, v)
        key = u * self.num_nodes + v
        keys = self.edge_keys()
        pos = np.searchsorted(keys, key)
        return bool(pos < len(keys) and keys[pos] == key)

    def with_edges(self, pairs) -> "Graph":
        """Same node set, ids and labels, different edge set."""
        return Graph(self.num_nodes, canonical_edges(pairs, self.num_nodes), self.node_ids, self.labels)

    def with_labels(self, labels) -> "Graph":
        return replace(self, labels=dict(labels), _adjacency=None)

    def digest(self) -> str:
        """sha256 of the canonical edge list text."""
        return hashlib.sha256(format_edge_list(self).encode()).hexdigest()


def canonical_edges(pairs, num_nodes: int) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    keep = lo != hi
    keys = np.unique(lo[keep] * max(num_nodes, 1) + hi[keep])
    return np.stack([keys // max(num_nodes, 1), keys % max(num_nodes, 1)], axis=1)


def _open_text(source) -> tuple[Iterable[str], str | None]:
    if isinstance(source, (str, Path)):
        path = Path(source)
        return path.read_text(encoding="utf-8").splitlines(), str(path)
    if isinstance(source, bytes):
        return source.decode("utf-8").splitlines(), None
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return data.splitlines(), getattr(source, "name", None)


def _parse_int_pairs(lines, name):
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if len(tokens) != 2:
            raise GraphFormatError(f"expected 2 fields, got {len(tokens)}", line_no, name)
        try:
            yield line_no, int(tokens[0]), int(tokens[1])
        except ValueError:
            raise GraphFormatError(f"non-integer token in {line!r}", line_no, name) from None


def load_edge_list(source, num_nodes: int | None = None) -> Graph:
    """Parse a whitespace-separated edge list.

    Without ``num_nodes`` the ids are compacted to ``0..|V|-1`` in order of
    first appearance and the originals are kept in ``Graph.node_ids``. With
    ``num_nodes`` the ids are taken verbatim (used for already-canonical
    dataset bundles, which may contain isolated nodes).
    """
    lines, name = _open_text(source)
    raw = [(u, v) for _, u, v in _parse_int_pairs(lines, name)]
    if num_nodes is not None:
        graph = Graph.from_edges(num_nodes, raw) if raw else Graph(num_nodes, np.empty((0, 2)))
    else:
        first_seen: dict[int, int] = {}
        compact = []
        for u, v in raw:
            for x in (u, v):
                if x not in first_seen:
                    first_seen[x] = len(first_seen)
            compact.append((first_seen[u], first_seen[v]))
        ids = np.fromiter(first_seen.keys(), dtype=np.int64, count=len(first_seen))
        graph = Graph.from_edges(len(first_seen), compact, node_ids=ids)
    if graph.num_edges == 0:
        raise GraphValidationError(f"{name or 'input'}: no edges after removing self-loops")
    return graph


def format_edge_list(graph: Graph) -> str:
    return "".join(f"{u} {v}\n" for u, v in graph.edges.tolist())


def save_edge_list(graph: Graph, dest) -> None:
    _write_text(dest, format_edge_list(graph))


def save_id_map(graph: Graph, dest) -> None:
    _write_text(dest, "".join(f"{orig} {k}\n" for k, orig in enumerate(graph.node_ids.tolist())))


def load_id_map(source) -> np.ndarray:
    lines, name = _open_text(source)
    pairs = sorted((compact, orig) for _, orig, compact in _parse_int_pairs(lines, name))
    if [c for c, _ in pairs] != list(range(len(pairs))):
        raise GraphFormatError("id map must cover compact ids 0..n-1 exactly once", source=name)
    return np.array([o for _, o in pairs], dtype=np.int64)


def save_labels(graph: Graph, dest) -> None:
    labels = graph.labels or {}
    ids = graph.node_ids
    _write_text(dest, "".join(f"{ids[k]} {lab}\n" for k, lab in sorted(labels.items())))


def _write_text(dest, text):
    if isinstance(dest, (str, Path)):
        Path(dest).write_text(text, encoding="utf-8")
    else:
        dest.write(text)


def load_labels(source, graph: Graph) -> Graph:
    """Attach "original_id label" lines to ``graph``; empty input is a no-op."""
    lines, name = _open_text(source)
    lookup = {orig: k for k, orig in enumerate(graph.node_ids.tolist())}
    labels: dict[int, int] = {}
    for line_no, orig, label in _parse_int_pairs(lines, name):
        if orig not in lookup:
            raise GraphFormatError(f"label for unknown node id {orig}", line_no, name)
        node = lookup[orig]
        if node in labels and labels[node] != label:
            raise GraphFormatError(
                f"conflicting labels for node {orig}: {labels[node]} vs {label}", line_no, name
            )
        labels[node] = label
    if not labels:
        return graph
    return graph.with_labels(labels)


@dataclass(frozen=True, eq=False)
class EdgeSplit:
    train_graph: Graph
    test_pos: np.ndarray
    test_neg: np.ndarray
    seed: int

    def __repr__(self):
        return f"EdgeSplit({self.train_graph!r}, test_pos={len(self.test_pos)}, test_neg={len(self.test_neg)}, seed={self.seed})"


def split_edges(graph: Graph, train_fraction: float = 0.9, seed: int = 0,
                max_attempts_factor: int = 100) -> EdgeSplit:
    """Random train/test edge split plus an equal number of test non-edges."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    m = graph.num_edges
    if m < 10:
        raise GraphValidationError("need at least 10 edges to split")
    n = graph.num_nodes
    n_test = int(round(m * (1.0 - train_fraction)))
    non_edges = n * (n - 1) // 2 - m
    if non_edges < n_test:
        raise GraphValidationError(
            f"graph too dense: {non_edges} non-edges for {n_test} negative test pairs"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(m)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    test_pos = graph.edges[test_idx]

    existing = set(graph.edge_keys().tolist())
    chosen: list[tuple[int, int]] = []
    seen: set[int] = set()
    attempts = 0
    cap = max_attempts_factor * max(n_test, 1)
    while len(chosen) < n_test:
        if attempts >= cap:
            raise GraphValidationError(
                f"could not sample {n_test} negative pairs in {cap} attempts"
            )
        attempts += 1
        u, v = rng.integers(0, n, size=2).tolist()
        if u == v:
            continue
        u, v = min(u, v), max(u, v)
        key = u * n + v
        if key in existing or key in seen:
            continue
        seen.add(key)
        chosen.append((u, v))
    test_neg = np.array(chosen, dtype=np.int64).reshape(-1, 2)
    train = Graph(n, graph.edges[train_idx], graph.node_ids, graph.labels)
    return EdgeSplit(train, test_pos, test_neg, seed)


def generate_sbm(blocks, p_in: float, p_out: float, seed: int = 0) -> Graph:
    """Stochastic block model with planted labels equal to block ids."""
    blocks = [int(s) for s in blocks]
    if not blocks or any(s <= 0 for s in blocks):
        raise ValueError("every block must have positive size")
    for p in (p_in, p_out):
        if not 0.0 <= p <= 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
    n = sum(blocks)
    membership = np.repeat(np.arange(len(blocks)), blocks)
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(membership[iu] == membership[ju], p_in, p_out)
    keep = rng.random(len(iu)) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    labels = {k: int(b) for k, b in enumerate(membership.tolist())}
    return Graph(n, edges, None, labels)


def sbm_expected_edges(blocks, p_in, p_out) -> tuple[float, float]:
    """Mean and variance of the SBM edge count."""
    n = sum(blocks)
    same = sum(math.comb(s, 2) for s in blocks)
    cross = math.comb(n, 2) - same
    mean = same * p_in + cross * p_out
    var = same * p_in * (1 - p_in) + cross * p_out * (1 - p_out)
    return mean, var
