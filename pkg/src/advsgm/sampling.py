"""Positive / negative batch generation with the subsampling semantics the
privacy accountant assumes (uniform, without replacement)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from advsgm.graph import Graph


@dataclass(frozen=True, eq=False)
class Batch:
    kind: Literal["positive", "negative"]
    pairs: np.ndarray  # (m, 2): column 0 is the input-role node
    gamma: float

    def __len__(self):
        return len(self.pairs)

    @property
    def sign(self) -> float:
        return 1.0 if self.kind == "positive" else -1.0


def sample_positive_batch(graph: Graph, B: int, rng: np.random.Generator,
                          orient: bool = True) -> Batch:
    """``B`` distinct edges drawn uniformly without replacement.

    With ``orient`` each drawn edge is flipped with probability 1/2 so that
    both endpoints take the input role equally often. The edge choice, and
    therefore ``gamma``, is unaffected.
    """
    m = graph.num_edges
    if not 1 <= B <= m:
        raise ValueError(f"batch size {B} must be in [1, {m}]")
    idx = rng.choice(m, size=B, replace=False)
    pairs = graph.edges[idx].copy()
    if orient:
        flip = rng.random(B) < 0.5
        pairs[flip] = pairs[flip, ::-1]
    return Batch("positive", pairs, B / m)


def sample_negative_batch(graph: Graph, positive: Batch, k: int,
                          rng: np.random.Generator) -> Batch:
    """Pair the b-th positive start node with the b-th group of ``k`` nodes.

    ``B*k`` distinct nodes are drawn uniformly from V and split, in draw
    order, into ``B`` groups. Negative pairs may coincide with real edges.
    """
    B = len(positive)
    n = graph.num_nodes
    if k < 1:
        raise ValueError("k must be positive")
    if B * k > n:
        raise ValueError(f"B*k = {B * k} exceeds |V| = {n}; negatives are drawn without replacement")
    nodes = rng.choice(n, size=B * k, replace=False)
    starts = np.repeat(positive.pairs[:, 0], k)
    pairs = np.stack([starts, nodes], axis=1)
    return Batch("negative", pairs, B * k / n)


def sample_real_pairs(graph: Graph, count: int, rng: np.random.Generator) -> np.ndarray:
    """Real edges for the generator phase, randomly oriented.

    Drawn without replacement when ``count <= |E|``, otherwise with.
    """
    m = graph.num_edges
    idx = rng.choice(m, size=count, replace=count > m)
    pairs = graph.edges[idx].copy()
    flip = rng.random(count) < 0.5
    pairs[flip] = pairs[flip, ::-1]
    return pairs
