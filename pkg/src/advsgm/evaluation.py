"""Downstream metrics: link-prediction AUC, affinity propagation, mutual information."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


def score_pairs(W_in, pairs) -> np.ndarray:
    """Inner products of input-role vectors for each (i, j) pair."""
    pairs = np.asarray(pairs).reshape(-1, 2)
    return np.einsum("ij,ij->i", W_in[pairs[:, 0]], W_in[pairs[:, 1]])


@dataclass(frozen=True)
class ScoredPairs:
    positives: np.ndarray
    negatives: np.ndarray


def auc(scored: ScoredPairs) -> float:
    """Exact ROC AUC with ties counted half, via average ranks."""
    pos = np.asarray(scored.positives, dtype=float)
    neg = np.asarray(scored.negatives, dtype=float)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("AUC needs at least one positive and one negative score")
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[: len(pos)].sum() - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


def link_prediction_auc(W_in, test_pos, test_neg) -> float:
    return auc(ScoredPairs(score_pairs(W_in, test_pos), score_pairs(W_in, test_neg)))


@dataclass(frozen=True)
class Clustering:
    labels: np.ndarray
    exemplars: np.ndarray
    iterations_run: int
    converged: bool


def affinity_propagation(points, damping: float = 0.9, max_iter: int = 500,
                         convergence_window: int = 15, preference: float | None = None) -> Clustering:
    """Responsibility/availability message passing on s(i,k) = -||x_i - x_k||^2.

    The preference defaults to the median off-diagonal similarity. After
    message passing each cluster's exemplar is refined to the member with the
    largest total similarity to the rest of the cluster.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim != 2 or len(X) < 2:
        raise ValueError("need at least two points")
    if not 0.5 <= damping < 1.0:
        raise ValueError("damping must lie in [0.5, 1)")
    n = len(X)
    sq = np.sum(X * X, axis=1)
    S = -(sq[:, None] + sq[None, :] - 2.0 * X @ X.T)
    np.fill_diagonal(S, 0.0)
    S = np.minimum(S, 0.0)
    off = S[~np.eye(n, dtype=bool)]
    if preference is None:
        preference = float(np.median(off))
    if np.all(off == off[0]) and off[0] >= preference:
        # every point identical: one cluster around the first point
        return Clustering(np.zeros(n, dtype=int), np.array([0]), 0, True)
    np.fill_diagonal(S, preference)
    # Symmetric inputs make exemplar choice a tie; a fixed-seed perturbation
    # at machine precision breaks it reproducibly.
    jitter = np.random.RandomState(0).standard_normal((n, n))
    S = S + (np.finfo(float).eps * S + np.finfo(float).tiny * 100) * jitter

    R = np.zeros((n, n))
    A = np.zeros((n, n))
    idx = np.arange(n)
    history = np.zeros((n, convergence_window), dtype=bool)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        AS = A + S
        first = np.argmax(AS, axis=1)
        top = AS[idx, first]
        AS[idx, first] = -np.inf
        second = AS.max(axis=1)
        R_new = S - top[:, None]
        R_new[idx, first] = S[idx, first] - second
        R = damping * R + (1.0 - damping) * R_new

        Rp = np.maximum(R, 0.0)
        Rp[idx, idx] = R[idx, idx]
        col = Rp.sum(axis=0)
        A_new = col[None, :] - Rp
        diag = A_new[idx, idx].copy()
        A_new = np.minimum(A_new, 0.0)
        A_new[idx, idx] = diag
        A = damping * A + (1.0 - damping) * A_new

        is_exemplar = (np.diag(A) + np.diag(R)) > 0
        history[:, (it - 1) % convergence_window] = is_exemplar
        if it >= convergence_window:
            stable = np.all(history == history[:, :1], axis=1).all()
            if stable and is_exemplar.any():
                converged = True
                break

    exemplars = np.flatnonzero((np.diag(A) + np.diag(R)) > 0)
    if len(exemplars) == 0:
        exemplars = np.array([int(np.argmax(np.diag(A) + np.diag(R)))])
    labels = np.argmax(S[:, exemplars], axis=1)
    labels[exemplars] = np.arange(len(exemplars))
    refined = []
    for c in range(len(exemplars)):
        members = np.flatnonzero(labels == c)
        within = S[np.ix_(members, members)].sum(axis=0)
        refined.append(members[np.argmax(within)])
    exemplars = np.array(refined)
    labels = np.argmax(S[:, exemplars], axis=1)
    labels[exemplars] = np.arange(len(exemplars))
    return Clustering(exemplars[labels], np.sort(exemplars), it, converged)


def mutual_information(pred, truth) -> float:
    """Empirical mutual information in nats between two labelings."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("labelings must cover the same nodes")
    if len(pred) == 0:
        raise ValueError("no labelled nodes to compare")
    _, p_idx = np.unique(pred, return_inverse=True)
    _, t_idx = np.unique(truth, return_inverse=True)
    joint = np.zeros((p_idx.max() + 1, t_idx.max() + 1))
    np.add.at(joint, (p_idx, t_idx), 1.0)
    joint /= joint.sum()
    pp = joint.sum(axis=1, keepdims=True)
    pt = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    mi = float(np.sum(joint[nz] * np.log(joint[nz] / (pp @ pt)[nz])))
    return max(mi, 0.0)


def clustering_mi(W_in, labels: dict[int, int], **ap_kwargs) -> tuple[float, Clustering]:
    """Cluster the labelled nodes' vectors and score against their labels."""
    if not labels:
        raise ValueError("graph has no node labels")
    nodes = np.array(sorted(labels))
    clustering = affinity_propagation(W_in[nodes], **ap_kwargs)
    truth = np.array([labels[v] for v in nodes.tolist()])
    return mutual_information(clustering.labels, truth), clustering
