"""Skip-gram structure-preservation module: embeddings, loss and gradient.

Losses follow a minimisation convention: :func:`sgm_grad` returns the
gradient of ``-sgm_loss``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from advsgm.numerics import DEFAULT_BOUNDS, ClipBounds, log_sigmoid, log_sigmoid_slope


@dataclass(frozen=True)
class SgmSample:
    """One (or a vector of) skip-gram term(s): ``i`` input row, ``j`` output row."""

    i: int | np.ndarray
    j: int | np.ndarray
    sign: float | np.ndarray = 1.0

    def __post_init__(self):
        if not np.all(np.isin(np.asarray(self.sign), (-1.0, 1.0))):
            raise ValueError("sign must be +1 or -1")


def init_embeddings(num_nodes: int, r: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Uniform(-0.5/r, 0.5/r) rows rescaled to unit L2 norm, for W_in and W_out."""
    if r < 1:
        raise ValueError("embedding dimension must be >= 1")
    rng = np.random.default_rng(seed)
    mats = []
    for _ in range(2):
        w = rng.uniform(-0.5 / r, 0.5 / r, size=(num_nodes, r))
        norms = np.linalg.norm(w, axis=1, keepdims=True)
        # a zero row has probability zero but would otherwise divide by 0
        w = np.where(norms > 0, w / np.where(norms > 0, norms, 1.0), 1.0 / np.sqrt(r))
        mats.append(w)
    return mats[0], mats[1]


def project_rows(w: np.ndarray, rows=None, max_norm: float = 1.0) -> None:
    """In-place projection of ``rows`` (default all) onto the L2 ball."""
    sel = slice(None) if rows is None else rows
    block = w[sel]
    norms = np.linalg.norm(block, axis=1, keepdims=True)
    w[sel] = block / np.maximum(1.0, norms / max_norm)


def _dots(sample, W_in, W_out):
    i = np.asarray(sample.i)
    j = np.asarray(sample.j)
    return np.einsum("...k,...k->...", W_in[i], W_out[j])


def sgm_loss(sample: SgmSample, W_in, W_out, bounds: ClipBounds | None = DEFAULT_BOUNDS):
    """log S(sign * v_i . v_j); ``bounds=None`` uses the plain sigmoid."""
    z = np.asarray(sample.sign, dtype=float) * _dots(sample, W_in, W_out)
    return log_sigmoid(z, bounds)


def sgm_grad(sample: SgmSample, W_in, W_out, bounds: ClipBounds | None = DEFAULT_BOUNDS):
    """Gradients of ``-sgm_loss`` w.r.t. v_i and v_j.

    Returns arrays shaped like the selected rows: ``(r,)`` for a scalar
    sample, ``(m, r)`` for a vectorised one.
    """
    sign = np.asarray(sample.sign, dtype=float)
    v_i = W_in[np.asarray(sample.i)]
    v_j = W_out[np.asarray(sample.j)]
    z = sign * np.einsum("...k,...k->...", v_i, v_j)
    w = (sign * log_sigmoid_slope(z, bounds))[..., None]
    return -w * v_j, -w * v_i


def write_embeddings(W: np.ndarray, node_ids, dest) -> None:
    """Text format: header "|V| r", then "node_id x_1 ... x_r" (9 sig. digits)."""
    n, r = W.shape
    lines = [f"{n} {r}\n"]
    for node, row in zip(np.asarray(node_ids).tolist(), W):
        lines.append(f"{node} " + " ".join(f"{x:.9g}" for x in row.tolist()) + "\n")
    text = "".join(lines)
    if isinstance(dest, (str, Path)):
        Path(dest).write_text(text, encoding="utf-8")
    else:
        dest.write(text)


def read_embeddings(source) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`write_embeddings`; returns ``(node_ids, W)``."""
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    lines = text.splitlines()
    if not lines:
        raise ValueError("empty embedding file")
    n, r = (int(x) for x in lines[0].split())
    if len(lines) - 1 != n:
        raise ValueError(f"header says {n} rows, found {len(lines) - 1}")
    ids = np.empty(n, dtype=np.int64)
    W = np.empty((n, r))
    for k, line in enumerate(lines[1:]):
        parts = line.split()
        if len(parts) != r + 1:
            raise ValueError(f"row {k + 1}: expected {r + 1} fields")
        ids[k] = int(parts[0])
        W[k] = [float(x) for x in parts[1:]]
    return ids, W
