"""Scalar and vector primitives shared by the learning code.

Everything here is vectorised over numpy arrays and pure, apart from
:func:`gaussian_vector` which consumes the supplied generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Smoothing constant of the tanh-matched soft corner before rescaling.
_C_TANH = 2.0 / (math.exp(2.0) + 1.0)

# e^(-x) is treated as saturated at the upper bound once the soft corner
# is this many smoothing lengths past it.
_SATURATION_LENGTHS = 40.0
# Largest exponent we hand to np.exp; beyond it the clip is exactly b anyway.
_MAX_EXPONENT = 700.0


@dataclass(frozen=True)
class ClipBounds:
    """Lower/upper bounds for the smooth exponential clip.

    ``c`` is the corner sharpness, derived from the bounds. Smaller ``b - a``
    gives sharper corners.
    """

    a: float = 1e-5
    b: float = 120.0

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ValueError("clip bounds must be finite")
        if not 0.0 < self.a < self.b:
            raise ValueError(f"need 0 < a < b, got a={self.a}, b={self.b}")

    @property
    def c(self) -> float:
        return (1.0 / (2.0 * _C_TANH)) / ((self.b - self.a) / 2.0)

    @property
    def saturation_threshold(self) -> float:
        """Value of -x beyond which e^(-x) is replaced by ``b``."""
        return math.log(self.b) + _SATURATION_LENGTHS / self.c


DEFAULT_BOUNDS = ClipBounds()


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")


def smooth_exp_clip(x, bounds: ClipBounds = DEFAULT_BOUNDS):
    """Clip ``x`` to ``[a, b]`` with exponentially smoothed corners."""
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    a, b, c = bounds.a, bounds.b, bounds.c
    out = np.clip(x, a, b)
    out = out + np.exp(-c * np.abs(x - a)) / (2.0 * c)
    out = out - np.exp(-c * np.abs(x - b)) / (2.0 * c)
    return out[()] if out.ndim == 0 else out


def smooth_exp_clip_deriv(x, bounds: ClipBounds = DEFAULT_BOUNDS):
    """Derivative of :func:`smooth_exp_clip` with respect to ``x``.

    The clip is C1, so at the two corner points the indicator is taken as 1/2
    and sign(0) = 0, which reproduces the common one-sided limit.
    """
    x = np.asarray(x, dtype=float)
    a, b, c = bounds.a, bounds.b, bounds.c
    inside = np.where((x > a) & (x < b), 1.0, np.where((x == a) | (x == b), 0.5, 0.0))
    out = (
        inside
        - np.sign(x - a) * np.exp(-c * np.abs(x - a)) / 2.0
        + np.sign(x - b) * np.exp(-c * np.abs(x - b)) / 2.0
    )
    return out[()] if out.ndim == 0 else out


def _clipped_exp_neg(x, bounds):
    """Return (t, clip(t), saturated mask) for t = e^(-x)."""
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    saturated = -x > bounds.saturation_threshold
    t = np.exp(np.minimum(-x, _MAX_EXPONENT))
    clipped = np.where(saturated, bounds.b, smooth_exp_clip(np.where(saturated, bounds.b, t), bounds))
    return t, clipped, saturated


def constrained_sigmoid(x, bounds: ClipBounds = DEFAULT_BOUNDS):
    """Sigmoid whose internal exponential is smoothly clipped to [a, b]."""
    _, clipped, _ = _clipped_exp_neg(x, bounds)
    out = 1.0 / (1.0 + clipped)
    return out[()] if np.ndim(out) == 0 else out


def log_constrained_sigmoid(x, bounds: ClipBounds = DEFAULT_BOUNDS):
    _, clipped, _ = _clipped_exp_neg(x, bounds)
    out = -np.log1p(clipped)
    return out[()] if np.ndim(out) == 0 else out


def log_one_minus_constrained_sigmoid(x, bounds: ClipBounds = DEFAULT_BOUNDS):
    """log(1 - S(x)) computed as log(clip / (1 + clip))."""
    _, clipped, _ = _clipped_exp_neg(x, bounds)
    out = np.log(clipped) - np.log1p(clipped)
    return out[()] if np.ndim(out) == 0 else out


def constrained_sigmoid_deriv(x, bounds: ClipBounds = DEFAULT_BOUNDS):
    """dS/dx = S(x)^2 * t * clip'(t) with t = e^(-x); zero once saturated."""
    t, clipped, saturated = _clipped_exp_neg(x, bounds)
    s = 1.0 / (1.0 + clipped)
    d = s * s * t * smooth_exp_clip_deriv(t, bounds)
    out = np.where(saturated, 0.0, d)
    return out[()] if out.ndim == 0 else out


def log_sigmoid_slope(x, bounds: ClipBounds | None = DEFAULT_BOUNDS):
    """d/dx log S(x) = S'(x) / S(x).

    With ``bounds=None`` the plain logistic sigmoid is used instead.
    """
    x = np.asarray(x, dtype=float)
    if bounds is None:
        out = 1.0 - _plain_sigmoid(x)
    else:
        t, clipped, saturated = _clipped_exp_neg(x, bounds)
        s = 1.0 / (1.0 + clipped)
        out = np.where(saturated, 0.0, s * t * smooth_exp_clip_deriv(t, bounds))
    return out[()] if out.ndim == 0 else out


def log_one_minus_slope(x, bounds: ClipBounds | None = DEFAULT_BOUNDS):
    """d/dx [-log(1 - S(x))] = S'(x) / (1 - S(x))."""
    x = np.asarray(x, dtype=float)
    if bounds is None:
        out = _plain_sigmoid(x)
    else:
        t, clipped, saturated = _clipped_exp_neg(x, bounds)
        # S' / (1 - S) = t clip'(t) / (clip (1 + clip))
        val = t * smooth_exp_clip_deriv(t, bounds) / (clipped * (1.0 + clipped))
        out = np.where(saturated, 0.0, val)
    return out[()] if out.ndim == 0 else out


def _plain_sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def sigmoid(x, bounds: ClipBounds | None = DEFAULT_BOUNDS):
    """Constrained sigmoid, or the plain logistic one when ``bounds`` is None."""
    if bounds is None:
        x = np.asarray(x, dtype=float)
        out = _plain_sigmoid(x)
        return out[()] if out.ndim == 0 else out
    return constrained_sigmoid(x, bounds)


def log_sigmoid(x, bounds: ClipBounds | None = DEFAULT_BOUNDS):
    if bounds is None:
        x = np.asarray(x, dtype=float)
        out = -np.logaddexp(0.0, -x)
        return out[()] if out.ndim == 0 else out
    return log_constrained_sigmoid(x, bounds)


def clip_l2(v, C: float):
    """Rescale ``v`` (or each row of a 2-D array) to L2 norm at most ``C``."""
    if C <= 0:
        raise ValueError("clip bound must be positive")
    v = np.asarray(v, dtype=float)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.maximum(1.0, norms / C)


def gaussian_vector(dim: int, std: float, rng: np.random.Generator, size=None):
    """I.i.d. N(0, std^2) draws of shape ``(dim,)`` or ``(size, dim)``."""
    if std < 0:
        raise ValueError("std must be non-negative")
    shape = (dim,) if size is None else (size, dim)
    if std == 0:
        return np.zeros(shape)
    return rng.normal(0.0, std, size=shape)
