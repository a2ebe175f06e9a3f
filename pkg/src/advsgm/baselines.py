"""Comparison trainers' update rules: SGM (no DP), DP-SGM and DP-ASGM.

All three share the sampling and ledger of AdvSGM; only the per-sample
gradient and the place where noise enters differ.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from advsgm.adversarial import (
    StepReport,
    accumulate_rows,
    adv_disc_grad,
    apply_sparse_update,
)
from advsgm.config import TrainConfig
from advsgm.numerics import ClipBounds, clip_l2
from advsgm.sampling import Batch
from advsgm.sgm import SgmSample, project_rows, sgm_grad

log = logging.getLogger(__name__)

LOSS_KINDS = ("sgm", "dp-sgm", "dp-asgm")


@dataclass(frozen=True)
class BaselineKind:
    kind: str
    fixed_lambda: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown baseline {self.kind!r}")
        if self.kind == "dp-asgm" and self.fixed_lambda < 0:
            raise ValueError("fixed_lambda must be non-negative")


def per_sample_gradients(batch: Batch, W_in, W_out, bounds: ClipBounds | None,
                         fixed_lambda: float = 0.0, fakes=None):
    """Per-sample gradients of ``-L_sgm + lambda * L_adv`` (adversarial noise-free)."""
    sample = SgmSample(batch.pairs[:, 0], batch.pairs[:, 1], batch.sign)
    g_i, g_j = sgm_grad(sample, W_in, W_out, bounds)
    if fixed_lambda and fakes is not None:
        fake_for_i, fake_for_j = fakes
        zero = np.zeros(W_in.shape[1])
        g_i = g_i + fixed_lambda * adv_disc_grad(W_in[sample.i], fake_for_i, zero, bounds)
        g_j = g_j + fixed_lambda * adv_disc_grad(W_out[sample.j], fake_for_j, zero, bounds)
    return sample, g_i, g_j


def dpsgd_batch_step(batch: Batch, loss_kind: str, W_in, W_out, C: float, sigma: float, eta: float,
                     rng: np.random.Generator, *, B: int | None = None, bounds: ClipBounds | None = None,
                     fixed_lambda: float = 1.0, fakes=None, clip: bool = True,
                     project: bool = False) -> StepReport:
    """Clip each per-sample gradient to ``C``, sum per row, add N(0, (B C sigma)^2)
    to every touched row, scale by 1/B and take an SGD step.

    ``loss_kind="sgm"`` skips clipping and noise entirely.
    """
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    if len(batch) == 0:
        log.warning("empty batch; step skipped")
        return StepReport(np.empty(0, int), np.empty(0, int))
    B = len(batch) if B is None else B
    lam = fixed_lambda if loss_kind == "dp-asgm" else 0.0
    if lam and fakes is None:
        raise ValueError("dp-asgm needs fake neighbours")
    sample, g_i, g_j = per_sample_gradients(batch, W_in, W_out, bounds, lam, fakes)
    if loss_kind == "sgm":
        clip, sigma = False, 0.0
    if clip:
        g_i, g_j = clip_l2(g_i, C), clip_l2(g_j, C)
    rows_in, sums_in = accumulate_rows(sample.i, g_i)
    rows_out, sums_out = accumulate_rows(sample.j, g_j)
    report = StepReport(rows_in, rows_out)
    norms = np.concatenate([np.linalg.norm(g_i, axis=1), np.linalg.norm(g_j, axis=1)])
    report.det_norm_max = float(norms.max())
    report.det_norm_mean = float(norms.mean())
    report.sum_norm_in = float(np.linalg.norm(g_i.sum(axis=0)))
    report.sum_norm_out = float(np.linalg.norm(g_j.sum(axis=0)))
    row_std = B * C * sigma
    apply_sparse_update(W_in, rows_in, sums_in, eta, 1.0 / B, row_std, rng)
    apply_sparse_update(W_out, rows_out, sums_out, eta, 1.0 / B, row_std, rng)
    if project:
        project_rows(W_in, rows_in)
        project_rows(W_out, rows_out)
    return report


def baseline_step(batch: Batch, W_in, W_out, config: TrainConfig, rng, fakes=None) -> StepReport:
    """Dispatch a baseline update from a :class:`TrainConfig`."""
    sigma = config.sigma if config.private else 0.0
    return dpsgd_batch_step(
        batch, config.algo, W_in, W_out, config.C, sigma, config.eta_d, rng,
        B=config.B, bounds=config.bounds, fixed_lambda=config.fixed_lambda, fakes=fakes,
        project=config.project_rows,
    )
