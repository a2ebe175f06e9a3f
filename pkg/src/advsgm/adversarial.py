"""Generator and noisy adversarial discriminator terms.

The discriminator minimises ``-L_sgm + lambda_1 L_adv1 + lambda_2 L_adv2``.
Setting ``lambda = 1 / S(.)`` cancels the sigmoid factor in the adversarial
gradient, so each per-sample gradient becomes

    clip(d(-L_sgm)/dv_i + v_fake_for_i, C) + n_D1

and the Gaussian noise carried inside the adversarial activation is what
privatises the update.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from advsgm.config import TrainConfig
from advsgm.numerics import (
    DEFAULT_BOUNDS,
    ClipBounds,
    clip_l2,
    constrained_sigmoid,
    constrained_sigmoid_deriv,
    gaussian_vector,
    log_one_minus_constrained_sigmoid,
    log_one_minus_slope,
)
from advsgm.sampling import Batch
from advsgm.sgm import SgmSample, project_rows, sgm_grad

log = logging.getLogger(__name__)


@dataclass
class GeneratorParams:
    theta_for_vj_fake: np.ndarray  # produces fake context neighbours v_j'
    theta_for_vi_fake: np.ndarray  # produces fake input neighbours v_i'
    sigma_g: float = 1.0

    def __post_init__(self):
        for theta in (self.theta_for_vj_fake, self.theta_for_vi_fake):
            if theta.ndim != 2 or theta.shape[0] != theta.shape[1]:
                raise ValueError("generator matrices must be square")
            if not np.all(np.isfinite(theta)):
                raise ValueError("generator matrices must be finite")
        if not self.sigma_g >= 0:
            raise ValueError("sigma_g must be non-negative")

    @classmethod
    def init(cls, r: int, rng: np.random.Generator, sigma_g: float = 1.0) -> "GeneratorParams":
        scale = 1.0 / np.sqrt(r)
        return cls(rng.normal(0, scale, (r, r)), rng.normal(0, scale, (r, r)), sigma_g)

    def copy(self) -> "GeneratorParams":
        return GeneratorParams(self.theta_for_vj_fake.copy(), self.theta_for_vi_fake.copy(), self.sigma_g)


@dataclass(frozen=True)
class StepNoise:
    n_D1: np.ndarray
    n_D2: np.ndarray
    std: float

    @classmethod
    def draw(cls, r: int, C: float, sigma: float, rng: np.random.Generator) -> "StepNoise":
        std = C * sigma
        return cls(gaussian_vector(r, std, rng), gaussian_vector(r, std, rng), std)

    @classmethod
    def zero(cls, r: int) -> "StepNoise":
        return cls(np.zeros(r), np.zeros(r), 0.0)


def generate_fake_neighbor(theta, sigma_g, rng, bounds: ClipBounds = DEFAULT_BOUNDS, size=None):
    """S(z @ theta) with z ~ N(0, sigma_g^2 I); one fresh z per row if ``size``."""
    r = theta.shape[0]
    z = gaussian_vector(r, sigma_g, rng, size=size)
    return constrained_sigmoid(z @ theta, bounds)


def _adv_arg(v, v_fake, n):
    return np.sum(v * v_fake, axis=-1) + np.sum(n * v, axis=-1)


def adv_disc_loss(v_i, v_fake, n, bounds: ClipBounds = DEFAULT_BOUNDS):
    """-log(1 - S(v_i . v_fake + n . v_i))."""
    return -log_one_minus_constrained_sigmoid(_adv_arg(v_i, v_fake, n), bounds)


def adv_disc_grad(v_i, v_fake, n, bounds: ClipBounds = DEFAULT_BOUNDS):
    """Exact gradient of :func:`adv_disc_loss` with respect to ``v_i``."""
    z = _adv_arg(v_i, v_fake, n)
    return log_one_minus_slope(z, bounds)[..., None] * (v_fake + n)


def lambda_weight(v_real, v_fake, n, bounds: ClipBounds = DEFAULT_BOUNDS):
    return 1.0 / constrained_sigmoid(_adv_arg(v_real, v_fake, n), bounds)


def perturbed_pair_gradient(sample: SgmSample, v_fake_for_i, v_fake_for_j, noise: StepNoise,
                            W_in, W_out, C: float, bounds: ClipBounds = DEFAULT_BOUNDS):
    """Per-sample discriminator gradients after the lambda cancellation."""
    det_i, det_j = deterministic_parts(sample, v_fake_for_i, v_fake_for_j, W_in, W_out, C, bounds)
    return det_i + noise.n_D1, det_j + noise.n_D2


def deterministic_parts(sample, v_fake_for_i, v_fake_for_j, W_in, W_out, C, bounds):
    """The clipped, noise-free part of each per-sample gradient (norm <= C)."""
    g_i, g_j = sgm_grad(sample, W_in, W_out, bounds)
    return clip_l2(g_i + v_fake_for_i, C), clip_l2(g_j + v_fake_for_j, C)


@dataclass
class StepReport:
    touched_in: np.ndarray
    touched_out: np.ndarray
    det_norm_max: float = 0.0
    det_norm_mean: float = 0.0
    sum_norm_in: float = 0.0
    sum_norm_out: float = 0.0
    lambda_mean: float = float("nan")
    extra: dict = field(default_factory=dict)


def accumulate_rows(rows, grads, num_rows=None):
    """Sum per-sample gradients into one accumulator per distinct row.

    Returns ``(unique_rows, sums)`` with rows in ascending order, so the
    reduction order is deterministic.
    """
    rows = np.asarray(rows)
    uniq, inv = np.unique(rows, return_inverse=True)
    sums = np.zeros((len(uniq), grads.shape[1]))
    np.add.at(sums, inv, grads)
    return uniq, sums


def apply_sparse_update(W, rows, sums, eta, scale, row_noise_std, rng):
    """W[rows] -= eta * scale * (sums + N(0, row_noise_std^2 I) per row)."""
    if row_noise_std > 0:
        sums = sums + rng.normal(0.0, row_noise_std, size=sums.shape)
    W[rows] -= eta * scale * sums


def discriminator_step(batch: Batch, W_in, W_out, gen: GeneratorParams, config: TrainConfig,
                       rng: np.random.Generator, fakes=None) -> StepReport:
    """One noisy discriminator update on ``batch`` (in place on W_in / W_out).

    ``rng`` drives the DP noise; ``fakes`` is an optional pair
    ``(v_fake_for_i, v_fake_for_j)`` of ``(len(batch), r)`` arrays, generated
    from ``rng`` when omitted.

    ``config.noise_placement`` selects where the Gaussian noise enters:

    * ``"sample"``: one ``StepNoise`` (std C*sigma) is drawn per step and each
      per-sample gradient carries it, so a row touched by m samples gets
      ``m * n_D``; over the whole batch the noise sums to ``B * n_D``.
    * ``"row"``: every touched row accumulator gets independent noise with
      std B*C*sigma.
    """
    r = W_in.shape[1]
    if len(batch) == 0:
        log.warning("empty batch; discriminator step skipped")
        return StepReport(np.empty(0, int), np.empty(0, int))
    bounds = ClipBounds(config.a, config.b)
    sigma = config.sigma if config.private else 0.0
    C, B = config.C, config.B

    noise = StepNoise.draw(r, C, sigma, rng) if config.noise_placement == "sample" else StepNoise.zero(r)
    if fakes is None:
        m = len(batch)
        fakes = (
            generate_fake_neighbor(gen.theta_for_vj_fake, gen.sigma_g, rng, bounds, size=m),
            generate_fake_neighbor(gen.theta_for_vi_fake, gen.sigma_g, rng, bounds, size=m),
        )
    fake_for_i, fake_for_j = fakes

    sample = SgmSample(batch.pairs[:, 0], batch.pairs[:, 1], batch.sign)
    det_i, det_j = deterministic_parts(sample, fake_for_i, fake_for_j, W_in, W_out, C, bounds)
    rows_in, sums_in = accumulate_rows(sample.i, det_i)
    rows_out, sums_out = accumulate_rows(sample.j, det_j)

    report = StepReport(rows_in, rows_out)
    norms = np.concatenate([np.linalg.norm(det_i, axis=1), np.linalg.norm(det_j, axis=1)])
    report.det_norm_max = float(norms.max())
    report.det_norm_mean = float(norms.mean())
    report.sum_norm_in = float(np.linalg.norm(det_i.sum(axis=0)))
    report.sum_norm_out = float(np.linalg.norm(det_j.sum(axis=0)))
    report.lambda_mean = float(np.mean(lambda_weight(W_in[sample.i], fake_for_i, noise.n_D1, bounds)))

    if config.noise_placement == "sample":
        counts_in = np.bincount(np.unique(sample.i, return_inverse=True)[1])
        counts_out = np.bincount(np.unique(sample.j, return_inverse=True)[1])
        sums_in = sums_in + counts_in[:, None] * noise.n_D1
        sums_out = sums_out + counts_out[:, None] * noise.n_D2
        row_std = 0.0
    else:
        row_std = B * C * sigma
    apply_sparse_update(W_in, rows_in, sums_in, config.eta_d, 1.0 / B, row_std, rng)
    apply_sparse_update(W_out, rows_out, sums_out, config.eta_d, 1.0 / B, row_std, rng)
    if config.project_rows:
        project_rows(W_in, rows_in)
        project_rows(W_out, rows_out)
    return report


def generator_loss_and_grad(samples, W_in, W_out, gen: GeneratorParams, rng: np.random.Generator,
                            bounds: ClipBounds = DEFAULT_BOUNDS, noise_std: float = 0.0):
    """Generator objective and its gradient w.r.t. both generator matrices.

    ``samples`` is an ``(m, 2)`` array of real (i, j) pairs. Draw order from
    ``rng``: z for v_j' (m x r), z for v_i' (m x r), then n_G1 and n_G2
    (std ``noise_std``, shared by the step). Embeddings are read only.

    Returns ``(loss, grad_theta_for_vj_fake, grad_theta_for_vi_fake)``.
    """
    samples = np.asarray(samples).reshape(-1, 2)
    m = len(samples)
    r = W_in.shape[1]
    v_i = W_in[samples[:, 0]]
    v_j = W_out[samples[:, 1]]
    z1 = gaussian_vector(r, gen.sigma_g, rng, size=m)
    z2 = gaussian_vector(r, gen.sigma_g, rng, size=m)
    n1 = gaussian_vector(r, noise_std, rng)
    n2 = gaussian_vector(r, noise_std, rng)

    u1 = z1 @ gen.theta_for_vj_fake
    u2 = z2 @ gen.theta_for_vi_fake
    fake_j = constrained_sigmoid(u1, bounds)
    fake_i = constrained_sigmoid(u2, bounds)
    q1 = _adv_arg(v_i, fake_j, n1)
    q2 = _adv_arg(v_j, fake_i, n2)
    loss = float(np.mean(log_one_minus_constrained_sigmoid(q1, bounds)
                         + log_one_minus_constrained_sigmoid(q2, bounds)))

    dq1 = -log_one_minus_slope(q1, bounds)[:, None]
    dq2 = -log_one_minus_slope(q2, bounds)[:, None]
    du1 = dq1 * v_i * constrained_sigmoid_deriv(u1, bounds)
    du2 = dq2 * v_j * constrained_sigmoid_deriv(u2, bounds)
    return loss, z1.T @ du1 / m, z2.T @ du2 / m


def generator_step(samples, W_in, W_out, gen: GeneratorParams, config: TrainConfig,
                   rng: np.random.Generator) -> float:
    """One gradient-descent step on the generator objective; returns the loss."""
    bounds = ClipBounds(config.a, config.b)
    noise_std = config.C * config.sigma if config.private else 0.0
    loss, g_out, g_in = generator_loss_and_grad(samples, W_in, W_out, gen, rng, bounds, noise_std)
    gen.theta_for_vj_fake -= config.eta_g * g_out
    gen.theta_for_vi_fake -= config.eta_g * g_in
    return loss
