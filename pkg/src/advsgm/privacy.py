"""Renyi-DP accountant for the subsampled Gaussian mechanism.

Per-step spend uses the without-replacement subsampling bound (integer
orders only), composition is additive per order, and conversion to
(eps, delta)-DP takes the best order on the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import gammaln, logsumexp

DEFAULT_ALPHAS = tuple(range(2, 65))
NO_LIMIT = -1  # returned by max_steps when the spend never grows


def gaussian_rdp(alpha: float, sensitivity: float, noise_std: float) -> float:
    """alpha * sensitivity^2 / (2 noise_std^2); inf when noise_std == 0."""
    if alpha <= 1:
        raise ValueError("RDP order must exceed 1")
    if sensitivity < 0 or noise_std < 0:
        raise ValueError("sensitivity and noise_std must be non-negative")
    if noise_std == 0:
        return math.inf if sensitivity > 0 else 0.0
    return alpha * sensitivity**2 / (2.0 * noise_std**2)


@dataclass(frozen=True)
class RdpCurve:
    eps_at: Callable[[float], float]
    eps_at_infinity: float = math.inf
    # identifies the curve for caching; two curves with equal keys must agree
    key: tuple = ()

    @classmethod
    def gaussian(cls, noise_multiplier: float) -> "RdpCurve":
        """Sensitivity-1 Gaussian with std ``noise_multiplier``.

        A step with sensitivity B*C and noise std B*C*sigma has this curve
        with ``noise_multiplier = sigma``.
        """
        if not noise_multiplier > 0:
            raise ValueError("noise multiplier must be positive")
        return cls(lambda a: gaussian_rdp(a, 1.0, noise_multiplier), math.inf, ("gaussian", noise_multiplier))


def _log_comb(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def subsampled_rdp(alpha: int, gamma: float, base: RdpCurve) -> float:
    """RDP of ``base`` applied to a uniform without-replacement subsample.

    Evaluated in log space: every term of the sum is formed from its log and
    combined with log-sum-exp, so large orders do not overflow.
    """
    if int(alpha) != alpha or alpha < 2:
        raise ValueError("subsampled bound needs an integer order >= 2")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"sampling probability {gamma} outside [0, 1]")
    alpha = int(alpha)
    if gamma == 0.0:
        return 0.0
    log_gamma = math.log(gamma)
    eps2 = base.eps_at(2)
    eps_inf = base.eps_at_infinity

    # (e^eps(inf) - 1)^j in log form; for the Gaussian eps(inf) = inf so the
    # min{2, .} branches always pick 2 and min{4(e^eps2 - 1), e^eps2 * 2}.
    log_em1_inf = math.inf if math.isinf(eps_inf) else (math.log(math.expm1(eps_inf)) if eps_inf > 0 else -math.inf)

    log_two = math.log(2.0)
    second = min(
        math.log(4.0) + math.log(math.expm1(eps2)) if eps2 > 0 else -math.inf,
        eps2 + min(log_two, 2.0 * log_em1_inf),
    )
    terms = [2.0 * log_gamma + _log_comb(alpha, 2) + second]
    for j in range(3, alpha + 1):
        terms.append(
            j * log_gamma + _log_comb(alpha, j) + (j - 1) * base.eps_at(j) + min(log_two, j * log_em1_inf)
        )
    total = logsumexp(terms)
    bound = float(np.logaddexp(0.0, total)) / (alpha - 1)
    # Subsampling never weakens privacy, so the unsampled curve is also a
    # valid bound; the expansion above exceeds it once gamma nears 1.
    return min(bound, base.eps_at(alpha))


_STEP_CACHE: dict = {}
_STEP_CACHE_SIZE = 256


def step_spend(alphas, gamma: float, base: RdpCurve) -> np.ndarray:
    """Vector of subsampled RDP over ``alphas`` (cached, read-only, for keyed curves)."""
    alphas = tuple(int(a) for a in alphas)
    if not base.key:
        return np.array([subsampled_rdp(a, gamma, base) for a in alphas])
    cache_key = (alphas, float(gamma), base.key)
    out = _STEP_CACHE.get(cache_key)
    if out is None:
        out = np.array([subsampled_rdp(a, gamma, base) for a in alphas])
        out.setflags(write=False)
        if len(_STEP_CACHE) >= _STEP_CACHE_SIZE:
            _STEP_CACHE.pop(next(iter(_STEP_CACHE)))
        _STEP_CACHE[cache_key] = out
    return out


@dataclass
class PrivacyLedger:
    alpha_grid: tuple = DEFAULT_ALPHAS
    target_eps: float | None = None
    target_delta: float = 1e-5
    spent: np.ndarray = field(default=None)
    steps_recorded: int = 0

    def __post_init__(self):
        self.alpha_grid = tuple(int(a) for a in self.alpha_grid)
        if not self.alpha_grid or min(self.alpha_grid) < 2:
            raise ValueError("alpha grid must be non-empty integers >= 2")
        if self.spent is None:
            self.spent = np.zeros(len(self.alpha_grid))
        else:
            self.spent = np.asarray(self.spent, dtype=float).copy()

    def copy(self) -> "PrivacyLedger":
        return PrivacyLedger(self.alpha_grid, self.target_eps, self.target_delta, self.spent, self.steps_recorded)

    def to_dict(self) -> dict:
        return {
            "alpha_grid": list(self.alpha_grid),
            "target_eps": self.target_eps,
            "target_delta": self.target_delta,
            "spent": [float(x) for x in self.spent],
            "steps_recorded": self.steps_recorded,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PrivacyLedger":
        return cls(tuple(d["alpha_grid"]), d["target_eps"], d["target_delta"], np.array(d["spent"]), d["steps_recorded"])


def record_step(ledger: PrivacyLedger, gamma_pos: float, gamma_neg: float, base: RdpCurve) -> None:
    """Add one positive and one negative subsampled spend to every order."""
    inc = step_spend(ledger.alpha_grid, gamma_pos, base) + step_spend(ledger.alpha_grid, gamma_neg, base)
    ledger.spent = ledger.spent + inc
    ledger.steps_recorded += 1


def to_dp(ledger: PrivacyLedger, delta: float) -> tuple[float, int]:
    """Best (eps, alpha) over the grid for the given delta."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    alphas = np.array(ledger.alpha_grid, dtype=float)
    eps = ledger.spent + math.log(1.0 / delta) / (alphas - 1.0)
    best = int(np.argmin(eps))
    return float(eps[best]), ledger.alpha_grid[best]


def delta_hat(ledger: PrivacyLedger, target_eps: float, spent=None) -> float:
    """Smallest delta certified for ``target_eps`` on the grid, clamped to [0, 1]."""
    if not target_eps > 0:
        raise ValueError("target_eps must be positive")
    spent = ledger.spent if spent is None else spent
    alphas = np.array(ledger.alpha_grid, dtype=float)
    with np.errstate(over="ignore"):
        deltas = np.exp(-(alphas - 1.0) * (target_eps - spent))
    return float(np.clip(deltas.min(), 0.0, 1.0))


def max_steps(sigma: float, gamma_pos: float, gamma_neg: float, target_eps: float,
              target_delta: float, alpha_grid=DEFAULT_ALPHAS, limit: int = 10_000_000) -> int:
    """Number of ledger entries the trainer can record before the budget stops it.

    Entries alternate positive (``gamma_pos``) and negative (``gamma_neg``)
    batches, mirroring the trainer, which checks the budget before each
    batch and refuses any batch that would push delta_hat to ``target_delta``
    or beyond. Returns :data:`NO_LIMIT` if neither batch ever spends.
    """
    ledger = PrivacyLedger(alpha_grid, target_eps, target_delta)
    curve = RdpCurve.gaussian(sigma)
    inc_pos = step_spend(ledger.alpha_grid, gamma_pos, curve)
    inc_neg = step_spend(ledger.alpha_grid, gamma_neg, curve)
    if not inc_pos.any() and not inc_neg.any():
        return NO_LIMIT
    n = 0
    spent = ledger.spent
    while n < limit:
        inc = inc_pos if n % 2 == 0 else inc_neg
        if delta_hat(ledger, target_eps, spent + inc) >= target_delta:
            return n
        spent = spent + inc
        n += 1
    return n


def spend_table(ledger: PrivacyLedger, delta: float) -> list[tuple[int, float, float]]:
    """Rows of (alpha, spent(alpha), eps at delta via that alpha)."""
    return [
        (a, float(s), float(s + math.log(1.0 / delta) / (a - 1)))
        for a, s in zip(ledger.alpha_grid, ledger.spent)
    ]
