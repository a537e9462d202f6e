"""Renyi-DP accounting for the Poisson-subsampled Gaussian mechanism.

Each round releases the sum of clipped agent updates plus Gaussian noise with
multiplier ``sigma``; agents join a round independently with probability
``p``. Per-round RDP at integer order ``a`` is

    log( sum_i C(a, i) (1-p)^(a-i) p^i exp((i^2 - i) / (2 sigma^2)) ) / (a - 1)

which reduces to ``a / (2 sigma^2)`` at ``p = 1``. Rounds compose additively
and the total is converted with ``eps = min_a [rdp(a) + log(1/delta) / (a - 1)]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import CalibrationError, ConfigError, QueryError

DEFAULT_ORDERS: tuple[int, ...] = tuple(range(2, 65)) + (80, 96, 128, 160, 192, 256, 320, 384, 448, 512)

SIGMA_RANGE = (0.1, 1e4)


def rdp_gaussian(sigma: float, alpha: float) -> float:
    """Renyi divergence of order ``alpha`` between N(0, sigma^2) and N(1, sigma^2)."""
    if alpha <= 1:
        raise ConfigError("Renyi order must be > 1")
    if not sigma > 0:
        raise ConfigError("sigma must be > 0")
    return alpha / (2.0 * sigma**2)


def _log_binom(n: int, k: np.ndarray) -> np.ndarray:
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def rdp_subsampled_gaussian(p: float, sigma: float, alpha: int) -> float:
    """RDP of the Poisson-subsampled Gaussian mechanism at an integer order.

    Orders below 2 are evaluated at order 2 (a valid, looser bound, since RDP
    is non-decreasing in the order).
    """
    if not 0 < p <= 1:
        raise ConfigError("sampling probability must lie in (0, 1]")
    if not sigma > 0:
        raise ConfigError("sigma must be > 0")
    if alpha < 2:
        alpha = 2
    if alpha != int(alpha):
        raise ConfigError("subsampled RDP is only defined here for integer orders")
    alpha = int(alpha)
    if p == 1.0:
        return rdp_gaussian(sigma, alpha)
    i = np.arange(alpha + 1, dtype=np.float64)
    log_terms = (
        _log_binom(alpha, i)
        + i * math.log(p)
        + (alpha - i) * math.log1p(-p)
        + (i * i - i) / (2.0 * sigma**2)
    )
    return max(0.0, float(logsumexp(log_terms)) / (alpha - 1))


def rdp_to_epsilon(rdp, orders, delta: float) -> tuple[float, float]:
    """Smallest ``eps`` over the order grid; returns ``(eps, best_order)``."""
    if not 0 < delta <= 1:
        raise ConfigError("delta must lie in (0, 1]")
    rdp = np.asarray(rdp, dtype=np.float64)
    orders = np.asarray(orders, dtype=np.float64)
    eps = rdp + math.log(1.0 / delta) / (orders - 1.0)
    k = int(np.argmin(eps))
    return max(0.0, float(eps[k])), float(orders[k])


@dataclass
class PrivacyLedger:
    """Running RDP total for a sequence of subsampled-Gaussian rounds.

    Rounds with identical ``(p, sigma)`` are stored as a count so that ``T``
    single records and one record of ``T`` rounds give the same answer.
    """

    delta: float
    orders: tuple[int, ...] = DEFAULT_ORDERS
    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        # delta = 1 is allowed so that single-agent runs can default to 1/N
        if not 0 < self.delta <= 1:
            raise ConfigError("delta must lie in (0, 1]")
        self._cache: dict = {}

    @property
    def rounds(self) -> int:
        return sum(self.entries.values())

    def record(self, sample_prob: float, sigma: float, rounds: int = 1) -> None:
        if rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if rounds == 0:
            return
        key = (float(sample_prob), float(sigma))
        self.entries[key] = self.entries.get(key, 0) + int(rounds)

    def _per_round(self, key) -> np.ndarray:
        if key not in self._cache:
            p, sigma = key
            if sigma == 0:
                self._cache[key] = np.full(len(self.orders), np.inf)
            else:
                self._cache[key] = np.array([rdp_subsampled_gaussian(p, sigma, a) for a in self.orders])
        return self._cache[key]

    def rdp(self) -> np.ndarray:
        total = np.zeros(len(self.orders))
        for key, count in self.entries.items():
            total = total + count * self._per_round(key)
        return total

    def epsilon(self) -> float:
        return compose_and_convert(self)


def compose_and_convert(ledger: PrivacyLedger) -> float:
    if not ledger.entries:
        raise QueryError("privacy ledger is empty")
    total = ledger.rdp()
    if not np.all(np.isfinite(total)):
        return math.inf
    return rdp_to_epsilon(total, ledger.orders, ledger.delta)[0]


def epsilon_for(sigma: float, delta: float, rounds: int, sample_prob: float, orders=DEFAULT_ORDERS) -> float:
    ledger = PrivacyLedger(delta, tuple(orders))
    ledger.record(sample_prob, sigma, rounds)
    return compose_and_convert(ledger)


@dataclass(frozen=True)
class CalibrationResult:
    sigma: float
    achieved_epsilon: float
    iterations: int


def calibrate_sigma(target_epsilon: float, delta: float, rounds: int, sample_prob: float,
                    tolerance: float = 0.005, max_iter: int = 200) -> CalibrationResult:
    """Smallest noise multiplier whose accounted epsilon does not exceed the target.

    Bisects on ``log(sigma)`` within ``[0.1, 1e4]``; epsilon is non-increasing in
    sigma. Stops once the achieved epsilon is within ``tolerance`` (relative)
    below the target.
    """
    if not target_epsilon > 0:
        raise ConfigError("target epsilon must be > 0")
    if rounds < 1:
        raise ConfigError("rounds must be >= 1")
    lo, hi = SIGMA_RANGE
    eps_hi = epsilon_for(hi, delta, rounds, sample_prob)
    if eps_hi > target_epsilon:
        raise CalibrationError(
            f"epsilon {target_epsilon} unreachable with sigma <= {hi:g} (best {eps_hi:.4g})"
        )
    eps_lo = epsilon_for(lo, delta, rounds, sample_prob)
    if eps_lo <= target_epsilon:
        return CalibrationResult(lo, eps_lo, 0)
    iterations = 0
    while iterations < max_iter and eps_hi < (1.0 - tolerance) * target_epsilon:
        iterations += 1
        mid = math.sqrt(lo * hi)
        eps_mid = epsilon_for(mid, delta, rounds, sample_prob)
        if eps_mid <= target_epsilon:
            hi, eps_hi = mid, eps_mid
        else:
            lo = mid
        if hi / lo - 1.0 < 1e-13:
            break
    return CalibrationResult(hi, eps_hi, iterations)
