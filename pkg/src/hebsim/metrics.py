"""Closed-form evaluation metrics for the epoch mining game.

All functions are pure.  Binomial probabilities are computed in log space
and accumulated with compensated summation so that epoch lengths up to 10^4
stay accurate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

_SHARE_SUM_TOL = 1e-12


@dataclass(frozen=True)
class BalanceDistribution:
    """Relative miner balances; positive shares summing to 1."""

    shares: tuple[float, ...]

    def __init__(self, shares: Iterable[float]):
        object.__setattr__(self, "shares", tuple(float(s) for s in shares))
        if not self.shares:
            raise ValueError("shares must be non-empty")
        if any(s <= 0 for s in self.shares):
            raise ValueError("shares must be positive")
        if abs(sum(self.shares) - 1.0) > _SHARE_SUM_TOL:
            raise ValueError("shares must sum to 1")

    def __len__(self) -> int:
        return len(self.shares)


@dataclass
class MetricReport:
    """Bundle of all protocol metrics for one parameter point."""

    epsilon: float
    expected_weights: list[float]
    normalized_weights: list[float]
    permissiveness: list[float]
    pow_only_bound: float
    attack_cost_refunded: float
    attack_cost_sabotage: float
    external_expense: float
    redistribution_bound: float = 0.0
    shares: list[float] = field(default_factory=list)


def binom_logpmf(n: int, trials: int, p: float) -> float:
    if n < 0 or n > trials:
        return -math.inf
    if p <= 0.0:
        return 0.0 if n == 0 else -math.inf
    if p >= 1.0:
        return 0.0 if n == trials else -math.inf
    return (
        math.lgamma(trials + 1)
        - math.lgamma(n + 1)
        - math.lgamma(trials - n + 1)
        + n * math.log(p)
        + (trials - n) * math.log1p(-p)
    )


def binom_pmf(n: int, trials: int, p: float) -> float:
    lp = binom_logpmf(n, trials, p)
    return 0.0 if lp == -math.inf else math.exp(lp)


def conditional_weight(
    n: int, share: float, epoch_len: int, factor: float, allow_fractional: bool = False
) -> float:
    """Accumulated block weight of a miner that created ``n`` of the epoch's
    blocks while holding relative balance ``share``.

    The first ``epoch_len * share`` blocks are factored (weight ``factor``),
    the remainder regular (weight 1).
    """
    if not 0 <= n <= epoch_len:
        raise ValueError(f"block count {n} outside [0, {epoch_len}]")
    quota = epoch_len * share
    if not allow_fractional:
        if abs(quota - round(quota)) > 1e-9:
            raise ValueError(
                f"epoch_len * share = {quota} is not integral; "
                "pass allow_fractional=True to floor it"
            )
        quota = round(quota)
    else:
        quota = math.floor(quota + 1e-9)
    if n <= quota:
        return n * factor
    return quota * factor + n - quota


def expected_weight(
    share: float, epoch_len: int, factor: float, allow_fractional: bool = False
) -> float:
    """E[accumulated weight] when the miner's block count is Bin(epoch_len, share)."""
    terms = [
        binom_pmf(n, epoch_len, share)
        * conditional_weight(n, share, epoch_len, factor, allow_fractional)
        for n in range(epoch_len + 1)
    ]
    return math.fsum(terms)


def epsilon(
    dist: BalanceDistribution | Sequence[float],
    epoch_len: int,
    factor: float,
    allow_fractional: bool = False,
) -> float:
    """Maximal gap between a miner's relative balance and her relative
    expected reward when everyone follows the prescribed strategy."""
    if not isinstance(dist, BalanceDistribution):
        dist = BalanceDistribution(dist)
    ews = [
        expected_weight(s, epoch_len, factor, allow_fractional) for s in dist.shares
    ]
    total = math.fsum(ews)
    return max(abs(s - ew / total) for s, ew in zip(dist.shares, ews))


def normalized_weight(
    share: float, epoch_len: int, factor: float, allow_fractional: bool = False
) -> float:
    """Expected weight per unit of relative balance, scaled by 1/(epoch_len*factor).

    Tends to 1 as the epoch length grows; equal values across miners are
    equivalent to a zero size-indifference gap.
    """
    ew = expected_weight(share, epoch_len, factor, allow_fractional)
    return ew / share / (epoch_len * factor)


def normalized_weight_curve(
    shares: Sequence[float],
    epoch_lens: Sequence[int] | None = None,
    factors: Sequence[float] | None = None,
    epoch_len: int | None = None,
    factor: float | None = None,
    allow_fractional: bool = True,
) -> list[tuple[float, float, float]]:
    """Grid of normalized weights, one of (epoch length, factor) swept.

    Returns rows ``(x, share, value)`` where ``x`` iterates the swept grid.
    """
    if (epoch_lens is None) == (factors is None):
        raise ValueError("exactly one of epoch_lens / factors must be given")
    rows = []
    if epoch_lens is not None:
        assert factor is not None, "fixed factor required when sweeping epoch length"
        for ell in epoch_lens:
            for s in shares:
                rows.append(
                    (float(ell), s, normalized_weight(s, ell, factor, allow_fractional))
                )
    else:
        assert epoch_len is not None, "fixed epoch_len required when sweeping factor"
        for f in factors:
            for s in shares:
                rows.append(
                    (float(f), s, normalized_weight(s, epoch_len, f, allow_fractional))
                )
    return rows


def pow_only_bound(rho: float) -> float:
    """Relative balance above which mining everything privately on external
    resources alone beats the prescribed strategy: (1-rho)/(2-rho)."""
    if not 0 <= rho < 1:
        raise ValueError("rho must lie in [0, 1)")
    return (1.0 - rho) / (2.0 - rho)


def permissiveness(share: float, factor: float) -> float:
    """Utility ratio of a joining miner denied internal tokens to one with
    them: 1/(share + factor*(1-share)).  Equals 1 for factor 1."""
    if not 0 < share <= 1:
        raise ValueError("share must lie in (0, 1]")
    if factor < 1:
        raise ValueError("factor must be >= 1")
    return 1.0 / (share + factor * (1.0 - share))


def attack_costs(rho: float) -> tuple[float, float]:
    """Per-block cost of a chain-reorganization attack, with the attacker's
    blocks earning main-chain rewards (refunded) or discarded (sabotage)."""
    if not 0 <= rho < 1:
        raise ValueError("rho must lie in [0, 1)")
    return 1.0, 1.0 - rho


def external_expense(rho: float, protocol: str = "heb") -> float:
    """External (physical) expenditure per block under prescribed play."""
    if not 0 <= rho < 1:
        raise ValueError("rho must lie in [0, 1)")
    if protocol in ("nakamoto", "nakamoto_half"):
        return 1.0
    if protocol in ("heb", "heb_mandatory", "prd"):
        return 1.0 - rho
    raise ValueError(f"unknown protocol {protocol!r}")


def binomial_tail(
    epoch_len: int, share: float, rel_err: float
) -> tuple[float, float]:
    """Exact lower/upper tail mass of Bin(epoch_len, share) at a relative
    deviation of ``rel_err`` around the mean.

    Returns ``(P[n <= mean*(1-rel_err)], P[n >= mean*(1+rel_err)])``.
    """
    if not 0 < rel_err < 1:
        raise ValueError("rel_err must lie in (0, 1)")
    mean = epoch_len * share
    lo_cut = math.floor(mean * (1.0 - rel_err) + 1e-12)
    hi_cut = math.ceil(mean * (1.0 + rel_err) - 1e-12)
    lower = math.fsum(binom_pmf(n, epoch_len, share) for n in range(0, lo_cut + 1))
    upper = math.fsum(
        binom_pmf(n, epoch_len, share) for n in range(hi_cut, epoch_len + 1)
    )
    return lower, upper


def redistribution_bound(
    miner_internal_total: Fraction | float, user_balance: Fraction | float
) -> float:
    """Upper bound on the total redistribution received back by miners,
    quantifying the quality of dropping that term from utility formulas."""
    m = float(miner_internal_total)
    u = float(user_balance)
    if m < 0 or u <= 0:
        raise ValueError("need miner internal >= 0 and user balance > 0")
    return m * m / (m + u)


def build_report(
    dist: BalanceDistribution | Sequence[float],
    epoch_len: int,
    factor: float,
    rho: float,
    user_balance: float = 1e6,
    allow_fractional: bool = False,
) -> MetricReport:
    if not isinstance(dist, BalanceDistribution):
        dist = BalanceDistribution(dist)
    ews = [
        expected_weight(s, epoch_len, factor, allow_fractional) for s in dist.shares
    ]
    refunded, sabotage = attack_costs(rho)
    internal_total = rho * epoch_len  # prescribed allocation, unit mint
    return MetricReport(
        epsilon=epsilon(dist, epoch_len, factor, allow_fractional),
        expected_weights=ews,
        normalized_weights=[
            ew / s / (epoch_len * factor) for s, ew in zip(dist.shares, ews)
        ],
        permissiveness=[permissiveness(s, factor) for s in dist.shares],
        pow_only_bound=pow_only_bound(rho),
        attack_cost_refunded=refunded,
        attack_cost_sabotage=sabotage,
        external_expense=external_expense(rho),
        redistribution_bound=redistribution_bound(internal_total, user_balance),
        shares=list(dist.shares),
    )
