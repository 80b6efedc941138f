"""Reward (balance) functions and prescribed strategies.

Protocols: ``nakamoto``, ``nakamoto_half``, ``prd`` (proportional
redistribution of the mint), ``heb`` (weighted block types with internal
expenditure), and ``heb_mandatory`` (internal expenditure required for every
block).

Strategies: ``prescribed``, ``petty_compliant`` (tie-breaks longest chains
toward minimum accumulated weight), ``pow_only`` (withholds a full private
epoch), and ``no_ic`` (prescribed play without access to internal currency).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional

from hebsim.chain import Chain, EpochParams, FACTORED, REGULAR, epoch_stats
from hebsim.engine import Allocation, MinerView


@dataclass
class BalanceOutcome:
    """Split of an epoch's token flows: freshly minted rewards per miner,
    redistributed internal expenses per miner, and the user share."""

    minted: dict[str, Fraction]
    redistributed: dict[str, Fraction]
    user_payout: Fraction


@dataclass(frozen=True)
class QuotaState:
    """Per-miner block-creation quota.  ``None`` means unlimited.

    ``mode`` is ``"factored"`` when only factored blocks consume quota and
    ``"count"`` when every block does (mandatory internal expenditure).
    """

    limits: dict[str, Optional[int]]
    mode: str = "factored"

    def remaining(self, miner_id: str, used: int) -> Optional[int]:
        limit = self.limits.get(miner_id)
        return None if limit is None else limit - used


def quota_limit(internal: Fraction, params: EpochParams) -> Optional[int]:
    """Factored blocks purchasable by an internal commitment; None if rho=0."""
    if params.rho == 0:
        return None
    return int(Fraction(internal) / (params.rho * params.mint))


def mandatory_validity(used: int, limit: Optional[int]) -> bool:
    """Whether a miner with ``used`` blocks already on the chain may create
    another under mandatory internal expenditure."""
    return limit is None or used < limit


# -- balance functions ---------------------------------------------------------------


def nakamoto_balance(
    chain: Chain,
    k: int,
    params: EpochParams,
    allocations: dict[str, Allocation],
    miner_ids: list[str],
    mint_scale: Fraction = Fraction(1),
) -> BalanceOutcome:
    """Each miner earns ``mint`` tokens per block she placed on the chain."""
    stats = epoch_stats(chain, k, params)
    mint = params.mint * mint_scale
    minted = {m: stats.get(m, (0, Fraction(0)))[0] * mint for m in miner_ids}
    return BalanceOutcome(minted, {m: Fraction(0) for m in miner_ids}, Fraction(0))


def nakamoto_half_balance(
    chain, k, params, allocations, miner_ids
) -> BalanceOutcome:
    return nakamoto_balance(
        chain, k, params, allocations, miner_ids, mint_scale=Fraction(1, 2)
    )


def prd_balance(chain, k, params, allocations, miner_ids) -> BalanceOutcome:
    """Creator keeps ``(1-rho)*mint`` per block; the remaining ``rho*mint``
    per block is shared pro rata among all token holders."""
    stats = epoch_stats(chain, k, params)
    keep = (1 - params.rho) * params.mint
    minted = {m: stats.get(m, (0, Fraction(0)))[0] * keep for m in miner_ids}
    pool = params.rho * params.mint * params.epoch_len
    holders_total = params.user_balance + sum(
        (allocations[m].internal for m in miner_ids), Fraction(0)
    )
    redistributed = {
        m: pool * allocations[m].internal / holders_total for m in miner_ids
    }
    user_payout = pool * params.user_balance / holders_total
    return BalanceOutcome(minted, redistributed, user_payout)


def heb_balance(chain, k, params, allocations, miner_ids) -> BalanceOutcome:
    """Mint shared proportionally to contributed block weights; internal
    expenses redistributed among all entities by token holdings."""
    stats = epoch_stats(chain, k, params)
    total_weight = sum((w for _, w in stats.values()), Fraction(0))
    if total_weight == 0:
        raise ArithmeticError("epoch carries zero total weight")
    mint_total = params.mint * params.epoch_len
    minted = {
        m: stats.get(m, (0, Fraction(0)))[1] * mint_total / total_weight
        for m in miner_ids
    }
    internal_total = sum(
        (allocations[m].internal for m in miner_ids), Fraction(0)
    )
    denom = internal_total + params.user_balance
    redistributed = {
        m: internal_total * allocations[m].internal / denom for m in miner_ids
    }
    user_payout = internal_total * params.user_balance / denom
    return BalanceOutcome(minted, redistributed, user_payout)


def mandatory_balance(chain, k, params, allocations, miner_ids) -> BalanceOutcome:
    """Single block type: mint shared by block counts, internal expenses
    redistributed as in the weighted protocol."""
    stats = epoch_stats(chain, k, params)
    mint = params.mint
    minted = {m: stats.get(m, (0, Fraction(0)))[0] * mint for m in miner_ids}
    internal_total = sum(
        (allocations[m].internal for m in miner_ids), Fraction(0)
    )
    denom = internal_total + params.user_balance
    redistributed = {
        m: internal_total * allocations[m].internal / denom for m in miner_ids
    }
    user_payout = internal_total * params.user_balance / denom
    return BalanceOutcome(minted, redistributed, user_payout)


# -- strategies -----------------------------------------------------------------------


def _uniform_tip(view: MinerView, tips: list[int]) -> int:
    if len(tips) == 1:
        return tips[0]
    return tips[int(view.rng.integers(len(tips)))]


class PrescribedNakamoto:
    """Spend everything externally, extend a uniformly chosen longest chain
    with a regular block, publish immediately."""

    def allocate(self, balance, params) -> Allocation:
        return Allocation(Fraction(0), Fraction(balance))

    def generate_block(self, view: MinerView):
        return _uniform_tip(view, view.public_tips()), REGULAR

    def publish(self, view: MinerView):
        return sorted(view.local)


class PrescribedHeb:
    """Allocate ratio rho internally, extend a uniformly chosen longest
    chain, create factored blocks while quota remains, publish immediately."""

    def allocate(self, balance, params) -> Allocation:
        balance = Fraction(balance)
        return Allocation(params.rho * balance, (1 - params.rho) * balance)

    def _pick_tip(self, view: MinerView) -> int:
        return _uniform_tip(view, view.public_tips())

    def generate_block(self, view: MinerView):
        tip = self._pick_tip(view)
        limit = view.quota_limit
        if limit is None or view.factored_used(tip) < limit:
            return tip, FACTORED
        return tip, REGULAR

    def publish(self, view: MinerView):
        return sorted(view.local)


class PettyCompliant(PrescribedHeb):
    """Prescribed play, except ties among longest chains are broken toward
    the minimum accumulated weight (uniformly within exact weight ties)."""

    def _pick_tip(self, view: MinerView) -> int:
        tips = view.public_tips()
        if len(tips) == 1:
            return tips[0]
        weights = [view.store.path_weight(t, view.params.factor) for t in tips]
        lightest = min(weights)
        candidates = [t for t, w in zip(tips, weights) if w == lightest]
        return _uniform_tip(view, candidates)


class NoInternalCurrency(PrescribedHeb):
    """Prescribed play for a miner unable to obtain internal currency:
    everything external, all blocks regular."""

    def allocate(self, balance, params) -> Allocation:
        return Allocation(Fraction(0), Fraction(balance))

    def generate_block(self, view: MinerView):
        return self._pick_tip(view), REGULAR


class PowOnly:
    """Ignore internal expenditure entirely: mine a full private epoch on
    external resources and publish the epoch_len blocks all at once."""

    def allocate(self, balance, params) -> Allocation:
        return Allocation(Fraction(0), Fraction(balance))

    def generate_block(self, view: MinerView):
        if view.local:
            parent = max(view.local.values(), key=lambda b: b.height).id
        else:
            parent = view.epoch_start_tip
        return parent, REGULAR

    def publish(self, view: MinerView):
        if len(view.local) < view.params.epoch_len:
            return []
        return sorted(view.local)


class PrescribedMandatory:
    """Allocate ratio rho internally; every block consumes quota.  Returns
    no block once the quota on the chosen chain is exhausted."""

    def allocate(self, balance, params) -> Allocation:
        balance = Fraction(balance)
        return Allocation(params.rho * balance, (1 - params.rho) * balance)

    def generate_block(self, view: MinerView):
        tip = _uniform_tip(view, view.public_tips())
        if not mandatory_validity(view.blocks_used(tip), view.quota_limit):
            return None
        return tip, REGULAR

    def publish(self, view: MinerView):
        return sorted(view.local)


# -- registry -------------------------------------------------------------------------


@dataclass(frozen=True)
class ProtocolSpec:
    """A protocol: its balance function, mint rate, prescribed strategy
    factory, and how block-creation quotas apply."""

    name: str
    balance_fn: Callable[..., BalanceOutcome]
    prescribed_factory: Callable[[], object]
    mint_scale: Fraction = Fraction(1)
    quota_mode: str = "factored"  # "factored" | "count" | "none"

    def mint_per_block(self, params: EpochParams) -> Fraction:
        return params.mint * self.mint_scale

    def prescribed(self):
        return self.prescribed_factory()


_PROTOCOLS: dict[str, ProtocolSpec] = {
    "nakamoto": ProtocolSpec(
        "nakamoto", nakamoto_balance, PrescribedNakamoto, quota_mode="none"
    ),
    "nakamoto_half": ProtocolSpec(
        "nakamoto_half",
        nakamoto_half_balance,
        PrescribedNakamoto,
        mint_scale=Fraction(1, 2),
        quota_mode="none",
    ),
    "prd": ProtocolSpec("prd", prd_balance, PrescribedNakamoto, quota_mode="none"),
    "heb": ProtocolSpec("heb", heb_balance, PrescribedHeb, quota_mode="factored"),
    "heb_mandatory": ProtocolSpec(
        "heb_mandatory", mandatory_balance, PrescribedMandatory, quota_mode="count"
    ),
}

_STRATEGIES: dict[str, Callable[[ProtocolSpec], object]] = {
    "prescribed": lambda proto: proto.prescribed(),
    "petty_compliant": lambda proto: PettyCompliant(),
    "pow_only": lambda proto: PowOnly(),
    "no_ic": lambda proto: NoInternalCurrency(),
}


def get_protocol(name: str) -> ProtocolSpec:
    try:
        return _PROTOCOLS[name]
    except KeyError:
        raise ValueError(
            f"unknown protocol {name!r}; choose from {sorted(_PROTOCOLS)}"
        ) from None


def protocol_names() -> list[str]:
    return sorted(_PROTOCOLS)


def strategy_names() -> list[str]:
    return sorted(_STRATEGIES)


def make_strategy(name: str, protocol: ProtocolSpec):
    try:
        factory = _STRATEGIES[name]
    except KeyError:
        raise ValueError(
            f"unknown strategy {name!r}; choose from {sorted(_STRATEGIES)}"
        ) from None
    return factory(protocol)


def real_value_scale(protocol: ProtocolSpec) -> Fraction:
    """Price multiplier turning nominal tokens into cross-protocol value:
    the token price is inverse to the minted supply, so halving the mint
    doubles the price."""
    return 1 / protocol.mint_scale
