"""Epoch scheduler: allocation, proportional miner selection, block
generation, and the publication fixpoint loop.

A single epoch run is strictly sequential and deterministic given its seed.
``run_games`` executes independent runs (optionally in parallel) and merges
their statistics keyed on run index, so parallelism never changes output.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Protocol, Sequence, Union

import numpy as np

from hebsim.chain import (
    Block,
    BlockStore,
    Chain,
    ChainError,
    EpochParams,
    FACTORED,
    REGULAR,
    epoch_stats,
    genesis_block,
)

SeedLike = Union[int, np.random.SeedSequence]


class StrategyFault(Exception):
    """A miner strategy returned an invalid block or publication.

    Such miners are excluded from the analysis, so the run aborts loudly
    instead of silently repairing the output.
    """


class StalledSystemError(Exception):
    """No miner can make progress (zero external balance everywhere, or all
    block-creation quotas exhausted under a mandatory-expenditure protocol)."""


class PublicationLoopError(Exception):
    """The publication fixpoint exceeded its round cap."""


@dataclass(frozen=True)
class Allocation:
    """A miner's split of her balance into internal and external parts."""

    internal: Fraction
    external: Fraction

    def __post_init__(self):
        object.__setattr__(self, "internal", Fraction(self.internal))
        object.__setattr__(self, "external", Fraction(self.external))
        if self.internal < 0 or self.external < 0:
            raise ValueError("allocation parts must be non-negative")

    @property
    def total(self) -> Fraction:
        return self.internal + self.external


class MinerView:
    """Read access a strategy gets when invoked: the public storage, the
    miner's own private blocks, and her per-run context."""

    __slots__ = (
        "miner_id",
        "store",
        "local",
        "params",
        "allocation",
        "quota_limit",
        "epoch_start_height",
        "epoch_start_tip",
        "rng",
    )

    def __init__(
        self,
        miner_id: str,
        store: BlockStore,
        local: dict[int, Block],
        params: EpochParams,
        allocation: Allocation,
        quota_limit: Optional[int],
        epoch_start_height: int,
        epoch_start_tip: int,
        rng: np.random.Generator,
    ):
        self.miner_id = miner_id
        self.store = store
        self.local = local
        self.params = params
        self.allocation = allocation
        self.quota_limit = quota_limit
        self.epoch_start_height = epoch_start_height
        self.epoch_start_tip = epoch_start_tip
        self.rng = rng

    def public_tips(self) -> list[int]:
        return self.store.tip_ids()

    def factored_used(self, parent_id: int) -> int:
        """Own factored blocks on the public path ending at ``parent_id``."""
        return self.store.factored_by_on_path(parent_id, self.miner_id)

    def blocks_used(self, parent_id: int) -> int:
        return self.store.count_by_on_path(parent_id, self.miner_id)


class Strategy(Protocol):
    def allocate(self, balance: Fraction, params: EpochParams) -> Allocation: ...

    def generate_block(self, view: MinerView) -> Optional[tuple[int, str]]: ...

    def publish(self, view: MinerView) -> Iterable[int]: ...


@dataclass
class MinerConfig:
    id: str
    balance: Fraction
    strategy: "Strategy"

    def __post_init__(self):
        self.balance = Fraction(self.balance)
        if self.balance < 0:
            raise ValueError("balance must be non-negative")


@dataclass
class EpochResult:
    """Outcome of one epoch run.

    Token conservation holds exactly: the sum of end balances plus the user
    payout equals the internal expenses plus the minted supply.  External
    expenses leave the system.
    """

    epoch_index: int
    store: BlockStore
    main: Chain
    stats: dict[str, tuple[int, Fraction]]
    minted: dict[str, Fraction]
    redistributed: dict[str, Fraction]
    balances: dict[str, Fraction]
    user_payout: Fraction
    external_total: Fraction
    internal_total: Fraction
    prefix_ok: bool
    blocks_created: int
    steps: int

    def to_json(self) -> str:
        def frac(x: Fraction) -> str:
            return str(x)

        return json.dumps(
            {
                "epoch_index": self.epoch_index,
                "stats": {
                    m: [n, frac(w)] for m, (n, w) in sorted(self.stats.items())
                },
                "minted": {m: frac(v) for m, v in sorted(self.minted.items())},
                "redistributed": {
                    m: frac(v) for m, v in sorted(self.redistributed.items())
                },
                "balances": {m: frac(v) for m, v in sorted(self.balances.items())},
                "user_payout": frac(self.user_payout),
                "external_total": frac(self.external_total),
                "internal_total": frac(self.internal_total),
                "prefix_ok": self.prefix_ok,
                "blocks_created": self.blocks_created,
                "steps": self.steps,
                "main_tip": self.main.tip.id,
                "main_length": self.main.length,
            },
            sort_keys=True,
        )


@dataclass
class GameStats:
    """Aggregate statistics over a batch of independent epoch runs."""

    runs: int
    miner_ids: list[str]
    mean_utility: dict[str, float]
    stderr_utility: dict[str, float]
    mean_blocks: dict[str, float]
    mean_weight: dict[str, float]
    external_spend: dict[str, float]

    def to_csv(self) -> str:
        lines = ["miner_id,mean_utility,stderr,mean_blocks,mean_weight,external_spend"]
        for m in self.miner_ids:
            lines.append(
                f"{m},{self.mean_utility[m]:.10g},{self.stderr_utility[m]:.10g},"
                f"{self.mean_blocks[m]:.10g},{self.mean_weight[m]:.10g},"
                f"{self.external_spend[m]:.10g}"
            )
        return "\n".join(lines) + "\n"


# -- seeding ------------------------------------------------------------------------


def _stable_id_key(miner_id: str) -> int:
    digest = hashlib.sha256(miner_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _as_seedseq(seed: SeedLike) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def derive_streams(
    seed: SeedLike, miner_ids: Sequence[str]
) -> tuple[np.random.Generator, dict[str, np.random.Generator]]:
    """Scheduler stream plus one independent stream per miner.

    Streams are keyed on the miner id, so adding a miner does not perturb
    the draws of the others.
    """
    ss = _as_seedseq(seed)
    base_key = tuple(ss.spawn_key)
    sched = np.random.default_rng(
        np.random.SeedSequence(entropy=ss.entropy, spawn_key=base_key + (0,))
    )
    miners = {
        m: np.random.default_rng(
            np.random.SeedSequence(
                entropy=ss.entropy, spawn_key=base_key + (1, _stable_id_key(m))
            )
        )
        for m in miner_ids
    }
    return sched, miners


# -- balance setup -----------------------------------------------------------------


def normalized_balances(
    shares: Sequence[Union[float, Fraction]],
    params: EpochParams,
    allow_fractional: bool = False,
) -> list[Fraction]:
    """Miner balances matching relative ``shares`` under the equilibrium
    normalization: balances sum to ``epoch_len * mint``.

    Unless ``allow_fractional``, requires each ``epoch_len * share`` to be an
    integer (small miners below the 1/epoch_len granularity are rejected).
    """
    fshares = [Fraction(s).limit_denominator(10**12) for s in shares]
    if any(s <= 0 for s in fshares):
        raise ValueError("shares must be positive")
    if sum(fshares) != 1:
        raise ValueError(f"shares must sum to 1, got {float(sum(fshares))}")
    total = params.epoch_len * params.mint
    balances = [s * total for s in fshares]
    if not allow_fractional:
        for s in fshares:
            blocks = s * params.epoch_len
            if blocks.denominator != 1:
                raise ValueError(
                    f"epoch_len * share = {float(blocks)} is not integral; "
                    "pass allow_fractional=True to override"
                )
    return balances


def select_miner(
    external_balances: dict[str, Union[Fraction, float]],
    rng: np.random.Generator,
) -> str:
    """Draw a miner id with probability proportional to external balance.

    The draw consumes relative weights, so uniformly scaling all balances
    (e.g. two protocols whose allocations differ by a constant factor)
    yields bit-identical selections under the same stream.
    """
    ids = sorted(external_balances)
    total = sum(external_balances[m] for m in ids)
    if total <= 0:
        raise StalledSystemError("all external balances are zero")
    rel = [float(Fraction(external_balances[m]) / Fraction(total)) for m in ids]
    r = rng.random()
    acc = 0.0
    for m, w in zip(ids, rel):
        acc += w
        if r < acc:
            return m
    return ids[-1]


# -- the scheduler ------------------------------------------------------------------


def _quota_limit(alloc: Allocation, params: EpochParams) -> Optional[int]:
    if params.rho == 0:
        return None
    return int(alloc.internal / (params.rho * params.mint))


def run_epoch(
    params: EpochParams,
    miners: Sequence[MinerConfig],
    protocol,
    seed: SeedLike,
    store: Optional[BlockStore] = None,
) -> EpochResult:
    """Run one epoch of the block-creation game.

    Allocates each miner's balance, then repeats {select miner proportionally
    to external expenditure, generate one block, run the publication fixpoint}
    until the main chain has grown by ``params.epoch_len`` blocks.  End
    balances follow the protocol's reward distribution.
    """
    if not miners:
        raise ValueError("need at least one miner")
    ids = [m.id for m in miners]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate miner ids")
    order = sorted(range(len(miners)), key=lambda i: miners[i].id)
    miners = [miners[i] for i in order]
    ids = [m.id for m in miners]

    total_balance = sum((m.balance for m in miners), Fraction(0))
    if total_balance == 0:
        raise StalledSystemError("all miner balances are zero")
    if total_balance > params.user_balance * params.guard_ratio:
        warnings.warn(
            "total miner balance is not negligible next to the user balance "
            f"(ratio {float(total_balance / params.user_balance):.3g}); "
            "redistribution terms may be visible",
            stacklevel=2,
        )

    if store is None:
        store = BlockStore()
        store.append(genesis_block(0))
    start_len = store.main_chain_length()
    if start_len % params.epoch_len != 0:
        raise ChainError("store main chain is not aligned to an epoch boundary")
    epoch_index = start_len // params.epoch_len
    target_len = start_len + params.epoch_len
    start_tip = store.main_chain().tip
    next_id = 1 + max(b.id for b in store.blocks())

    sched_rng, miner_rngs = derive_streams(seed, ids)

    allocations: dict[str, Allocation] = {}
    for m in miners:
        alloc = m.strategy.allocate(m.balance, params)
        if alloc.total != m.balance:
            raise StrategyFault(
                f"miner {m.id} allocated {float(alloc.total)} of balance "
                f"{float(m.balance)}"
            )
        allocations[m.id] = alloc

    quota_limits = {m.id: _quota_limit(allocations[m.id], params) for m in miners}
    locals_: dict[str, dict[int, Block]] = {m.id: {} for m in miners}
    # own factored count along paths through private blocks
    local_fac: dict[str, dict[int, int]] = {m.id: {} for m in miners}
    local_cnt: dict[str, dict[int, int]] = {m.id: {} for m in miners}
    by_id = {m.id: m for m in miners}

    views = {
        m.id: MinerView(
            m.id,
            store,
            locals_[m.id],
            params,
            allocations[m.id],
            quota_limits[m.id],
            start_len,
            start_tip.id,
            miner_rngs[m.id],
        )
        for m in miners
    }

    externals = {m.id: allocations[m.id].external for m in miners}
    ext_total = sum(externals.values(), Fraction(0))
    if ext_total <= 0:
        raise StalledSystemError("all external balances are zero")
    sel_ids = sorted(externals)
    sel_weights = [float(externals[m] / ext_total) for m in sel_ids]
    quota_mode = getattr(protocol, "quota_mode", "factored")

    def path_fac(miner_id: str, block_id: int) -> int:
        if block_id in store:
            return store.factored_by_on_path(block_id, miner_id)
        return local_fac[miner_id][block_id]

    def path_cnt(miner_id: str, block_id: int) -> int:
        if block_id in store:
            return store.count_by_on_path(block_id, miner_id)
        return local_cnt[miner_id][block_id]

    def can_create(miner_id: str) -> bool:
        limit = quota_limits[miner_id]
        if quota_mode != "count" or limit is None:
            return True
        return any(path_cnt(miner_id, t) < limit for t in store.tip_ids())

    def publication_fixpoint() -> None:
        cap = max(params.epoch_len * len(miners), 16)
        rounds = 0
        while True:
            batch: list[Block] = []
            for m in miners:
                for bid in m.strategy.publish(views[m.id]):
                    if bid not in locals_[m.id]:
                        raise StrategyFault(
                            f"miner {m.id} published block {bid} it does not hold"
                        )
                    batch.append(locals_[m.id][bid])
            if not batch:
                return
            rounds += 1
            if rounds > cap:
                raise PublicationLoopError(
                    f"publication loop exceeded {cap} rounds"
                )
            batch.sort(key=lambda b: (b.height, b.id))
            for b in batch:
                try:
                    store.append(b)
                except ChainError as e:
                    raise StrategyFault(
                        f"miner {b.creator} published an unappendable block: {e}"
                    ) from e
                del locals_[b.creator][b.id]

    steps = 0
    created = 0
    max_steps = 1000 + 100 * params.epoch_len
    while store.main_chain_length() < target_len:
        steps += 1
        if steps > max_steps:
            raise RuntimeError(
                f"epoch did not terminate within {max_steps} scheduler steps"
            )
        r = sched_rng.random()
        acc = 0.0
        mid = sel_ids[-1]
        for cand, w in zip(sel_ids, sel_weights):
            acc += w
            if r < acc:
                mid = cand
                break
        result = by_id[mid].strategy.generate_block(views[mid])
        if result is None:
            # mandatory-expenditure protocols: the selected miner has no
            # quota left; her mining power is wasted this step.
            if not any(can_create(m.id) for m in miners):
                raise StalledSystemError(
                    "all miners exhausted their block-creation quotas"
                )
            continue
        parent_id, kind = result
        if parent_id in store:
            parent = store.get(parent_id)
        elif parent_id in locals_[mid]:
            parent = locals_[mid][parent_id]
        else:
            raise StrategyFault(
                f"miner {mid} extended unknown parent {parent_id}"
            )
        if kind not in (REGULAR, FACTORED):
            raise StrategyFault(f"miner {mid} returned block kind {kind!r}")
        limit = quota_limits[mid]
        if limit is not None:
            if quota_mode == "factored" and kind == FACTORED:
                if path_fac(mid, parent_id) >= limit:
                    raise StrategyFault(
                        f"miner {mid} exceeded her factored-block quota ({limit})"
                    )
            elif quota_mode == "count":
                if path_cnt(mid, parent_id) >= limit:
                    raise StrategyFault(
                        f"miner {mid} exceeded her block quota ({limit})"
                    )
        block = Block(next_id, parent_id, mid, kind, parent.height + 1)
        next_id += 1
        created += 1
        locals_[mid][block.id] = block
        local_fac[mid][block.id] = path_fac(mid, parent_id) + (
            1 if kind == FACTORED else 0
        )
        local_cnt[mid][block.id] = path_cnt(mid, parent_id) + 1
        publication_fixpoint()

    main = store.main_chain()
    prefix_ok = (
        main.length >= start_len and main.blocks[start_len].id == start_tip.id
    )
    stats = epoch_stats(main, epoch_index, params)
    for m in miners:
        stats.setdefault(m.id, (0, Fraction(0)))

    outcome = protocol.balance_fn(main, epoch_index, params, allocations, ids)
    balances = {
        m: outcome.minted.get(m, Fraction(0)) + outcome.redistributed.get(m, Fraction(0))
        for m in ids
    }
    internal_total = sum((allocations[m].internal for m in ids), Fraction(0))
    external_total = sum((allocations[m].external for m in ids), Fraction(0))
    minted_total = params.epoch_len * protocol.mint_per_block(params)
    conserved = sum(balances.values(), Fraction(0)) + outcome.user_payout
    if conserved != internal_total + minted_total:
        raise AssertionError(
            "token conservation violated: "
            f"{conserved} != {internal_total} + {minted_total}"
        )

    return EpochResult(
        epoch_index=epoch_index,
        store=store,
        main=main,
        stats=stats,
        minted=outcome.minted,
        redistributed=outcome.redistributed,
        balances=balances,
        user_payout=outcome.user_payout,
        external_total=external_total,
        internal_total=internal_total,
        prefix_ok=prefix_ok,
        blocks_created=created,
        steps=steps,
    )


class GameAccumulator:
    """Streaming mean/variance accumulation over epoch results."""

    def __init__(self, miner_ids: Sequence[str], external_spend: dict[str, float]):
        self.ids = sorted(miner_ids)
        self.external = external_spend
        self.count = 0
        self._sum = {m: 0.0 for m in self.ids}
        self._sq = {m: 0.0 for m in self.ids}
        self._blocks = {m: 0.0 for m in self.ids}
        self._weight = {m: 0.0 for m in self.ids}

    def add(self, res: EpochResult) -> None:
        self.count += 1
        for m in self.ids:
            u = float(res.balances[m])
            self._sum[m] += u
            self._sq[m] += u * u
            self._blocks[m] += res.stats[m][0]
            self._weight[m] += float(res.stats[m][1])

    def stats(self) -> GameStats:
        n = float(self.count)
        mean = {m: self._sum[m] / n for m in self.ids}
        stderr = {}
        for m in self.ids:
            var = max(self._sq[m] / n - mean[m] ** 2, 0.0)
            stderr[m] = math.sqrt(var / n) if self.count > 1 else 0.0
        return GameStats(
            runs=self.count,
            miner_ids=self.ids,
            mean_utility=mean,
            stderr_utility=stderr,
            mean_blocks={m: self._blocks[m] / n for m in self.ids},
            mean_weight={m: self._weight[m] / n for m in self.ids},
            external_spend=self.external,
        )


def iter_game_results(
    params: EpochParams,
    miners: Sequence[MinerConfig],
    protocol,
    count: int,
    seed: SeedLike,
    jobs: int = 1,
):
    """Yield ``count`` independent EpochResults in run-index order.

    Each run gets its own seed derived from the master; with ``jobs > 1``
    runs execute in a process pool but results are merged in index order,
    so parallelism never changes output.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    children = _as_seedseq(seed).spawn(count)
    if jobs <= 1:
        for child in children:
            yield run_epoch(params, miners, protocol, child)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            yield from pool.map(
                _run_one_pickled,
                [(params, list(miners), protocol, child) for child in children],
                chunksize=max(1, count // (jobs * 4)),
            )


def run_games(
    params: EpochParams,
    miners: Sequence[MinerConfig],
    protocol,
    count: int,
    seed: SeedLike,
    jobs: int = 1,
) -> GameStats:
    """Aggregate utility statistics over ``count`` independent epoch runs."""
    acc = GameAccumulator(
        [m.id for m in miners],
        {m.id: float(m.strategy.allocate(m.balance, params).external) for m in miners},
    )
    for res in iter_game_results(params, miners, protocol, count, seed, jobs):
        acc.add(res)
    return acc.stats()


def _run_one_pickled(args) -> EpochResult:
    params, miners, protocol, child = args
    return run_epoch(params, miners, protocol, child)
