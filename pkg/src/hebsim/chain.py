"""Blocks, the append-only global storage tree, chains, and epoch accounting.

The storage is a directed tree rooted at a genesis block.  Chains are paths
from genesis; the main chain is the longest common prefix of all longest
chains.  Epoch ``k`` of a chain is the block series at 1-indexed positions
``[len*k + 1, len*(k+1)]`` (genesis excluded).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Optional, Union

Numeric = Union[int, float, Fraction]

REGULAR = "regular"
FACTORED = "factored"
_KINDS = (REGULAR, FACTORED)


class ChainError(Exception):
    """Structural violation of the block tree (bad append, short chain...)."""


def _as_fraction(x: Numeric) -> Fraction:
    # floats are converted through their exact binary value; callers that
    # care about exact conservation should pass int/Fraction/str inputs.
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(x).limit_denominator(10**12)


@dataclass(frozen=True)
class Block:
    """A tree node: unit of the global storage.

    ``parent`` and ``creator`` are ``None`` exactly for the genesis block.
    ``kind`` is one of :data:`REGULAR` / :data:`FACTORED`.
    """

    id: int
    parent: Optional[int]
    creator: Optional[str]
    kind: str
    height: int

    def is_genesis(self) -> bool:
        return self.parent is None

    def to_json(self) -> str:
        return json.dumps(
            {
                "id": self.id,
                "parent": self.parent,
                "creator": self.creator,
                "kind": self.kind,
                "height": self.height,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(line: str) -> "Block":
        d = json.loads(line)
        return Block(d["id"], d["parent"], d["creator"], d["kind"], d["height"])


def genesis_block(block_id: int = 0) -> Block:
    return Block(id=block_id, parent=None, creator=None, kind=REGULAR, height=0)


class Chain:
    """A path of blocks starting at genesis, each the parent of the next."""

    __slots__ = ("blocks",)

    def __init__(self, blocks: Iterable[Block]):
        self.blocks: tuple[Block, ...] = tuple(blocks)
        if not self.blocks or not self.blocks[0].is_genesis():
            raise ChainError("chain must start at genesis")
        for prev, cur in zip(self.blocks, self.blocks[1:]):
            if cur.parent != prev.id:
                raise ChainError("chain is not parent-linked")

    @property
    def length(self) -> int:
        """Number of non-genesis blocks."""
        return len(self.blocks) - 1

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self) -> Iterator[Block]:
        return iter(self.blocks)

    def __getitem__(self, i):
        return self.blocks[i]

    def __eq__(self, other) -> bool:
        return isinstance(other, Chain) and self.blocks == other.blocks

    def __repr__(self) -> str:
        return f"Chain(len={self.length}, tip={self.tip.id})"


@dataclass(frozen=True)
class EpochParams:
    """Per-epoch game parameters.

    epoch_len     blocks per epoch.
    factor        weight of a factored block (a regular block weighs 1).
    rho           internal expenditure required per factored block, as a
                  fraction of the per-block mint.
    mint          tokens minted per block (default 1, the normalization
                  under which miner balances sum to ``epoch_len``).
    user_balance  aggregate token holdings of non-miner entities; must
                  dominate total miner balances for the redistribution
                  term to stay negligible.
    """

    epoch_len: int
    factor: Fraction = Fraction(1)
    rho: Fraction = Fraction(0)
    mint: Fraction = Fraction(1)
    user_balance: Fraction = Fraction(10**6)
    guard_ratio: Fraction = Fraction(1, 1000)

    def __post_init__(self):
        object.__setattr__(self, "factor", _as_fraction(self.factor))
        object.__setattr__(self, "rho", _as_fraction(self.rho))
        object.__setattr__(self, "mint", _as_fraction(self.mint))
        object.__setattr__(self, "user_balance", _as_fraction(self.user_balance))
        object.__setattr__(self, "guard_ratio", _as_fraction(self.guard_ratio))
        if self.epoch_len < 1:
            raise ValueError("epoch_len must be a positive integer")
        if self.factor < 1:
            raise ValueError("factor must be >= 1")
        if not 0 <= self.rho < 1:
            raise ValueError("rho must lie in [0, 1)")
        if self.mint <= 0:
            raise ValueError("mint must be positive")
        if self.user_balance <= 0:
            raise ValueError("user_balance must be positive")

    def block_weight(self, kind: str) -> Fraction:
        return self.factor if kind == FACTORED else Fraction(1)


class BlockStore:
    """Append-only set of blocks forming a tree rooted at genesis.

    Alongside the raw tree the store maintains per-path accounting used by
    strategies and reward functions:

    * the set of maximum-height leaves (fork tips),
    * per-block counts of factored blocks on the path from genesis,
    * per-block, per-creator factored and total block counts on that path.

    Blocks are never removed or mutated.
    """

    def __init__(self):
        self._blocks: dict[int, Block] = {}
        self._genesis_id: Optional[int] = None
        self.max_height = -1
        self._max_tips: list[int] = []
        # path-cumulative accounting, keyed by block id
        self._fac_total: dict[int, int] = {}
        self._fac_by: dict[int, dict[str, int]] = {}
        self._cnt_by: dict[int, dict[str, int]] = {}

    # -- basic container protocol -------------------------------------------------

    def __contains__(self, block_id: int) -> bool:
        return block_id in self._blocks

    def __len__(self) -> int:
        return len(self._blocks)

    def get(self, block_id: int) -> Block:
        return self._blocks[block_id]

    @property
    def genesis_id(self) -> int:
        if self._genesis_id is None:
            raise ChainError("store is empty")
        return self._genesis_id

    def blocks(self) -> Iterator[Block]:
        return iter(self._blocks.values())

    # -- append --------------------------------------------------------------------

    def append(self, block: Block) -> None:
        if block.id in self._blocks:
            raise ChainError(f"duplicate id {block.id}")
        if block.parent is None:
            if self._genesis_id is not None:
                raise ChainError("second genesis rejected")
            if block.height != 0:
                raise ChainError("genesis height must be 0")
            self._genesis_id = block.id
            self._fac_total[block.id] = 0
            self._fac_by[block.id] = {}
            self._cnt_by[block.id] = {}
        else:
            if block.parent not in self._blocks:
                raise ChainError(f"missing parent {block.parent}")
            parent = self._blocks[block.parent]
            if block.height != parent.height + 1:
                raise ChainError(
                    f"height {block.height} != parent height {parent.height} + 1"
                )
            if block.kind not in _KINDS:
                raise ChainError(f"unknown block kind {block.kind!r}")
            if block.creator is None:
                raise ChainError("non-genesis block must carry a creator")
            fac = self._fac_total[block.parent]
            fac_by = self._fac_by[block.parent]
            cnt_by = dict(self._cnt_by[block.parent])
            cnt_by[block.creator] = cnt_by.get(block.creator, 0) + 1
            if block.kind == FACTORED:
                fac += 1
                fac_by = dict(fac_by)
                fac_by[block.creator] = fac_by.get(block.creator, 0) + 1
            self._fac_total[block.id] = fac
            self._fac_by[block.id] = fac_by
            self._cnt_by[block.id] = cnt_by
        self._blocks[block.id] = block
        if block.height > self.max_height:
            self.max_height = block.height
            self._max_tips = [block.id]
        elif block.height == self.max_height:
            self._max_tips.append(block.id)

    # -- path accounting -------------------------------------------------------------

    def factored_on_path(self, block_id: int) -> int:
        """Factored blocks on the path genesis..block_id, inclusive."""
        return self._fac_total[block_id]

    def factored_by_on_path(self, block_id: int, creator: str) -> int:
        return self._fac_by[block_id].get(creator, 0)

    def count_by_on_path(self, block_id: int, creator: str) -> int:
        return self._cnt_by[block_id].get(creator, 0)

    def path_weight(self, block_id: int, factor: Fraction) -> Fraction:
        """Accumulated weight of the path genesis..block_id (genesis excluded)."""
        fac = self._fac_total[block_id]
        reg = self._blocks[block_id].height - fac
        return reg + factor * fac

    # -- chain queries ----------------------------------------------------------------

    def tip_ids(self) -> list[int]:
        """Ids of all maximum-height leaves, in ascending id order."""
        return sorted(self._max_tips)

    def chain_to(self, block_id: int) -> Chain:
        path = []
        cur: Optional[int] = block_id
        while cur is not None:
            b = self._blocks[cur]
            path.append(b)
            cur = b.parent
        path.reverse()
        return Chain(path)

    def longest_chains(self) -> list[Chain]:
        if not self._blocks:
            raise ChainError("store is empty")
        return [self.chain_to(t) for t in self.tip_ids()]

    def main_chain(self) -> Chain:
        """Longest common prefix of all longest chains."""
        tips = self.tip_ids()
        if len(tips) == 1:
            return self.chain_to(tips[0])
        chains = [self.chain_to(t) for t in tips]
        first = chains[0].blocks
        cut = len(first)
        for other in chains[1:]:
            k = 0
            limit = min(cut, len(other.blocks))
            while k < limit and other.blocks[k].id == first[k].id:
                k += 1
            cut = k
        return Chain(first[:cut])

    def main_chain_length(self) -> int:
        """Length of the main chain; O(1) while there is a unique tip."""
        if len(self._max_tips) == 1:
            return self.max_height
        return self.main_chain().length

    # -- serialization ------------------------------------------------------------------

    def to_jsonl(self) -> str:
        """One block per line, in insertion order (parents precede children)."""
        return "\n".join(b.to_json() for b in self._blocks.values())

    @staticmethod
    def from_jsonl(text: str) -> "BlockStore":
        store = BlockStore()
        for line in text.splitlines():
            if line.strip():
                store.append(Block.from_json(line))
        return store


# -- module-level operations ---------------------------------------------------------


def append_block(store: BlockStore, block: Block) -> BlockStore:
    """Append ``block`` to ``store`` in place and return the store."""
    store.append(block)
    return store


def longest_chains(store: BlockStore) -> list[Chain]:
    return store.longest_chains()


def main_chain(store: BlockStore) -> Chain:
    return store.main_chain()


def epoch_slice(chain: Chain, k: int, epoch_len: int) -> tuple[Block, ...]:
    """Blocks of epoch ``k``: 1-indexed positions [epoch_len*k+1, epoch_len*(k+1)]."""
    if k < 0:
        raise ChainError("epoch index must be non-negative")
    end = epoch_len * (k + 1)
    if chain.length < end:
        raise ChainError(
            f"chain too short for epoch {k}: length {chain.length} < {end}"
        )
    return chain.blocks[epoch_len * k + 1 : end + 1]


def epoch_stats(
    chain: Chain, k: int, params: EpochParams
) -> dict[str, tuple[int, Fraction]]:
    """Per-miner (block count, accumulated weight) over epoch ``k`` of ``chain``."""
    counts: dict[str, int] = {}
    fac_counts: dict[str, int] = {}
    for b in epoch_slice(chain, k, params.epoch_len):
        counts[b.creator] = counts.get(b.creator, 0) + 1
        if b.kind == FACTORED:
            fac_counts[b.creator] = fac_counts.get(b.creator, 0) + 1
    out: dict[str, tuple[int, Fraction]] = {}
    for miner, n in counts.items():
        nf = fac_counts.get(miner, 0)
        out[miner] = (n, (n - nf) + params.factor * nf)
    return out
