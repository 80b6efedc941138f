"""Epoch-based mining-game simulator and analysis toolkit.

Implements a tunable hybrid-expenditure blockchain protocol (HEB) next to
its Nakamoto baseline: a scheduler-driven block-creation game, reward
distribution with weighted block types, incentive/attack/permissiveness
metrics, and an exact finite-horizon best-response solver.
"""

from hebsim.chain import (
    Block,
    BlockStore,
    Chain,
    ChainError,
    EpochParams,
    FACTORED,
    REGULAR,
    append_block,
    epoch_slice,
    epoch_stats,
    longest_chains,
    main_chain,
)
from hebsim.engine import (
    Allocation,
    EpochResult,
    MinerConfig,
    StalledSystemError,
    StrategyFault,
    normalized_balances,
    run_epoch,
    run_games,
    select_miner,
)
from hebsim.protocols import ProtocolSpec, get_protocol, make_strategy

__all__ = [
    "Allocation",
    "Block",
    "BlockStore",
    "Chain",
    "ChainError",
    "EpochParams",
    "EpochResult",
    "FACTORED",
    "MinerConfig",
    "ProtocolSpec",
    "REGULAR",
    "StalledSystemError",
    "StrategyFault",
    "append_block",
    "epoch_slice",
    "epoch_stats",
    "get_protocol",
    "longest_chains",
    "main_chain",
    "make_strategy",
    "normalized_balances",
    "run_epoch",
    "run_games",
    "select_miner",
]

__version__ = "0.1.0"
