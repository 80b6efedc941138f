"""Embedded experiment configurations.

Every table and figure of the evaluation is reachable through one named
preset; custom experiments use the same JSON schema from a file.
"""

from __future__ import annotations


def _equal_miners(n: int, strategy: str = "prescribed") -> list[dict]:
    share = 1.0 / n
    return [{"id": f"m{i}", "share": share, "strategy": strategy} for i in range(n)]


PRESETS: dict[str, dict] = {
    "bitcoin-baseline": {
        "command": "simulate",
        "protocol": "nakamoto",
        "epoch_len": 100,
        "factor": 1,
        "rho": 0,
        "user_balance": 1_000_000,
        "miners": _equal_miners(5),
        "runs": 1000,
        "seed": 2024,
    },
    "heb-practical": {
        "command": "simulate",
        "protocol": "heb",
        "epoch_len": 1000,
        "factor": 20,
        "rho": 0.5,
        "user_balance": 10_000_000,
        "miners": _equal_miners(5),
        "runs": 50,
        "seed": 2024,
    },
    "table2": {
        "command": "epsilon",
        "epoch_len": 1000,
        "factor": 20,
        "distributions": [
            [0.20, 0.80],
            [0.10, 0.15, 0.20, 0.20, 0.35],
            [0.20, 0.40, 0.40],
            [0.20, 0.20, 0.30, 0.30],
            [0.20, 0.20, 0.20, 0.20, 0.20],
        ],
    },
    "fig2a": {
        "command": "curves",
        "which": "fig2a",
        "shares": [0.05, 0.1, 0.2, 0.4],
        "epoch_lens": [200, 500, 1000, 2000, 5000, 10000],
        "factor": 20,
    },
    "fig2b": {
        "command": "curves",
        "which": "fig2b",
        "shares": [0.05, 0.1, 0.2, 0.4],
        "factors": [1, 2, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50],
        "epoch_len": 1000,
    },
    "fig4": {
        "command": "curves",
        "which": "fig4",
        "rhos": [round(0.05 * i, 2) for i in range(20)],
    },
    "fig5": {
        "command": "curves",
        "which": "fig5",
        "shares": [0.05, 0.1, 0.2, 0.4],
        "factors": [1, 2, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50],
    },
    "fig3-small": {
        "command": "mdp",
        "shares": [0.2],
        "rhos": [0.0, 0.5],
        "epoch_len": 6,
        "phi_lo": 1.0,
        "phi_hi": 1.0e8,
        "games": 200,
        "seed": 2024,
    },
}


def get_preset(name: str) -> dict:
    try:
        return dict(PRESETS[name])
    except KeyError:
        raise ValueError(
            f"unknown preset {name!r}; choose from {sorted(PRESETS)}"
        ) from None
