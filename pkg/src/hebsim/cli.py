"""Command-line front end: reproducible experiments, CSV/JSON emission.

Subcommands: ``simulate`` (epoch game batches), ``epsilon`` (size
indifference per balance distribution), ``curves`` (closed-form metric
grids), ``mdp`` (minimal-factor search), ``costs`` (attack costs and
external expense for a given internal-expenditure rate).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from fractions import Fraction
from pathlib import Path

from hebsim import metrics
from hebsim.chain import EpochParams
from hebsim.engine import (
    GameAccumulator,
    MinerConfig,
    iter_game_results,
    normalized_balances,
)
from hebsim.mdp import min_factor
from hebsim.presets import PRESETS, get_preset
from hebsim.protocols import get_protocol, make_strategy, strategy_names
from hebsim import __version__


class ConfigError(Exception):
    def __init__(self, fieldname: str, message: str):
        super().__init__(f"{fieldname}: {message}")
        self.fieldname = fieldname


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def load_config(args, required: bool = True) -> dict:
    if getattr(args, "preset", None):
        cfg = get_preset(args.preset)
    elif getattr(args, "config", None):
        cfg = json.loads(Path(args.config).read_text())
    elif required:
        raise ConfigError("config", "either --preset or --config is required")
    else:
        cfg = {}
    for key in ("seed", "runs", "jobs", "out"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def build_experiment(cfg: dict):
    """Validate a simulate config and build (params, miners, protocol)."""
    try:
        protocol = get_protocol(cfg.get("protocol", "nakamoto"))
    except ValueError as e:
        raise ConfigError("protocol", str(e)) from None
    try:
        params = EpochParams(
            epoch_len=int(cfg.get("epoch_len", 100)),
            factor=_to_fraction(cfg.get("factor", 1), "factor"),
            rho=_to_fraction(cfg.get("rho", 0), "rho"),
            mint=_to_fraction(cfg.get("mint", 1), "mint"),
            user_balance=_to_fraction(cfg.get("user_balance", 10**6), "user_balance"),
        )
    except ValueError as e:
        raise ConfigError("epoch params", str(e)) from None
    miner_cfgs = cfg.get("miners")
    if not miner_cfgs:
        raise ConfigError("miners", "at least one miner required")
    shares = []
    for mc in miner_cfgs:
        if "share" not in mc:
            raise ConfigError("miners", f"miner {mc.get('id')} lacks a share")
        shares.append(mc["share"])
    try:
        balances = normalized_balances(
            shares, params, allow_fractional=bool(cfg.get("allow_fractional", False))
        )
    except ValueError as e:
        raise ConfigError("shares", str(e)) from None
    miners = []
    for mc, bal in zip(miner_cfgs, balances):
        name = mc.get("strategy", "prescribed")
        if name not in strategy_names():
            raise ConfigError(
                "strategy", f"unknown strategy {name!r} for miner {mc.get('id')}"
            )
        miners.append(MinerConfig(str(mc["id"]), bal, make_strategy(name, protocol)))
    return params, miners, protocol


def _to_fraction(x, fieldname: str) -> Fraction:
    try:
        if isinstance(x, str):
            return Fraction(x)
        if isinstance(x, float):
            return Fraction(x).limit_denominator(10**12)
        return Fraction(x)
    except (ValueError, ZeroDivisionError) as e:
        raise ConfigError(fieldname, f"not a number: {x!r}") from None


def _write(path: str | None, text: str, default_name: str) -> Path:
    out = Path(path) if path else Path(default_name)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    return out


# -- subcommands ----------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = load_config(args)
    params, miners, protocol = build_experiment(cfg)
    runs = int(cfg.get("runs", 1))
    seed = int(cfg.get("seed", 0))
    jobs = int(cfg.get("jobs", 1))

    acc = GameAccumulator(
        [m.id for m in miners],
        {m.id: float(m.strategy.allocate(m.balance, params).external) for m in miners},
    )
    run_lines = ["run,miner_id,utility,blocks,weight"]
    for idx, res in enumerate(
        iter_game_results(params, miners, protocol, runs, seed, jobs)
    ):
        acc.add(res)
        for mid in acc.ids:
            n, w = res.stats[mid]
            run_lines.append(
                f"{idx},{mid},{_fmt(float(res.balances[mid]))},{n},{_fmt(float(w))}"
            )

    stats = acc.stats()
    out = _write(cfg.get("out"), stats.to_csv(), "simulate.csv")
    runs_path = out.with_name(out.stem + "_runs.csv")
    runs_path.write_text("\n".join(run_lines) + "\n")
    print(f"wrote {out} and {runs_path} ({runs} runs, seed {seed})")
    return 0


def cmd_epsilon(args) -> int:
    cfg = load_config(args, required=False)
    if getattr(args, "dist", None):
        try:
            dists = [[float(x) for x in args.dist.split(",")]]
        except ValueError:
            raise ConfigError("dist", f"not a comma-separated list: {args.dist!r}")
        cfg.setdefault("distributions", dists)
        cfg["distributions"] = dists
    if getattr(args, "epoch_len", None):
        cfg["epoch_len"] = args.epoch_len
    if getattr(args, "factor", None):
        cfg["factor"] = args.factor
    epoch_len = int(cfg.get("epoch_len", 1000))
    factor = float(cfg.get("factor", 20))
    dists = cfg.get("distributions")
    if not dists:
        raise ConfigError("distributions", "no balance distributions given")
    width = max(len(d) for d in dists)
    header = ",".join(f"b{i+1}" for i in range(width)) + ",epsilon"
    lines = [header]
    for d in dists:
        try:
            eps = metrics.epsilon(d, epoch_len, factor)
        except ValueError as e:
            raise ConfigError("shares", str(e)) from None
        cells = [f"{s:.4g}" for s in d] + ["-"] * (width - len(d))
        lines.append(",".join(cells) + f",{_fmt(eps)}")
    out = _write(cfg.get("out"), "\n".join(lines) + "\n", "table2.csv")
    print(f"wrote {out}")
    return 0


def cmd_curves(args) -> int:
    cfg = load_config(args)
    which = getattr(args, "which", None) or cfg.get("which")
    if which not in ("fig2a", "fig2b", "fig4", "fig5"):
        raise ConfigError("which", f"unknown curve set {which!r}")
    if which == "fig2a":
        rows = metrics.normalized_weight_curve(
            cfg["shares"], epoch_lens=cfg["epoch_lens"], factor=float(cfg["factor"])
        )
        lines = ["epoch_len,share,normalized_weight"]
        lines += [f"{int(x)},{_fmt(s)},{_fmt(v)}" for x, s, v in rows]
    elif which == "fig2b":
        rows = metrics.normalized_weight_curve(
            cfg["shares"], factors=cfg["factors"], epoch_len=int(cfg["epoch_len"])
        )
        lines = ["factor,share,normalized_weight"]
        lines += [f"{_fmt(x)},{_fmt(s)},{_fmt(v)}" for x, s, v in rows]
    elif which == "fig4":
        lines = ["rho,pow_only_bound"]
        lines += [
            f"{_fmt(r)},{_fmt(metrics.pow_only_bound(float(r)))}"
            for r in cfg["rhos"]
        ]
    else:  # fig5
        lines = ["factor,share,permissiveness"]
        for f in cfg["factors"]:
            for s in cfg["shares"]:
                lines.append(
                    f"{_fmt(f)},{_fmt(s)},{_fmt(metrics.permissiveness(s, float(f)))}"
                )
    out = _write(cfg.get("out"), "\n".join(lines) + "\n", f"{which}.csv")
    print(f"wrote {out}")
    return 0


def cmd_mdp(args) -> int:
    cfg = load_config(args, required=False)
    if getattr(args, "share", None):
        cfg["shares"] = [float(args.share)]
    if getattr(args, "rhos", None):
        cfg["rhos"] = [float(x) for x in args.rhos.split(",")]
    if getattr(args, "epoch_len", None):
        cfg["epoch_len"] = args.epoch_len
    shares = cfg.get("shares")
    rhos = cfg.get("rhos")
    if not shares or rhos is None:
        raise ConfigError("shares/rhos", "mdp needs share and rho grids")
    ell = int(cfg.get("epoch_len", 6))
    games = int(cfg.get("games", 500))
    seed = int(cfg.get("seed", 0))
    phi_lo = float(cfg.get("phi_lo", 1.0))
    phi_hi = float(cfg.get("phi_hi", 1.0e8))
    cap = int(cfg.get("horizon_cap", max(ell, 12)))

    lines = ["rho,share,phi_min"]
    timing = ["rho,share,seconds"]
    for rho in rhos:
        for share in shares:
            t0 = time.perf_counter()
            try:
                res = min_factor(
                    share,
                    float(rho),
                    ell,
                    phi_lo=phi_lo,
                    phi_hi=phi_hi,
                    games=games,
                    seed=seed,
                    horizon_cap=cap,
                )
                phi_min = -1.0 if res.phi_min is None else res.phi_min
                if not res.monotone_ok:
                    print(
                        f"warning: non-monotone classification near phi_min "
                        f"at rho={rho}, share={share}",
                        file=sys.stderr,
                    )
            except Exception as e:  # per-row failures keep the sweep going
                print(f"error at rho={rho}, share={share}: {e}", file=sys.stderr)
                phi_min = float("nan")
            dt = time.perf_counter() - t0
            lines.append(f"{_fmt(float(rho))},{_fmt(float(share))},{_fmt(phi_min)}")
            timing.append(f"{_fmt(float(rho))},{_fmt(float(share))},{dt:.3f}")
    out = _write(cfg.get("out"), "\n".join(lines) + "\n", "fig3.csv")
    out.with_suffix(".timing.csv").write_text("\n".join(timing) + "\n")
    print(f"wrote {out} (+ timing sidecar)")
    return 0


def cmd_costs(args) -> int:
    rho = float(args.rho)
    refunded, sabotage = metrics.attack_costs(rho)
    expense = metrics.external_expense(rho)
    print(f"rho={_fmt(rho)}")
    print(f"attack_cost_refunded={_fmt(refunded)}")
    print(f"attack_cost_sabotage={_fmt(sabotage)}")
    print(f"external_expense={_fmt(expense)}")
    if getattr(args, "out", None):
        _write(
            args.out,
            "rho,attack_cost_refunded,attack_cost_sabotage,external_expense\n"
            f"{_fmt(rho)},{_fmt(refunded)},{_fmt(sabotage)},{_fmt(expense)}\n",
            "costs.csv",
        )
    return 0


# -- argument parsing -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hebsim",
        description="Epoch mining-game simulator and metric toolkit",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--preset", help=f"named preset: {', '.join(sorted(PRESETS))}")
        sp.add_argument("--seed", type=int, help="override master seed")
        sp.add_argument("--out", help="output CSV path")

    sim = sub.add_parser("simulate", help="run epoch game batches")
    common(sim)
    sim.add_argument("--runs", type=int, help="number of independent runs")
    sim.add_argument("--jobs", type=int, help="parallel worker processes")
    sim.set_defaults(fn=cmd_simulate)

    eps = sub.add_parser("epsilon", help="size-indifference per distribution")
    common(eps)
    eps.add_argument("--dist", help="comma-separated shares, e.g. 0.3,0.7")
    eps.add_argument("--epoch-len", dest="epoch_len", type=int)
    eps.add_argument("--factor", type=float)
    eps.set_defaults(fn=cmd_epsilon)

    cur = sub.add_parser("curves", help="closed-form metric grids")
    common(cur)
    cur.add_argument("--which", choices=["fig2a", "fig2b", "fig4", "fig5"])
    cur.set_defaults(fn=cmd_curves)

    mdp = sub.add_parser("mdp", help="minimal-factor search over (rho, share)")
    common(mdp)
    mdp.add_argument("--share", type=float, help="attacker relative balance")
    mdp.add_argument("--rhos", help="comma-separated rho grid")
    mdp.add_argument("--epoch-len", dest="epoch_len", type=int)
    mdp.set_defaults(fn=cmd_mdp)

    costs = sub.add_parser("costs", help="attack costs and external expense")
    costs.add_argument("--rho", type=float, required=True)
    costs.add_argument("--out", help="optional CSV path")
    costs.set_defaults(fn=cmd_costs)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
