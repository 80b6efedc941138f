"""Independent oracles shared between the unit and acceptance suites.

These deliberately avoid the library's compressed state representations:
the game oracle runs exhaustive expectimax over explicit block trees, and
the race oracle is a plain dynamic program over step outcomes.
"""

import math
from fractions import Fraction


def game_value(ell, share, phi, rho, alloc_j):
    """Exact value of the withholding game by brute force (ell <= 3)."""
    phi = Fraction(phi)
    balance = ell * share
    internal = 0.0 if rho == 0 else alloc_j * rho
    external = balance - internal
    cohort_ext = (1.0 - rho) * (ell - balance)
    alpha = external / (external + cohort_ext) if external + cohort_ext > 0 else 0.0
    att_quota = None if rho == 0 else alloc_j
    coh_quota = None if rho == 0 else math.floor(ell - balance + 1e-9)

    # block: (id, parent, party, factored); genesis (0, None, "g", False)
    GENESIS = (0, None, "g", False)

    def path(blocks, bid):
        by_id = {b[0]: b for b in blocks}
        out = []
        while bid is not None:
            out.append(by_id[bid])
            bid = by_id[bid][1]
        return list(reversed(out))

    def height(blocks, bid):
        return len(path(blocks, bid)) - 1

    def weight(blocks, bid):
        return sum(
            (phi if b[3] else Fraction(1))
            for b in path(blocks, bid)
            if b[1] is not None
        )

    def fac_count(blocks, bid, party):
        return sum(1 for b in path(blocks, bid) if b[2] == party and b[3])

    def published_tips(blocks, published):
        pub_heights = {bid: height(blocks, bid) for bid in published}
        top = max(pub_heights.values())
        parents = {b[1] for b in blocks if b[0] in published and b[1] in published}
        tips = [
            bid for bid in published if pub_heights[bid] == top and bid not in parents
        ]
        return sorted(tips), top

    def att_reward(blocks, tip):
        chain = [b for b in path(blocks, tip) if b[1] is not None]
        att_w = sum((phi if b[3] else Fraction(1)) for b in chain if b[2] == "att")
        tot_w = sum((phi if b[3] else Fraction(1)) for b in chain)
        return float(att_w / tot_w) * ell if tot_w else 0.0

    def resolve_end(blocks, published, att_tip):
        # forced publish when the attacker's chain is full length
        if height(blocks, att_tip) == ell:
            published = published | {b[0] for b in path(blocks, att_tip)}
        tips, top = published_tips(blocks, published)
        assert top == ell
        if len(tips) == 1:
            return att_reward(blocks, tips[0])
        weights = {t: weight(blocks, t) for t in tips}
        lightest = min(weights.values())
        cands = [t for t in tips if weights[t] == lightest]
        return sum(att_reward(blocks, t) for t in cands) / len(cands)

    memo = {}

    def value(blocks, published, att_tip, next_id):
        att_h = height(blocks, att_tip)
        _, pub_h = published_tips(blocks, published)
        if att_h == ell or pub_h == ell:
            return resolve_end(blocks, published, att_tip)
        key = (blocks, tuple(sorted(published)), att_tip)
        if key in memo:
            return memo[key]

        att_path = path(blocks, att_tip)
        att_ids = {b[0] for b in att_path}
        secret_part = [b for b in att_path if b[0] not in published]

        moves = [("wait", None), ("adopt", None)]
        for m in range(1, len(secret_part) + 1):
            moves.append(("publish", m))

        best = -math.inf
        for move, m in moves:
            nb, npub, ntip = blocks, published, att_tip
            if move == "adopt":
                # the cohort's chain always carries a cohort-created tip
                tips, _ = published_tips(nb, npub)
                cands = [
                    t
                    for t in tips
                    if t not in att_ids and path(nb, t)[-1][2] == "coh"
                ]
                if not cands:
                    continue
                cands.sort(key=lambda t: (weight(nb, t), t))
                ntip = cands[0]
            elif move == "publish":
                npub = npub | {b[0] for b in secret_part[:m]}
            for factored in (False, True):
                if factored and att_quota is not None:
                    if fac_count(nb, ntip, "att") >= att_quota:
                        continue
                ev = 0.0
                if alpha > 0:
                    new = (next_id, ntip, "att", factored)
                    ev += alpha * value(nb + (new,), npub, next_id, next_id + 1)
                if alpha < 1:
                    tips, _ = published_tips(nb, npub)
                    weights = {t: weight(nb, t) for t in tips}
                    lightest = min(weights.values())
                    cands = [t for t in tips if weights[t] == lightest]
                    for tip in cands:
                        ctype = (
                            coh_quota is None or fac_count(nb, tip, "coh") < coh_quota
                        )
                        new = (next_id, tip, "coh", ctype)
                        ev += (
                            (1 - alpha)
                            / len(cands)
                            * value(
                                nb + (new,), npub | {next_id}, att_tip, next_id + 1
                            )
                        )
                best = max(best, ev)
        memo[key] = best
        return best

    return value((GENESIS,), frozenset({0}), 0, 1)


def race_probability(alpha: float, target: int) -> float:
    """P[the attacker accumulates `target` successes before `target`
    failures], by dynamic programming over step outcomes."""
    # state: (attacker blocks, cohort blocks) -> win probability
    win = [[0.0] * (target + 1) for _ in range(target + 1)]
    for a in range(target + 1):
        win[a][target] = 0.0
    for h in range(target + 1):
        win[target][h] = 1.0
    win[target][target] = 0.0  # unreachable: one side hits first
    for a in range(target - 1, -1, -1):
        for h in range(target - 1, -1, -1):
            win[a][h] = alpha * win[a + 1][h] + (1 - alpha) * win[a][h + 1]
    return win[0][0]
