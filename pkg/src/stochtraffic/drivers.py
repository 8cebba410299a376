"""Rule-based drivers: IDM car following and two-politeness MOBIL lane changing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

STAY, LEFT, RIGHT = "stay", "left", "right"


@dataclass(frozen=True)
class IdmParams:
    d_0: float = 2.0
    T: float = 1.6
    b: float = 1.7
    d_max_gap: float = 10000.0
    a_min: float = -20.0
    a_max: float = 0.7
    delta_exp: float = 4.0

    def __post_init__(self):
        if min(self.d_0, self.T, self.b, self.a_max) <= 0:
            raise ValueError("d_0, T, b and a_max must be positive")
        if self.a_min >= 0:
            raise ValueError("a_min must be negative")


@dataclass(frozen=True)
class MobilParams:
    a_th: float = 0.1
    q_rear: float = 0.5
    p_side: float = 1.0
    b_safe: float = 4.0

    def __post_init__(self):
        if self.a_th <= 0 or self.b_safe <= 0:
            raise ValueError("a_th and b_safe must be positive")
        if self.q_rear < 0 or self.p_side < 0:
            raise ValueError("politeness factors must be non-negative")


def idm_acceleration(v: float, v_des: float, gap: float, closing_speed: float, p: IdmParams) -> float:
    """IDM acceleration clamped to ``[a_min, a_max]``.

    ``closing_speed`` is own speed minus leader speed. The dynamic part of the
    desired gap is floored at zero so a receding leader never pushes the
    desired gap below ``d_0``.
    """
    if gap <= 0:
        raise ValueError("gap must be positive; resolve overlaps as crashes first")
    s_star = p.d_0 + max(0.0, v * p.T + v * closing_speed / (2.0 * math.sqrt(p.a_max * p.b)))
    a = p.a_max * (1.0 - (v / v_des) ** p.delta_exp - (s_star / gap) ** 2)
    return min(max(a, p.a_min), p.a_max)


@dataclass(frozen=True)
class Neighbor:
    """A leader or follower seen from the deciding vehicle.

    ``gap`` is bumper-to-bumper distance; ``v_des`` only matters for followers.
    """

    gap: float
    speed: float
    v_des: float = 25.0


@dataclass(frozen=True)
class LaneContext:
    leader: Optional[Neighbor] = None
    follower: Optional[Neighbor] = None


@dataclass(frozen=True)
class MobilContext:
    speed: float
    v_des: float
    current: LaneContext = field(default_factory=LaneContext)
    left: Optional[LaneContext] = None  # None: no lane on that side
    right: Optional[LaneContext] = None
    length: float = 4.5

    def mirrored(self) -> "MobilContext":
        return MobilContext(self.speed, self.v_des, self.current, self.right, self.left, self.length)


def _follow(v: float, v_des: float, leader: Optional[Neighbor], gap: Optional[float], p: IdmParams) -> float:
    if leader is None:
        return idm_acceleration(v, v_des, p.d_max_gap, 0.0, p)
    return idm_acceleration(v, v_des, gap, v - leader.speed, p)


def lane_change_incentive(ctx: MobilContext, cand: LaneContext, idm: IdmParams, mobil: MobilParams):
    """Return ``(safe, incentive)`` for moving into ``cand``.

    Other vehicles are frozen; only the accelerations of the ego, the new
    follower and the old follower are re-evaluated.
    """
    L = ctx.length
    cur = ctx.current
    nl, nf = cand.leader, cand.follower
    if (nl is not None and nl.gap <= 0) or (nf is not None and nf.gap <= 0):
        return False, -math.inf

    a_ego_before = _follow(ctx.speed, ctx.v_des, cur.leader, cur.leader.gap if cur.leader else None, idm)
    a_ego_after = _follow(ctx.speed, ctx.v_des, nl, nl.gap if nl else None, idm)

    d_new = 0.0
    if nf is not None:
        after = idm_acceleration(nf.speed, nf.v_des, nf.gap, nf.speed - ctx.speed, idm)
        if after < -mobil.b_safe:
            return False, -math.inf
        before = _follow(nf.speed, nf.v_des, nl, nf.gap + L + nl.gap if nl else None, idm)
        d_new = after - before

    d_old = 0.0
    of = cur.follower
    if of is not None:
        before = idm_acceleration(of.speed, of.v_des, of.gap, of.speed - ctx.speed, idm)
        lead = cur.leader
        after = _follow(of.speed, of.v_des, lead, of.gap + L + lead.gap if lead else None, idm)
        d_old = after - before

    return True, (a_ego_after - a_ego_before) + mobil.q_rear * d_new + mobil.p_side * d_old


def mobil_decide(ctx: MobilContext, idm: IdmParams, mobil: MobilParams) -> str:
    best, best_gain = STAY, mobil.a_th
    for direction, cand in ((LEFT, ctx.left), (RIGHT, ctx.right)):
        if cand is None:
            continue
        safe, gain = lane_change_incentive(ctx, cand, idm, mobil)
        # strict '>' keeps left on exact ties since it is evaluated first
        if safe and gain > best_gain:
            best, best_gain = direction, gain
    return best
