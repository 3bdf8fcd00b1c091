# app/core/rewards.py
import math
import logging
import numpy as np
from dataclasses import dataclass, field, replace
from typing import Optional, List, FrozenSet, Tuple
from .config import OvmmError
from .schemas import RewardConfig, WorldParams
from .world import AgentState, EventKind, Frame, PlacementOutcome, Scene


logger = logging.getLogger(__name__)


class UninitializedState(OvmmError):
    """奖励状态缺少放置阶段起点的目标距离"""


@dataclass(frozen=True)
class RewardState:
    d_start: Optional[float] = None
    best_distance_potential: float = 0.0
    best_view_potential: float = 0.0
    contact_steps_paid: int = 0


@dataclass(frozen=True)
class Transition:
    prev: AgentState
    next: AgentState
    d: float
    p: float
    blocked_fraction: float = 0.0
    events: FrozenSet[EventKind] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.d < 0:
            raise ValueError(f"目标距离不能为负: {self.d}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"可见比例必须在[0,1]内: {self.p}")


def goal_distance(scene: Scene, agent: AgentState, goal_class: int, params: WorldParams) -> float:
    """夹爪水平位置到最近目标家具范围的距离"""
    gx, gy, _ = agent.gripper_position(params)
    recs = scene.receptacles_of_class(goal_class)
    if not recs:
        return math.inf
    return min(r.footprint.distance(gx, gy) for r in recs)


def goal_view_fraction(frame: Frame, goal_class: int) -> float:
    """真值类别图中目标家具所占的像素比例"""
    return float(np.count_nonzero(frame.class_map == goal_class)) / frame.class_map.size


def placement_events(outcome: PlacementOutcome, scene: Scene, goal_class: int) -> List[FrozenSet[EventKind]]:
    """
    释放动作及其后各个稳定观察步的事件
        - 第0项对应释放那一步: 落在目标家具上为ContactDrop, 否则OffSurfaceDrop
        - 物体停在目标家具上的每一步附带OnSurface
    """
    def on_goal(rec_id: int) -> bool:
        return scene.instance_class(rec_id) == goal_class if rec_id > 0 else False

    out = []
    for i, support in enumerate(outcome.supports):
        events = set()
        if i == 0:
            events.add(EventKind.CONTACT_DROP if on_goal(outcome.impact_support) else EventKind.OFF_SURFACE_DROP)
        if on_goal(support):
            events.add(EventKind.ON_SURFACE)
        out.append(frozenset(events))
    return out


def sparse_place_reward(tr: Transition) -> float:
    """稀疏奖励: 接触放下+5, 停留在表面每步+1, 未接触表面掉落-1"""
    r = 0.0
    if EventKind.CONTACT_DROP in tr.events:
        r += 5.0
    if EventKind.ON_SURFACE in tr.events:
        r += 1.0
    if EventKind.OFF_SURFACE_DROP in tr.events:
        r -= 1.0
    return r


def distance_potential(d: float, d_start: float, d_min: float) -> float:
    if d_start <= d_min:
        return 1.0
    return min(max((d_start - d) / (d_start - d_min), 0.0), 1.0)


def view_potential(p: float, view_cap: float) -> float:
    return min(max(p / view_cap, 0.0), 1.0)


def _idle(tr: Transition) -> bool:
    return tr.prev == tr.next and not tr.events


def shaped_place_reward(tr: Transition, cfg: RewardConfig, st: RewardState) -> Tuple[float, RewardState]:
    """
    放置技能的稠密奖励, 距离与可见度按历史最优势函数的增量发放,
    因此任意轨迹上两项的总额分别不超过 distance_total 与 view_total
    """
    if st.d_start is None:
        raise UninitializedState("奖励状态未初始化: 缺少 d_start")

    phi_d = distance_potential(tr.d, st.d_start, cfg.d_min)
    phi_v = view_potential(tr.p, cfg.view_cap)
    gain_d = max(0.0, phi_d - st.best_distance_potential)
    gain_v = max(0.0, phi_v - st.best_view_potential)
    reward = cfg.distance_total * gain_d + cfg.view_total * gain_v

    paid = st.contact_steps_paid
    if EventKind.CONTACT_DROP in tr.events:
        reward += cfg.contact_bonus
    if EventKind.ON_SURFACE in tr.events and paid < cfg.contact_step_cap:
        reward += cfg.contact_per_step
        paid += 1

    if tr.blocked_fraction > cfg.block_fraction_threshold:
        reward += cfg.camera_block_penalty
    anchor = tr.next.start_base
    if anchor is not None and math.hypot(tr.next.x - anchor[0], tr.next.y - anchor[1]) > cfg.wander_radius:
        reward += cfg.wander_penalty
    if cfg.idle_penalty and _idle(tr):
        reward += cfg.idle_penalty

    new_state = replace(
        st,
        best_distance_potential=max(st.best_distance_potential, phi_d),
        best_view_potential=max(st.best_view_potential, phi_v),
        contact_steps_paid=paid,
    )
    return reward, new_state


class RewardTracker:
    """累计一个放置阶段(含释放后的稳定观察步)的稀疏与稠密奖励"""

    def __init__(self, cfg: RewardConfig):
        self.cfg = cfg
        self.state: Optional[RewardState] = None
        self.sparse_total = 0.0
        self.shaped_total = 0.0

    def start(self, d_start: float):
        self.state = RewardState(d_start=d_start)

    @property
    def started(self) -> bool:
        return self.state is not None

    def step(self, tr: Transition) -> Tuple[float, float]:
        if self.state is None:
            raise UninitializedState("放置阶段尚未开始")
        sparse = sparse_place_reward(tr)
        shaped, self.state = shaped_place_reward(tr, self.cfg, self.state)
        self.sparse_total += sparse
        self.shaped_total += shaped
        return sparse, shaped
