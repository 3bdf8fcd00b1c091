# app/core/agent.py
import json
import math
import logging
import numpy as np
from enum import Enum
from pathlib import Path
from dataclasses import dataclass, field, replace
from typing import Optional, List, Dict, Tuple, Protocol
from .config import ConfigError
from .data_mapping import ROBOT
from .schemas import AgentConfig, CameraConfig, WorldParams
from .world import (
    Action, ActionKind, Frame, FORWARD, TURN_LEFT, TURN_RIGHT, SNAP, RELEASE, STOP, manip, wrap_angle
)
from .perception import LabelMap
from .navigation import (
    OccupancyGrid, back_project, plan_to_point, nearest_frontier, follow_path
)


logger = logging.getLogger(__name__)


"""--------------------高层状态机--------------------"""
class FsmPhase(str, Enum):
    NAV_TO_OBJ = "NavToObj"
    GAZE = "Gaze"
    NAV_TO_REC = "NavToRec"
    PLACE = "Place"
    DONE = "Done"


@dataclass(frozen=True)
class FsmState:
    phase: FsmPhase = FsmPhase.NAV_TO_OBJ
    retry_count: int = 0
    steps_in_skill: int = 0  # 当前技能已执行的步数, 不超过技能预算


class SkillStatus(str, Enum):
    STOPPED = "Stopped"
    BUDGET_EXHAUSTED = "BudgetExhausted"


@dataclass(frozen=True)
class SkillOutcome:
    status: SkillStatus
    steps_used: int

    def __post_init__(self):
        if self.steps_used < 1:
            raise ValueError(f"技能至少执行一步, 实际为 {self.steps_used}")


def finish_skill(s: FsmState, outcome: SkillOutcome, budget: int) -> FsmState:
    """记录刚结束的技能用掉的步数"""
    if outcome.steps_used > budget:
        raise ValueError(f"技能用了 {outcome.steps_used} 步, 超过预算 {budget}")
    return replace(s, steps_in_skill=outcome.steps_used)


def high_level_step(
        s: FsmState, outcome: SkillOutcome, holding: bool,
        retry_loop: bool = True, episode_budget_exhausted: bool = False
) -> FsmState:
    """
    技能结束后的状态转移
        - 拾取失败时重新从导航开始(retry_loop), 关闭时与原始基线一致直接进入NavToRec
        - 全局步数预算耗尽时任意状态进入Done
        - 技能因预算用完结束(BudgetExhausted)与Stop走相同的转移, 该技能的检查点照常判定;
          只有全局预算也耗尽时才由 episode_budget_exhausted 结束回合
        - 新状态的 steps_in_skill 从0开始
    """
    if s.phase == FsmPhase.DONE:
        raise ValueError("Done 是终止状态")
    if episode_budget_exhausted:
        return FsmState(FsmPhase.DONE, s.retry_count)
    if s.phase == FsmPhase.NAV_TO_OBJ:
        return FsmState(FsmPhase.GAZE, s.retry_count)
    if s.phase == FsmPhase.GAZE:
        if holding or not retry_loop:
            return FsmState(FsmPhase.NAV_TO_REC, s.retry_count)
        return FsmState(FsmPhase.NAV_TO_OBJ, s.retry_count + 1)
    if s.phase == FsmPhase.NAV_TO_REC:
        return FsmState(FsmPhase.PLACE, s.retry_count)
    return FsmState(FsmPhase.DONE, s.retry_count)


"""--------------------技能接口--------------------"""
@dataclass
class Observation:
    """技能可用的传感器: 画面(深度/遮挡)、融合后的类别图、位姿、夹爪状态"""
    frame: Frame
    labels: LabelMap
    pose: Tuple[float, float, float]
    holding: bool
    arm_extension: float = 0.0
    arm_lift: float = 0.0


@dataclass(frozen=True)
class SkillContext:
    phase: FsmPhase
    target_class: int
    cam: CameraConfig = CameraConfig()
    world: WorldParams = WorldParams()
    agent: AgentConfig = AgentConfig()


class Skill(Protocol):
    def reset(self, context: SkillContext) -> None: ...

    def act(self, obs: Observation) -> Action: ...


class SkillEnv(Protocol):
    def observe(self) -> Observation: ...

    def apply(self, action: Action) -> None: ...


def run_skill(skill: Skill, env: SkillEnv, budget: int) -> SkillOutcome:
    """循环调用技能并执行动作, 直到技能发出Stop或用完预算(Stop本身计为一步)"""
    if budget < 1:
        raise ValueError("技能预算至少为1步")
    for step in range(1, budget + 1):
        action = skill.act(env.observe())
        env.apply(action)
        if action.kind == ActionKind.STOP:
            return SkillOutcome(SkillStatus.STOPPED, step)
    return SkillOutcome(SkillStatus.BUDGET_EXHAUSTED, budget)


def _target_points(
        obs: Observation, class_id: int, cam: CameraConfig
) -> Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """类别图中class_id像素的反投影点, 仅保留有深度且不属于机械臂的像素"""
    frame = obs.frame
    mask = (obs.labels.labels == class_id) & (frame.class_map != ROBOT) & (frame.depth_map < cam.max_range)
    if not mask.any():
        return None
    X, Y, Z = back_project(frame.depth_map, obs.pose, cam)
    return X[mask], Y[mask], Z[mask]


def _bearing(pose: Tuple[float, float, float], point: Tuple[float, float]) -> Tuple[float, float]:
    x, y, theta = pose
    return math.hypot(point[0] - x, point[1] - y), wrap_angle(math.atan2(point[1] - y, point[0] - x) - theta)


def _turn_toward(bearing: float) -> Action:
    return TURN_LEFT if bearing > 0 else TURN_RIGHT


"""--------------------导航技能--------------------"""
@dataclass
class NavMemory:
    cam: CameraConfig = CameraConfig()
    world: WorldParams = WorldParams()
    stop_radius: float = 0.8
    stop_bearing_deg: float = 25.0
    follow_tolerance_deg: float = 20.0
    replan_every: int = 5
    spin_turns: int = 12
    frontier_min_distance: float = 1.0
    resolution: float = 0.2
    map_size: float = 20.0
    grid: Optional[OccupancyGrid] = None
    path: Optional[List[Tuple[int, int]]] = None
    path_to_target: bool = False
    since_replan: int = 0
    spin_left: int = 12
    target: Optional[Tuple[float, float]] = None
    target_turns: int = 0
    blacklist: set = field(default_factory=set)
    last_pose: Optional[Tuple[float, float, float]] = None
    last_action: Optional[Action] = None

    @classmethod
    def from_context(cls, context: SkillContext) -> "NavMemory":
        cfg = context.agent
        return cls(cam=context.cam, world=context.world, stop_radius=cfg.nav_stop_radius,
                   resolution=cfg.nav_map_resolution, map_size=cfg.nav_map_size)


def _emit(memory, obs: Observation, action: Action) -> Action:
    memory.last_pose = obs.pose
    memory.last_action = action
    return action


def _replan(memory: NavMemory, obs: Observation):
    grid = memory.grid
    x, y, _ = obs.pose
    passable = grid.passable(memory.world.agent_radius)
    start = grid.to_cell(x, y)
    if grid.in_bounds(start):
        passable[start] = True
    memory.since_replan = 0
    memory.path = None
    memory.path_to_target = False
    if memory.target is not None:
        memory.path = plan_to_point(grid, passable, start, memory.target, memory.stop_radius - grid.resolution)
        memory.path_to_target = memory.path is not None
        if memory.path is None:
            memory.target = None
    if memory.path is None:
        memory.path = nearest_frontier(grid, passable, start, memory.frontier_min_distance, memory.blacklist)


def nav_skill_action(obs: Observation, memory: NavMemory, target_class: int) -> Action:
    """
    基于占据栅格的导航:
        - 看到目标类别时向最近的目标点规划(A*), 否则前往最近的探索前沿
        - 距离目标不超过stop_radius且目标在视野中央附近时发出Stop
    """
    x, y, theta = obs.pose
    cam = memory.cam
    if memory.grid is None:
        memory.grid = OccupancyGrid((x, y), memory.map_size, memory.resolution)
        memory.spin_left = memory.spin_turns
    grid = memory.grid

    if memory.last_action == FORWARD and memory.last_pose is not None \
            and math.hypot(memory.last_pose[0] - x, memory.last_pose[1] - y) < 1e-9:
        # 前进受阻: 把正前方标记为障碍并重新规划
        ahead = 0.3
        grid.mark_occupied(np.array([x + ahead * math.cos(theta)]), np.array([y + ahead * math.sin(theta)]))
        memory.path = None

    valid = obs.frame.class_map != ROBOT
    grid.update(obs.frame.depth_map, valid, obs.pose, cam)
    grid.clear_around(x, y, memory.world.agent_radius)

    pts = _target_points(obs, target_class, cam)
    if pts is not None:
        X, Y, _ = pts
        k = int(np.argmin(np.hypot(X - x, Y - y)))
        if memory.target is None or math.hypot(memory.target[0] - X[k], memory.target[1] - Y[k]) > grid.resolution:
            memory.path = None
        memory.target = (float(X[k]), float(Y[k]))
        dist, bearing = _bearing(obs.pose, memory.target)
        if dist <= memory.stop_radius:
            if abs(bearing) <= math.radians(memory.stop_bearing_deg):
                return _emit(memory, obs, STOP)
            return _emit(memory, obs, _turn_toward(bearing))
    elif memory.target is not None:
        dist, bearing = _bearing(obs.pose, memory.target)
        if dist <= memory.stop_radius:
            # 记住的目标附近转了一圈仍看不到, 放弃该目标
            memory.target_turns += 1
            if memory.target_turns > memory.spin_turns:
                memory.target, memory.target_turns, memory.path = None, 0, None
            else:
                return _emit(memory, obs, _turn_toward(bearing))

    if memory.target is None and memory.spin_left > 0:
        memory.spin_left -= 1
        return _emit(memory, obs, TURN_LEFT)

    memory.since_replan += 1
    if memory.path is None or memory.since_replan >= memory.replan_every:
        _replan(memory, obs)
    if memory.path is None:
        memory.blacklist.clear()
        return _emit(memory, obs, TURN_LEFT)

    waypoint, err = follow_path(grid, memory.path, obs.pose)
    if waypoint is None:
        if memory.path_to_target:
            memory.target = None
        else:
            memory.blacklist.add(memory.path[-1])
        memory.path = None
        return _emit(memory, obs, TURN_LEFT)
    if abs(err) > math.radians(memory.follow_tolerance_deg):
        return _emit(memory, obs, _turn_toward(err))
    return _emit(memory, obs, FORWARD)


"""--------------------注视(拾取)技能--------------------"""
@dataclass
class GazeMemory:
    cam: CameraConfig = CameraConfig()
    world: WorldParams = WorldParams()
    align_tolerance_deg: float = 5.0
    snap_distance: float = 0.85
    max_rotations: int = 24
    max_creep_collisions: int = 3
    rotations: int = 0
    creep_collisions: int = 0
    snap_attempted: bool = False
    last_pose: Optional[Tuple[float, float, float]] = None
    last_action: Optional[Action] = None

    @classmethod
    def from_context(cls, context: SkillContext) -> "GazeMemory":
        return cls(cam=context.cam, world=context.world)


def gaze_skill_action(obs: Observation, memory: GazeMemory, goal_class: int) -> Action:
    """原地转动对准目标物体, 必要时小步前移, 进入Snap范围后执行Snap, 然后Stop"""
    if obs.holding or memory.snap_attempted:
        return _emit(memory, obs, STOP)

    if memory.last_action is not None and memory.last_action.kind == ActionKind.MANIP \
            and memory.last_action.d_base > 0 and memory.last_pose == obs.pose:
        memory.creep_collisions += 1

    pts = _target_points(obs, goal_class, memory.cam)
    if pts is None:
        if memory.rotations >= memory.max_rotations:
            return _emit(memory, obs, STOP)
        memory.rotations += 1
        return _emit(memory, obs, manip(d_theta=math.radians(memory.world.max_manip_turn_deg)))

    X, Y, _ = pts
    x, y, _ = obs.pose
    h = np.hypot(X - x, Y - y)
    k = int(np.argmin(h))
    near = np.hypot(X - X[k], Y - Y[k]) <= 0.3
    target = (float(X[near].mean()), float(Y[near].mean()))
    dist, bearing = _bearing(obs.pose, target)

    if abs(bearing) > math.radians(memory.align_tolerance_deg):
        limit = math.radians(memory.world.max_manip_turn_deg)
        return _emit(memory, obs, manip(d_theta=max(-limit, min(limit, bearing))))
    if dist > memory.snap_distance and memory.creep_collisions < memory.max_creep_collisions:
        return _emit(memory, obs, manip(d_base=min(memory.world.max_manip_base, dist - memory.snap_distance + 0.05)))
    memory.snap_attempted = True
    return _emit(memory, obs, SNAP)


"""--------------------放置技能--------------------"""
@dataclass
class PlaceMemory:
    goal_receptacle: int = 0
    cam: CameraConfig = CameraConfig()
    world: WorldParams = WorldParams()
    align_tolerance_deg: float = 3.0
    standoff: float = 0.7
    lift_margin: float = 0.05
    max_rotations: int = 24
    stage: str = "locate"
    rotations: int = 0
    refined: bool = False
    target: Optional[Tuple[float, float]] = None
    surface_z: Optional[float] = None
    last_pose: Optional[Tuple[float, float, float]] = None
    last_action: Optional[Action] = None

    @classmethod
    def from_context(cls, context: SkillContext) -> "PlaceMemory":
        return cls(goal_receptacle=context.target_class, cam=context.cam, world=context.world)


def _locate_surface(obs: Observation, memory: PlaceMemory) -> bool:
    """取最近的顶面点周围0.6m内顶面点的均值作为放置点, 顶面高度取最高点"""
    pts = _target_points(obs, memory.goal_receptacle, memory.cam)
    if pts is None:
        return False
    X, Y, Z = pts
    top = Z >= Z.max() - 0.03
    if not top.any():
        return False
    X, Y = X[top], Y[top]
    x, y, _ = obs.pose
    k = int(np.argmin(np.hypot(X - x, Y - y)))
    near = np.hypot(X - X[k], Y - Y[k]) <= 0.6
    memory.target = (float(X[near].mean()), float(Y[near].mean()))
    memory.surface_z = float(Z.max())
    return True


def place_skill_action(obs: Observation, memory: PlaceMemory) -> Action:
    """
    放置流程: 找到目标家具顶面 -> 转向对准 -> 靠近 -> 抬升到表面上方 -> 伸出机械臂 -> Release -> 收回 -> Stop
    放置点在第一次对准后从正面重新估计一次, 之后在靠近、抬升和伸出过程中保持不变
    """
    world = memory.world
    if memory.stage in ("locate", "align", "approach", "lift") and not obs.holding:
        memory.stage = "stop"

    if memory.stage == "locate":
        if not _locate_surface(obs, memory):
            if memory.rotations >= memory.max_rotations:
                return _emit(memory, obs, STOP)
            memory.rotations += 1
            return _emit(memory, obs, manip(d_theta=math.radians(world.max_manip_turn_deg)))
        memory.stage = "align"

    if memory.stage == "align":
        _, bearing = _bearing(obs.pose, memory.target)
        if abs(bearing) > math.radians(memory.align_tolerance_deg):
            limit = math.radians(world.max_manip_turn_deg)
            return _emit(memory, obs, manip(d_theta=max(-limit, min(limit, bearing))))
        if not memory.refined:
            memory.refined = True
            if _locate_surface(obs, memory):
                return place_skill_action(obs, memory)
        memory.stage = "approach"

    if memory.stage == "approach":
        dist, bearing = _bearing(obs.pose, memory.target)
        blocked = memory.last_action is not None and memory.last_action.kind == ActionKind.MANIP \
            and memory.last_action.d_base > 0 and memory.last_pose == obs.pose
        if abs(bearing) > math.radians(memory.align_tolerance_deg):
            memory.stage = "align"
            return place_skill_action(obs, memory)
        if dist > memory.standoff + 0.01 and not blocked:
            return _emit(memory, obs, manip(d_base=min(world.max_manip_base, dist - memory.standoff)))
        memory.stage = "lift"

    if memory.stage == "lift":
        goal = min(memory.surface_z + memory.lift_margin, world.arm_max_lift)
        if abs(obs.arm_lift - goal) > 1e-6:
            return _emit(memory, obs, manip(d_lift=max(-world.max_manip_lift, min(world.max_manip_lift, goal - obs.arm_lift))))
        memory.stage = "extend"

    if memory.stage == "extend":
        dist, _ = _bearing(obs.pose, memory.target)
        goal = min(max(dist - world.arm_base_reach, 0.0), world.arm_max_ext)
        if abs(obs.arm_extension - goal) > 1e-6:
            return _emit(memory, obs, manip(d_ext=max(-world.max_manip_ext, min(world.max_manip_ext, goal - obs.arm_extension))))
        memory.stage = "release"

    if memory.stage == "release":
        memory.stage = "retract"
        if obs.holding:
            return _emit(memory, obs, RELEASE)

    if memory.stage == "retract":
        if obs.arm_extension > 1e-6:
            return _emit(memory, obs, manip(d_ext=-min(world.max_manip_ext, obs.arm_extension)))
        memory.stage = "stop"

    return _emit(memory, obs, STOP)


"""--------------------技能实现--------------------"""
class ScriptedNavSkill:
    def reset(self, context: SkillContext) -> None:
        self.target = context.target_class
        self.memory = NavMemory.from_context(context)

    def act(self, obs: Observation) -> Action:
        return nav_skill_action(obs, self.memory, self.target)


class ScriptedGazeSkill:
    def reset(self, context: SkillContext) -> None:
        self.target = context.target_class
        self.memory = GazeMemory.from_context(context)

    def act(self, obs: Observation) -> Action:
        return gaze_skill_action(obs, self.memory, self.target)


class ScriptedPlaceSkill:
    def reset(self, context: SkillContext) -> None:
        self.memory = PlaceMemory.from_context(context)

    def act(self, obs: Observation) -> Action:
        return place_skill_action(obs, self.memory)


class ReplaySkill:
    """按顺序回放录制好的动作序列, 每次reset取下一段, 序列耗尽后发出Stop"""

    def __init__(self, sequences: List[List[Dict]]):
        self.sequences = [[Action.from_dict(a) for a in seq] for seq in sequences]
        self.invocation = -1
        self.cursor = 0

    def reset(self, context: SkillContext) -> None:
        self.invocation += 1
        self.cursor = 0

    def act(self, obs: Observation) -> Action:
        if self.invocation >= len(self.sequences):
            return STOP
        seq = self.sequences[self.invocation]
        if self.cursor >= len(seq):
            return STOP
        self.cursor += 1
        return seq[self.cursor - 1]


def load_replay(path: str | Path) -> Dict[str, Dict[str, List[List[Dict]]]]:
    """
    读取录制的动作文件, 格式:
        {"<episode_id>": {"NavToObj": [[{"kind": "Forward"}, ...], ...], "Gaze": [...], ...}}
    同一阶段的多段序列依次对应重试时的多次调用
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"回放文件 {path} 不存在")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def build_skills(cfg: AgentConfig, episode_id: int = 0, replay: Optional[Dict] = None) -> Dict[FsmPhase, Skill]:
    """根据配置为一个回合创建四个技能"""
    if cfg.skill_mode == "replay":
        if replay is None:
            if not cfg.replay_path:
                raise ConfigError("replay模式需要配置 agent.replay_path")
            replay = load_replay(cfg.replay_path)
        recorded = replay.get(str(episode_id), {})
        return {phase: ReplaySkill(recorded.get(phase.value, []))
                for phase in (FsmPhase.NAV_TO_OBJ, FsmPhase.GAZE, FsmPhase.NAV_TO_REC, FsmPhase.PLACE)}
    return {
        FsmPhase.NAV_TO_OBJ: ScriptedNavSkill(),
        FsmPhase.GAZE: ScriptedGazeSkill(),
        FsmPhase.NAV_TO_REC: ScriptedNavSkill(),
        FsmPhase.PLACE: ScriptedPlaceSkill(),
    }
