# app/core/evaluation.py
import math
import logging
from enum import Enum
from collections import Counter
from dataclasses import dataclass, field, asdict
from typing import Optional, List, Iterable, Sequence, Tuple, Dict
from .config import OvmmError
from .schemas import Episode, SuccessFlags, MetricsReport
from .world import Scene, AgentState, Frame, PlacementOutcome, HELD
from ..utils.metrics import percent, mean_percent, conditional_percent


logger = logging.getLogger(__name__)


class EmptyInput(OvmmError):
    """没有可以聚合的回合"""


class FailureCause(str, Enum):
    UNSTABLE_PLACE = "UnstablePlace"
    MISSED_RECEPTACLE = "MissedReceptacle"
    CAMERA_OVERLAP = "CameraOverlap"
    DID_NOT_START_PLACE = "DidNotStartPlace"
    UNCERTAIN = "Uncertain"
    NOT_FAILED = "NotFailed"


PHASES = ("NavToObj", "Gaze", "NavToRec", "Place")


"""--------------------回合轨迹--------------------"""
@dataclass
class StepRecord:
    step: int
    phase: str
    action: Dict
    events: List[str]
    blocked_fraction: float
    base: Tuple[float, float, float]
    sparse_reward: float = 0.0
    shaped_reward: float = 0.0


@dataclass
class Checkpoint:
    """某个技能结束时对应子任务的检查结果, cut表示被全局步数预算截断"""
    phase: str
    step: int
    passed: bool
    cut: bool = False


@dataclass
class PlacementSummary:
    support_class: Optional[int]
    on_goal_receptacle: bool
    stable: bool
    drop_height: float


@dataclass
class EpisodeTrace:
    episode_id: int
    goal_object: int
    goal_receptacle: int
    steps: List[StepRecord] = field(default_factory=list)
    checkpoints: List[Checkpoint] = field(default_factory=list)
    phases_entered: List[str] = field(default_factory=list)
    released: bool = False
    placement: Optional[PlacementSummary] = None

    def place_blocked_fractions(self) -> List[float]:
        return [s.blocked_fraction for s in self.steps if s.phase == "Place"]

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "EpisodeTrace":
        data = dict(data)
        data["steps"] = [StepRecord(**{**s, "base": tuple(s["base"])}) for s in data.get("steps", [])]
        data["checkpoints"] = [Checkpoint(**c) for c in data.get("checkpoints", [])]
        if data.get("placement"):
            data["placement"] = PlacementSummary(**data["placement"])
        return cls(**data)


"""--------------------子任务检查--------------------"""
def _planar(ax: float, ay: float, bx: float, by: float) -> float:
    return math.hypot(ax - bx, ay - by)


def check_nav_to_obj(agent: AgentState, scene: Scene, ep: Episode, frame: Frame, radius: float = 1.0) -> bool:
    """距离某个目标物体实例不超过radius, 且该实例在当前画面中可见(闭区间)"""
    for obj in scene.objects_of_class(ep.prompt.object):
        if obj.resting_on == HELD:
            continue
        if _planar(agent.x, agent.y, obj.position[0], obj.position[1]) <= radius and frame.instance_pixels(obj.id) > 0:
            return True
    return False


def check_pick(agent: AgentState, scene: Scene, ep: Episode) -> bool:
    if agent.gripper_holding is None:
        return False
    obj = scene.object(agent.gripper_holding)
    return obj is not None and obj.class_id == ep.prompt.object


def check_nav_to_rec(agent: AgentState, scene: Scene, ep: Episode, radius: float = 1.0) -> bool:
    return any(r.footprint.distance(agent.x, agent.y) <= radius
               for r in scene.receptacles_of_class(ep.prompt.goal_receptacle))


def check_place(outcome: Optional[PlacementOutcome], ep: Episode) -> bool:
    """物体最终停在任意一个目标家具实例上且达到稳定"""
    if outcome is None:
        return False
    return outcome.support_class == ep.prompt.goal_receptacle and outcome.stable


"""--------------------回合结果--------------------"""
def gate(chain: Sequence[bool]) -> Tuple[bool, ...]:
    """顺序门控: 前面任一子任务失败, 后续全部记为失败"""
    out, ok = [], True
    for flag in chain:
        ok = ok and bool(flag)
        out.append(ok)
    return tuple(out)


def _passed(cp: Optional[Checkpoint]) -> bool:
    return cp is not None and cp.passed and not cp.cut


def episode_flags(trace: EpisodeTrace) -> SuccessFlags:
    """
    根据各技能结束时的检查结果计算四个子任务标记
        - NavToObj取第一次成功拾取之前的最后一次导航检查, 没有成功拾取时取最后一次
        - 被全局预算截断的检查视为失败
    """
    cps = trace.checkpoints
    first_pick = next((i for i, cp in enumerate(cps) if cp.phase == "Gaze" and _passed(cp)), None)
    horizon = cps[:first_pick] if first_pick is not None else cps
    nav_obj = next((cp for cp in reversed(horizon) if cp.phase == "NavToObj"), None)
    nav_rec = next((cp for cp in reversed(cps) if cp.phase == "NavToRec"), None)
    place = next((cp for cp in reversed(cps) if cp.phase == "Place"), None)
    chain = gate([_passed(nav_obj), first_pick is not None, _passed(nav_rec), _passed(place)])
    return SuccessFlags(nav_to_obj=chain[0], pick=chain[1], nav_to_rec=chain[2], place=chain[3])


def classify_place_failure(trace: EpisodeTrace, block_threshold: float = 0.2, overlap_share: float = 0.5) -> FailureCause:
    """按优先级判断放置失败原因, 对任意轨迹都有确定的结果"""
    if episode_flags(trace).place:
        return FailureCause.NOT_FAILED
    if "Place" not in trace.phases_entered:
        return FailureCause.DID_NOT_START_PLACE
    if trace.released and trace.placement is not None:
        if not trace.placement.on_goal_receptacle:
            return FailureCause.MISSED_RECEPTACLE
        if not trace.placement.stable:
            return FailureCause.UNSTABLE_PLACE
    blocked = trace.place_blocked_fractions()
    if not trace.released and blocked:
        share = sum(b > block_threshold for b in blocked) / len(blocked)
        if share >= overlap_share:
            return FailureCause.CAMERA_OVERLAP
    return FailureCause.UNCERTAIN


def failure_histogram(causes: Iterable[FailureCause | str]) -> List[Tuple[FailureCause, int, float]]:
    """失败原因的数量与百分比(不含NotFailed), 按FailureCause的定义顺序排列"""
    counts = Counter(FailureCause(c) for c in causes)
    counts.pop(FailureCause.NOT_FAILED, None)
    total = sum(counts.values())
    order = list(FailureCause)
    rows = sorted(counts.items(), key=lambda kv: order.index(kv[0]))
    return [(cause, n, percent(n, total)) for cause, n in rows]


"""--------------------指标--------------------"""
def relative_rates(report: MetricsReport) -> List[float]:
    """各技能的相对成功率: 第一项为NavToObj成功率, 之后为相对于前一子任务的条件成功率"""
    rates = report.absolute_rates
    out = [rates[0]]
    for prev, cur in zip(rates[:-1], rates[1:]):
        out.append(conditional_percent(cur, prev))
    return out


def report_from_rates(rates: Sequence[float], n_episodes: int = 0) -> MetricsReport:
    """根据已知的四个子任务成功率(%)直接构造指标"""
    if len(rates) != 4:
        raise ValueError(f"需要四个子任务成功率, 实际为 {len(rates)} 个")
    nav_obj, pick, nav_rec, place = (float(r) for r in rates)
    report = MetricsReport(
        n_episodes=n_episodes, nav_to_obj_rate=nav_obj, pick_rate=pick, nav_to_rec_rate=nav_rec,
        overall_success_rate=place, partial_success_metric=sum(rates) / 4, relative_rates=[],
    )
    report.relative_rates = relative_rates(report)
    return report


def aggregate_metrics(flags: Sequence[SuccessFlags]) -> MetricsReport:
    if not flags:
        raise EmptyInput("没有可以聚合的回合结果")
    columns = list(zip(*(f.as_tuple() for f in flags)))
    rates = [mean_percent(col) for col in columns]
    return report_from_rates(rates, n_episodes=len(flags))
