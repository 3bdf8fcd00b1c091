# app/core/world.py
import math
import logging
import numpy as np
from enum import Enum
from dataclasses import dataclass, field, replace
from typing import Optional, List, Tuple, Dict
from .config import OvmmError
from .data_mapping import (
    BACKGROUND, WALL, ROBOT, RECEPTACLE_CATALOG, OBJECT_CATALOG, get_class_name
)
from .schemas import SceneSpec, CameraConfig, WorldParams, Prompt


logger = logging.getLogger(__name__)

# ObjectInstance.resting_on 的两个特殊取值, 家具id从1开始
FLOOR = 0
HELD = -1


class PlacementInfeasible(OvmmError):
    """场景实例在有限次重试内无法无重叠地放置"""


class InvalidAction(OvmmError):
    """动作与当前状态不符(持物时Snap, 空手时Release)"""


def wrap_angle(a: float) -> float:
    """角度归一化到 [-pi, pi)"""
    return (a + math.pi) % (2 * math.pi) - math.pi


"""--------------------场景数据结构--------------------"""
@dataclass(frozen=True)
class Rect:
    """轴对齐矩形(m)"""
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def depth(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.depth

    @property
    def center(self) -> Tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    def distance(self, x: float, y: float) -> float:
        """点到矩形的距离, 点在矩形内部时为0"""
        dx = max(self.x0 - x, 0.0, x - self.x1)
        dy = max(self.y0 - y, 0.0, y - self.y1)
        return math.hypot(dx, dy)

    def expand(self, m: float) -> "Rect":
        return Rect(self.x0 - m, self.y0 - m, self.x1 + m, self.y1 + m)

    def overlaps(self, other: "Rect") -> bool:
        return self.x0 < other.x1 and other.x0 < self.x1 and self.y0 < other.y1 and other.y0 < self.y1

    def to_list(self) -> List[float]:
        return [self.x0, self.y0, self.x1, self.y1]


@dataclass(frozen=True)
class Wall:
    """轴对齐墙段, (x0,y0)-(x1,y1)为中心线"""
    x0: float
    y0: float
    x1: float
    y1: float
    thickness: float = 0.1
    height: float = 2.5

    @property
    def box(self) -> Rect:
        h = self.thickness / 2
        return Rect(min(self.x0, self.x1) - h, min(self.y0, self.y1) - h,
                    max(self.x0, self.x1) + h, max(self.y0, self.y1) + h)


@dataclass(frozen=True)
class ReceptacleInstance:
    id: int
    class_id: int
    footprint: Rect
    surface_height: float

    @property
    def name(self) -> str:
        return get_class_name(self.class_id)


@dataclass
class ObjectInstance:
    """可抓取物体, position为底面中心"""
    id: int
    class_id: int
    position: Tuple[float, float, float]
    size: float
    height: float
    speed: float = 0.0
    resting_on: int = FLOOR

    @property
    def center(self) -> Tuple[float, float, float]:
        x, y, z = self.position
        return (x, y, z + self.height / 2)


@dataclass
class Scene:
    bounds: Rect
    walls: List[Wall]
    receptacles: List[ReceptacleInstance]
    objects: List[ObjectInstance]
    rng_seed: int
    prompt: Optional[Prompt] = None

    def receptacle(self, rec_id: int) -> Optional[ReceptacleInstance]:
        return next((r for r in self.receptacles if r.id == rec_id), None)

    def object(self, obj_id: int) -> Optional[ObjectInstance]:
        return next((o for o in self.objects if o.id == obj_id), None)

    def receptacles_of_class(self, class_id: int) -> List[ReceptacleInstance]:
        return [r for r in self.receptacles if r.class_id == class_id]

    def objects_of_class(self, class_id: int) -> List[ObjectInstance]:
        return [o for o in self.objects if o.class_id == class_id]

    def held_object(self) -> Optional[ObjectInstance]:
        return next((o for o in self.objects if o.resting_on == HELD), None)

    def instance_class(self, instance_id: int) -> int:
        """实例id -> 类别id, 未知实例返回BACKGROUND"""
        rec = self.receptacle(instance_id)
        if rec is not None:
            return rec.class_id
        obj = self.object(instance_id)
        return obj.class_id if obj is not None else BACKGROUND

    def box_table(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """场景中所有可渲染的长方体: (lo[N,3], hi[N,3], class_id[N], instance_id[N]), 被抓取的物体不参与"""
        lo, hi, classes, instances = [], [], [], []
        for w in self.walls:
            b = w.box
            lo.append((b.x0, b.y0, 0.0)); hi.append((b.x1, b.y1, w.height))
            classes.append(WALL); instances.append(0)
        for r in self.receptacles:
            f = r.footprint
            lo.append((f.x0, f.y0, 0.0)); hi.append((f.x1, f.y1, r.surface_height))
            classes.append(r.class_id); instances.append(r.id)
        for o in self.objects:
            if o.resting_on == HELD:
                continue
            x, y, z = o.position
            s = o.size / 2
            lo.append((x - s, y - s, z)); hi.append((x + s, y + s, z + o.height))
            classes.append(o.class_id); instances.append(o.id)
        return (np.asarray(lo, dtype=np.float64).reshape(-1, 3),
                np.asarray(hi, dtype=np.float64).reshape(-1, 3),
                np.asarray(classes, dtype=np.int32),
                np.asarray(instances, dtype=np.int32))


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    theta: float
    arm_extension: float = 0.0
    arm_lift: float = 0.0
    gripper_holding: Optional[int] = None
    start_base: Optional[Tuple[float, float]] = None

    @property
    def base(self) -> Tuple[float, float, float]:
        return (self.x, self.y, self.theta)

    def gripper_position(self, params: WorldParams) -> Tuple[float, float, float]:
        reach = params.arm_base_reach + self.arm_extension
        return (self.x + reach * math.cos(self.theta), self.y + reach * math.sin(self.theta), self.arm_lift)


@dataclass
class Frame:
    class_map: np.ndarray
    instance_map: np.ndarray
    depth_map: np.ndarray
    blocked_fraction: float = 0.0

    @property
    def height(self) -> int:
        return self.class_map.shape[0]

    @property
    def width(self) -> int:
        return self.class_map.shape[1]

    def instance_pixels(self, instance_id: int) -> int:
        return int(np.count_nonzero(self.instance_map == instance_id))


"""--------------------动作与事件--------------------"""
class ActionKind(str, Enum):
    FORWARD = "Forward"
    TURN_LEFT = "TurnLeft"
    TURN_RIGHT = "TurnRight"
    MANIP = "Manip"
    SNAP = "Snap"
    RELEASE = "Release"
    STOP = "Stop"


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    d_base: float = 0.0
    d_theta: float = 0.0
    d_ext: float = 0.0
    d_lift: float = 0.0

    def to_dict(self) -> Dict:
        if self.kind == ActionKind.MANIP:
            return {"kind": self.kind.value, "d_base": self.d_base, "d_theta": self.d_theta,
                    "d_ext": self.d_ext, "d_lift": self.d_lift}
        return {"kind": self.kind.value}

    @classmethod
    def from_dict(cls, data: Dict) -> "Action":
        kind = ActionKind(data["kind"])
        return cls(kind, **{k: float(v) for k, v in data.items() if k != "kind"})


FORWARD = Action(ActionKind.FORWARD)
TURN_LEFT = Action(ActionKind.TURN_LEFT)
TURN_RIGHT = Action(ActionKind.TURN_RIGHT)
SNAP = Action(ActionKind.SNAP)
RELEASE = Action(ActionKind.RELEASE)
STOP = Action(ActionKind.STOP)


def manip(d_base: float = 0.0, d_theta: float = 0.0, d_ext: float = 0.0, d_lift: float = 0.0) -> Action:
    return Action(ActionKind.MANIP, d_base, d_theta, d_ext, d_lift)


class EventKind(str, Enum):
    COLLISION = "Collision"
    PICK_SUCCESS = "PickSuccess"
    PICK_FAIL = "PickFail"
    RELEASED = "Released"
    # 以下三个由回合层根据放置结果与目标家具类别生成
    CONTACT_DROP = "ContactDrop"
    ON_SURFACE = "OnSurface"
    OFF_SURFACE_DROP = "OffSurfaceDrop"


@dataclass(frozen=True)
class PlacementOutcome:
    """释放后物体的落点与速度衰减过程"""
    object_id: int
    impact_support: int
    support: int
    support_class: Optional[int]
    drop_height: float
    position: Tuple[float, float, float]
    speeds: Tuple[float, ...]
    supports: Tuple[int, ...]
    stable: bool
    impact_class: Optional[int] = None


@dataclass(frozen=True)
class StepEvent:
    kind: EventKind
    object_id: Optional[int] = None
    outcome: Optional[PlacementOutcome] = None


"""--------------------场景生成--------------------"""
def sample_prompt(rng: np.random.Generator, spec: SceneSpec) -> Prompt:
    obj = int(rng.choice(spec.object_classes))
    start, goal = (int(c) for c in rng.choice(spec.receptacle_classes, size=2, replace=False))
    return Prompt(object=obj, start_receptacle=start, goal_receptacle=goal)


def _build_walls(rng: np.random.Generator, spec: SceneSpec) -> Tuple[List[Wall], List[Rect]]:
    """外墙 + 带门洞的内墙, 同时返回门洞附近的禁放区域"""
    W, D, t, h = spec.width, spec.depth, spec.wall_thickness, spec.wall_height
    walls = [
        Wall(0.0, 0.0, W, 0.0, t, h), Wall(0.0, D, W, D, t, h),
        Wall(0.0, 0.0, 0.0, D, t, h), Wall(W, 0.0, W, D, t, h),
    ]
    keepouts = []
    n_inner = int(rng.integers(spec.interior_walls[0], spec.interior_walls[1] + 1))
    half_door = spec.door_width / 2
    for i in range(n_inner):
        vertical = i % 2 == 0
        span = D if vertical else W
        across = W if vertical else D
        pos = float(rng.uniform(0.35 * across, 0.65 * across))
        door = float(rng.uniform(spec.door_width, span - spec.door_width))
        if vertical:
            walls += [Wall(pos, 0.0, pos, door - half_door, t, h), Wall(pos, door + half_door, pos, D, t, h)]
            keepouts.append(Rect(pos - spec.min_clearance, door - half_door, pos + spec.min_clearance, door + half_door))
        else:
            walls += [Wall(0.0, pos, door - half_door, pos, t, h), Wall(door + half_door, pos, W, pos, t, h)]
            keepouts.append(Rect(door - half_door, pos - spec.min_clearance, door + half_door, pos + spec.min_clearance))
    return walls, keepouts


def _place_receptacle(
        rng: np.random.Generator, spec: SceneSpec, rec_id: int, class_id: int,
        walls: List[Wall], keepouts: List[Rect], placed: List[ReceptacleInstance]
) -> ReceptacleInstance:
    _, w_range, d_range, h_range = RECEPTACLE_CATALOG[class_id]
    for _ in range(spec.max_retries):
        w = float(rng.uniform(*w_range))
        d = float(rng.uniform(*d_range))
        if rng.random() < 0.5:
            w, d = d, w
        surface = float(rng.uniform(*h_range))
        margin = spec.min_clearance
        if spec.width - 2 * margin < w or spec.depth - 2 * margin < d:
            continue
        cx = float(rng.uniform(margin + w / 2, spec.width - margin - w / 2))
        cy = float(rng.uniform(margin + d / 2, spec.depth - margin - d / 2))
        fp = Rect(cx - w / 2, cy - d / 2, cx + w / 2, cy + d / 2)
        zone = fp.expand(margin)
        if any(zone.overlaps(r.footprint) for r in placed):
            continue
        if any(zone.overlaps(wall.box) for wall in walls[4:]) or any(fp.overlaps(k) for k in keepouts):
            continue
        return ReceptacleInstance(id=rec_id, class_id=class_id, footprint=fp, surface_height=surface)
    raise PlacementInfeasible(f"无法放置家具 {get_class_name(class_id)} (重试 {spec.max_retries} 次)")


def _place_object(
        rng: np.random.Generator, spec: SceneSpec, obj_id: int, class_id: int,
        rec: ReceptacleInstance, placed: List[ObjectInstance]
) -> ObjectInstance:
    _, size, height = OBJECT_CATALOG[class_id]
    fp = rec.footprint
    max_inset = min(fp.width, fp.depth) / 2
    for _ in range(spec.max_retries):
        inset = min(float(rng.uniform(*spec.object_edge_inset)), max_inset)
        edge = int(rng.integers(4))
        if edge in (0, 1):
            x = float(rng.uniform(fp.x0 + inset, fp.x1 - inset)) if fp.width > 2 * inset else fp.center[0]
            y = fp.y0 + inset if edge == 0 else fp.y1 - inset
        else:
            y = float(rng.uniform(fp.y0 + inset, fp.y1 - inset)) if fp.depth > 2 * inset else fp.center[1]
            x = fp.x0 + inset if edge == 2 else fp.x1 - inset
        if any(o.resting_on == rec.id and math.hypot(o.position[0] - x, o.position[1] - y) < (o.size + size) / 2 + 0.02
               for o in placed):
            continue
        return ObjectInstance(id=obj_id, class_id=class_id, position=(x, y, rec.surface_height),
                              size=size, height=height, resting_on=rec.id)
    raise PlacementInfeasible(f"无法在 {rec.name}#{rec.id} 上放置物体 {get_class_name(class_id)}")


def generate_scene(seed: int, spec: SceneSpec, prompt: Optional[Prompt] = None) -> Scene:
    """
    根据种子和场景规格生成场景, 对同一组(seed, spec, prompt)结果完全一致
    prompt为空时使用同一随机流采样的任务, 生成的场景保证:
        - 起始家具类别与目标家具类别各至少一个实例
        - 至少一个起始家具实例上放着目标物体
    """
    rng = np.random.default_rng(seed)
    # 无论是否给定prompt都先消耗一次采样, 保证同一seed的布局一致
    sampled = sample_prompt(rng, spec)
    prompt = prompt or sampled

    walls, keepouts = _build_walls(rng, spec)

    n_rec = max(int(rng.integers(spec.receptacle_count[0], spec.receptacle_count[1] + 1)), 2)
    rec_classes = [prompt.start_receptacle, prompt.goal_receptacle]
    rec_classes += [int(c) for c in rng.choice(spec.receptacle_classes, size=n_rec - 2)]
    receptacles: List[ReceptacleInstance] = []
    for i, class_id in enumerate(rec_classes):
        receptacles.append(_place_receptacle(rng, spec, i + 1, class_id, walls, keepouts, receptacles))

    n_obj = max(int(rng.integers(spec.object_count[0], spec.object_count[1] + 1)), 1)
    objects: List[ObjectInstance] = []
    start_recs = [r for r in receptacles if r.class_id == prompt.start_receptacle]
    next_id = len(receptacles) + 1
    for i in range(n_obj):
        if i == 0:
            class_id = prompt.object
            rec = start_recs[int(rng.integers(len(start_recs)))]
        else:
            class_id = int(rng.choice(spec.object_classes))
            rec = receptacles[int(rng.integers(len(receptacles)))]
        objects.append(_place_object(rng, spec, next_id + i, class_id, rec, objects))

    scene = Scene(bounds=Rect(0.0, 0.0, spec.width, spec.depth), walls=walls,
                  receptacles=receptacles, objects=objects, rng_seed=seed, prompt=prompt)
    logger.debug(f"场景生成完成: seed={seed}, 家具 {len(receptacles)} 个, 物体 {len(objects)} 个, 内墙 {len(walls) - 4} 段")
    return scene


def is_free(scene: Scene, x: float, y: float, radius: float) -> bool:
    """半径为radius的圆盘是否完全位于场景内且不与墙体/家具相交"""
    b = scene.bounds
    if not (b.x0 + radius <= x <= b.x1 - radius and b.y0 + radius <= y <= b.y1 - radius):
        return False
    if any(w.box.distance(x, y) < radius for w in scene.walls):
        return False
    return all(r.footprint.distance(x, y) >= radius for r in scene.receptacles)


def sample_agent_start(
        scene: Scene, rng: np.random.Generator, params: WorldParams = WorldParams(),
        min_goal_distance: float = 1.5, max_retries: int = 500
) -> Tuple[float, float, float]:
    """在空闲区域采样智能体初始位姿, 与目标物体保持一定距离"""
    goals = scene.objects_of_class(scene.prompt.object) if scene.prompt else []
    b = scene.bounds
    for _ in range(max_retries):
        x = float(rng.uniform(b.x0, b.x1))
        y = float(rng.uniform(b.y0, b.y1))
        if not is_free(scene, x, y, params.agent_radius + 0.05):
            continue
        if any(math.hypot(o.position[0] - x, o.position[1] - y) < min_goal_distance for o in goals):
            continue
        theta = float(rng.uniform(-math.pi, math.pi))
        return (x, y, theta)
    raise PlacementInfeasible("无法为智能体找到合法的初始位姿")


"""--------------------渲染--------------------"""
def camera_rays(cam: CameraConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    相机射线扇面的方位角与俯仰角(弧度)
        - 方位角: 左正右负, 每列取像素中心
        - 俯仰角: 竖直视场 = 水平视场 * H / W, 以tilt为中心
    """
    hfov = math.radians(cam.hfov_deg)
    vfov = hfov * cam.height / cam.width
    cols = np.arange(cam.width, dtype=np.float64)
    rows = np.arange(cam.height, dtype=np.float64)
    az = hfov / 2 - (cols + 0.5) * (hfov / cam.width)
    el = math.radians(cam.tilt_deg) + vfov / 2 - (rows + 0.5) * (vfov / cam.height)
    return az, el


def _ray_box_distances(origin: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """slab法求射线与长方体的最近交点参数t, 未命中为inf; dirs形状(..., 3), 返回(N, ...)"""
    d = np.where(dirs == 0.0, 1e-12, dirs)
    inv = 1.0 / d
    shape = (lo.shape[0],) + (1,) * (dirs.ndim - 1) + (3,)
    t1 = (lo.reshape(shape) - origin) * inv
    t2 = (hi.reshape(shape) - origin) * inv
    t_near = np.minimum(t1, t2).max(axis=-1)
    t_far = np.maximum(t1, t2).min(axis=-1)
    hit = (t_near <= t_far) & (t_near > 0.0)
    return np.where(hit, t_near, np.inf)


def render(scene: Scene, agent: AgentState, cam: CameraConfig = CameraConfig()) -> Frame:
    """按射线扇面渲染第一视角的类别图/实例图/深度图, 最近命中者可见, 地面不渲染"""
    H, W = cam.height, cam.width
    az, el = camera_rays(cam)
    yaw = agent.theta + az[None, :]
    cos_el = np.cos(el)[:, None]
    dirs = np.stack([
        cos_el * np.cos(yaw),
        cos_el * np.sin(yaw),
        np.broadcast_to(np.sin(el)[:, None], (H, W)),
    ], axis=-1)
    origin = np.array([agent.x, agent.y, cam.height_m])

    class_map = np.full((H, W), BACKGROUND, dtype=np.uint8)
    instance_map = np.zeros((H, W), dtype=np.int32)
    depth_map = np.full((H, W), cam.max_range, dtype=np.float64)

    lo, hi, classes, instances = scene.box_table()
    if len(lo):
        t = _ray_box_distances(origin, dirs, lo, hi)
        nearest = np.argmin(t, axis=0)
        t_best = np.take_along_axis(t, nearest[None], axis=0)[0]
        depth = t_best * cos_el * np.cos(az)[None, :]
        visible = np.isfinite(t_best) & (depth <= cam.max_range)
        class_map[visible] = classes[nearest[visible]]
        instance_map[visible] = instances[nearest[visible]]
        quantized = np.round(depth[visible] / cam.depth_quantum) * cam.depth_quantum
        depth_map[visible] = np.clip(quantized, cam.depth_quantum, cam.max_range)

    blocked_fraction = 0.0
    if agent.arm_extension > cam.occlusion_onset:
        span = max(cam.occlusion_full_ext - cam.occlusion_onset, 1e-9)
        f = cam.max_blocked_fraction * min((agent.arm_extension - cam.occlusion_onset) / span, 1.0)
        rows = int(round(f * H))
        if rows > 0:
            class_map[H - rows:] = ROBOT
            instance_map[H - rows:] = 0
            depth_map[H - rows:] = cam.arm_depth
        blocked_fraction = rows / H

    return Frame(class_map=class_map, instance_map=instance_map, depth_map=depth_map,
                 blocked_fraction=blocked_fraction)


def line_of_sight(
        scene: Scene, p0: Tuple[float, float, float], p1: Tuple[float, float, float],
        ignore: Tuple[int, ...] = ()
) -> bool:
    """线段p0->p1是否未被任何长方体遮挡, ignore中的实例不参与"""
    lo, hi, _, instances = scene.box_table()
    keep = ~np.isin(instances, np.asarray(ignore, dtype=np.int32)) if ignore else np.ones(len(lo), bool)
    if not keep.any():
        return True
    origin = np.asarray(p0, dtype=np.float64)
    seg = np.asarray(p1, dtype=np.float64) - origin
    t = _ray_box_distances(origin, seg[None, :], lo[keep], hi[keep])
    return bool(np.all(t >= 1.0 - 1e-9))


"""--------------------运动学与物理--------------------"""
def _stable(speeds: Tuple[float, ...], v_stable: float, k_stable: int, tol: float = 1e-9) -> bool:
    """连续k_stable步速度严格低于阈值, 与阈值相差不超过tol的速度不算低于阈值"""
    run = 0
    for v in speeds:
        run = run + 1 if v < v_stable - tol else 0
        if run >= k_stable:
            return True
    return False


def settle_object(scene: Scene, agent: AgentState, params: WorldParams = WorldParams()) -> PlacementOutcome:
    """
    释放被抓取的物体并模拟落点与速度衰减:
        - 夹爪(x,y)位于某家具范围内且高于其表面 -> 落在该家具上, 否则落地
        - 落地瞬间速度 = impact_gain * 下落高度, 此后每步乘以damping, 沿朝向滚动
        - 滚出家具边缘则掉到地面, 速度继续衰减
        - 稳定 = 速度连续低于阈值 且 最终仍停在落地时接触的支撑面上
    会就地更新场景中的物体状态
    """
    obj = scene.held_object()
    if obj is None or agent.gripper_holding != obj.id:
        raise InvalidAction("当前没有抓取任何物体, 无法释放")
    gx, gy, gz = agent.gripper_position(params)

    candidates = [r for r in scene.receptacles if r.footprint.contains(gx, gy) and gz - r.surface_height >= 0]
    support = max(candidates, key=lambda r: r.surface_height) if candidates else None
    z = support.surface_height if support else 0.0
    drop_height = max(gz - z, 0.0)
    impact_support = support.id if support else FLOOR
    impact_class = support.class_id if support else None

    b = scene.bounds.expand(-obj.size / 2)
    dx, dy = math.cos(agent.theta), math.sin(agent.theta)
    x, y = gx, gy
    v = params.impact_gain * drop_height
    speeds, supports = [], []
    for _ in range(params.settle_horizon):
        speeds.append(v)
        x, y = x + v * dx, y + v * dy
        cx, cy = min(max(x, b.x0), b.x1), min(max(y, b.y0), b.y1)
        if (cx, cy) != (x, y):
            x, y, v = cx, cy, 0.0
        if support is not None and not support.footprint.contains(x, y):
            support, z = None, 0.0
        supports.append(support.id if support else FLOOR)
        v *= params.damping

    obj.position = (x, y, z)
    obj.speed = v
    obj.resting_on = supports[-1]
    stable = _stable(tuple(speeds), params.v_stable, params.k_stable) and supports[-1] == impact_support
    outcome = PlacementOutcome(
        object_id=obj.id, impact_support=impact_support, support=supports[-1],
        support_class=support.class_id if support else None, drop_height=drop_height,
        position=obj.position, speeds=tuple(speeds), supports=tuple(supports), stable=stable,
        impact_class=impact_class,
    )
    logger.debug(f"物体 #{obj.id} 释放: 下落高度 {drop_height:.3f} m, 落点 {outcome.support}, 稳定={stable}")
    return outcome


def _try_move(scene: Scene, agent: AgentState, distance: float, params: WorldParams) -> Optional[AgentState]:
    x = agent.x + distance * math.cos(agent.theta)
    y = agent.y + distance * math.sin(agent.theta)
    if not is_free(scene, x, y, params.agent_radius):
        return None
    return replace(agent, x=x, y=y)


def _clamp(v: float, limit: float) -> float:
    return max(-limit, min(limit, v))


def _snap(
        scene: Scene, agent: AgentState, params: WorldParams, cam: CameraConfig,
        rng: Optional[np.random.Generator], snap_class: Optional[int]
) -> Tuple[AgentState, List[StepEvent]]:
    candidates = [o for o in scene.objects if o.resting_on != HELD and (snap_class is None or o.class_id == snap_class)]
    if not candidates:
        return agent, [StepEvent(EventKind.PICK_FAIL)]
    target = min(candidates, key=lambda o: math.hypot(o.position[0] - agent.x, o.position[1] - agent.y))
    dist = math.hypot(target.position[0] - agent.x, target.position[1] - agent.y)
    bearing = wrap_angle(math.atan2(target.position[1] - agent.y, target.position[0] - agent.x) - agent.theta)
    camera = (agent.x, agent.y, cam.height_m)
    ok = (dist <= params.snap_range
          and abs(bearing) <= math.radians(params.snap_cone_deg)
          and line_of_sight(scene, camera, target.center, ignore=(target.id,)))
    if ok and params.snap_failure_prob > 0 and rng is not None:
        ok = rng.random() >= params.snap_failure_prob
    if not ok:
        return agent, [StepEvent(EventKind.PICK_FAIL, target.id)]
    target.resting_on = HELD
    target.speed = 0.0
    target.position = agent.gripper_position(params)
    return replace(agent, gripper_holding=target.id), [StepEvent(EventKind.PICK_SUCCESS, target.id)]


def step_world(
        scene: Scene, agent: AgentState, a: Action, params: WorldParams = WorldParams(),
        cam: CameraConfig = CameraConfig(), rng: Optional[np.random.Generator] = None,
        snap_class: Optional[int] = None
) -> Tuple[AgentState, List[StepEvent]]:
    """
    执行一个动作, 返回新的智能体状态与事件列表; 物体状态就地更新
    snap_class 为空时Snap作用于任意类别的最近物体
    """
    if a.kind == ActionKind.FORWARD:
        moved = _try_move(scene, agent, params.forward_step, params)
        return (moved, []) if moved else (agent, [StepEvent(EventKind.COLLISION)])

    if a.kind in (ActionKind.TURN_LEFT, ActionKind.TURN_RIGHT):
        sign = 1.0 if a.kind == ActionKind.TURN_LEFT else -1.0
        return replace(agent, theta=wrap_angle(agent.theta + sign * math.radians(params.turn_deg))), []

    if a.kind == ActionKind.MANIP:
        events = []
        new = agent
        d_base = _clamp(a.d_base, params.max_manip_base)
        if d_base != 0.0:
            moved = _try_move(scene, agent, d_base, params)
            if moved is None:
                events.append(StepEvent(EventKind.COLLISION))
            else:
                new = moved
        d_theta = _clamp(a.d_theta, math.radians(params.max_manip_turn_deg))
        ext = min(max(new.arm_extension + _clamp(a.d_ext, params.max_manip_ext), 0.0), params.arm_max_ext)
        lift = min(max(new.arm_lift + _clamp(a.d_lift, params.max_manip_lift), 0.0), params.arm_max_lift)
        return replace(new, theta=wrap_angle(new.theta + d_theta), arm_extension=ext, arm_lift=lift), events

    if a.kind == ActionKind.SNAP:
        if agent.gripper_holding is not None:
            raise InvalidAction("已经抓取物体时不能执行Snap")
        return _snap(scene, agent, params, cam, rng, snap_class)

    if a.kind == ActionKind.RELEASE:
        if agent.gripper_holding is None:
            raise InvalidAction("没有抓取物体时不能执行Release")
        outcome = settle_object(scene, agent, params)
        return replace(agent, gripper_holding=None), [StepEvent(EventKind.RELEASED, outcome.object_id, outcome)]

    return agent, []
