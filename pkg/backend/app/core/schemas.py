# app/core/schemas.py

from typing import Optional, Literal, List, Dict, Tuple
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from .config import settings
from .data_mapping import RECEPTACLE_CLASSES, OBJECT_CLASSES, BACKGROUND


"""--------------------场景/相机/世界参数--------------------"""
class SceneSpec(BaseModel):
    """场景生成规格: 类别清单与实例数量范围"""
    width: float = Field(default=8.0, gt=0, description="场景x方向尺寸(m)")
    depth: float = Field(default=6.0, gt=0, description="场景y方向尺寸(m)")
    wall_height: float = Field(default=2.5, gt=0, description="墙体高度(m)")
    wall_thickness: float = Field(default=0.1, gt=0, description="墙体厚度(m)")
    interior_walls: Tuple[int, int] = Field(default=(0, 1), description="内墙数量范围(每面内墙带一个门洞)")
    door_width: float = Field(default=1.2, gt=0, description="门洞宽度(m)")
    receptacle_classes: List[int] = Field(default=list(RECEPTACLE_CLASSES), description="可出现的家具类别")
    receptacle_count: Tuple[int, int] = Field(default=(5, 8), description="家具实例数量范围")
    object_classes: List[int] = Field(default=list(OBJECT_CLASSES), description="可出现的物体类别")
    object_count: Tuple[int, int] = Field(default=(4, 8), description="物体实例数量范围")
    min_clearance: float = Field(default=0.8, ge=0, description="家具之间/家具与墙之间的最小通行间隙(m)")
    object_edge_inset: Tuple[float, float] = Field(default=(0.1, 0.35), description="物体中心距家具边缘的距离范围(m)")
    max_retries: int = Field(default=200, ge=1, description="每个实例的最大放置尝试次数")

    @field_validator("interior_walls", "receptacle_count", "object_count", "object_edge_inset")
    @classmethod
    def _check_range(cls, v):
        if v[0] > v[1] or v[0] < 0:
            raise ValueError(f"范围不合法: {v}")
        return v

    @model_validator(mode="after")
    def _check_classes(self):
        if len(set(self.receptacle_classes)) < 2:
            raise ValueError("至少需要两种家具类别(起始家具与目标家具不能相同)")
        if not self.object_classes:
            raise ValueError("至少需要一种物体类别")
        return self


class CameraConfig(BaseModel):
    """第一视角相机参数(射线扇面: width个方位角 x height个俯仰角)"""
    model_config = ConfigDict(frozen=True)

    width: int = Field(default=128, ge=1)
    height: int = Field(default=64, ge=1)
    hfov_deg: float = Field(default=90.0, gt=0, lt=180)
    max_range: float = Field(default=10.0, gt=0)
    tilt_deg: float = Field(default=-25.0, description="相机俯仰角, 负值为向下")
    height_m: float = Field(default=1.3, gt=0, description="相机离地高度")
    depth_quantum: float = Field(default=0.01, gt=0, description="深度量化步长")
    occlusion_onset: float = Field(default=0.3, ge=0, description="机械臂伸出超过该值后开始遮挡视野")
    max_blocked_fraction: float = Field(default=0.5, ge=0, le=1, description="机械臂完全伸出时的遮挡比例")
    occlusion_full_ext: float = Field(default=0.8, gt=0, description="机械臂完全伸出的长度")
    arm_depth: float = Field(default=0.25, gt=0, description="遮挡像素的深度值")


class WorldParams(BaseModel):
    """运动学、Snap与放置稳定性参数"""
    forward_step: float = Field(default=0.25, gt=0)
    turn_deg: float = Field(default=30.0, gt=0)
    max_manip_base: float = Field(default=0.1, gt=0)
    max_manip_turn_deg: float = Field(default=15.0, gt=0)
    max_manip_ext: float = Field(default=0.1, gt=0)
    max_manip_lift: float = Field(default=0.1, gt=0)
    arm_max_ext: float = Field(default=0.8, gt=0)
    arm_max_lift: float = Field(default=1.2, gt=0)
    agent_radius: float = Field(default=0.2, gt=0)
    arm_base_reach: float = Field(default=0.25, ge=0, description="机械臂零伸出时夹爪到底盘中心的水平距离")
    snap_range: float = Field(default=1.0, gt=0)
    snap_cone_deg: float = Field(default=10.0, gt=0)
    snap_failure_prob: float = Field(default=0.0, ge=0, le=1, description="人为注入的Snap失败概率")
    v_stable: float = Field(default=0.05, gt=0, description="稳定速度阈值(m/step)")
    k_stable: int = Field(default=5, ge=1, description="连续低于阈值的步数")
    impact_gain: float = Field(default=0.5, ge=0)
    damping: float = Field(default=0.5, ge=0, lt=1)
    settle_horizon: int = Field(default=8, ge=1, description="释放后观察稳定性的步数")


class RewardConfig(BaseModel):
    """放置技能的奖励参数, 默认值即训练所用的最终参数"""
    contact_bonus: float = Field(default=70.0, ge=0)
    contact_per_step: float = Field(default=25.0, ge=0)
    distance_total: float = Field(default=40.0, ge=0)
    d_min: float = Field(default=0.2, ge=0)
    view_total: float = Field(default=30.0, ge=0)
    view_cap: float = Field(default=0.30, gt=0, le=1)
    camera_block_penalty: float = Field(default=-5.0, le=0)
    wander_penalty: float = Field(default=-5.0, le=0)
    wander_radius: float = Field(default=1.5, gt=0)
    block_fraction_threshold: float = Field(default=0.2, ge=0, le=1)
    contact_step_cap: int = Field(default=5, ge=0)
    idle_penalty: float = Field(default=0.0, le=0, description="在最终放置位置原地等待的每步惩罚")


class PerceptionConfig(BaseModel):
    """感知模式与检测器预设"""
    mode: Literal["ground_truth", "taskspec", "openvocab", "fused"] = "fused"
    taskspec_profile: str = Field(default="taskspec", description="任务专用检测器预设名")
    openvocab_profile: str = Field(default="openvocab", description="开放词汇检测器预设名")


class AgentConfig(BaseModel):
    """高层状态机与技能配置"""
    skill_mode: Literal["scripted", "replay"] = "scripted"
    replay_path: Optional[str] = Field(default=None, description="replay模式下的动作记录文件")
    retry_loop: bool = Field(default=True, description="拾取失败时是否重新执行导航+注视")
    skill_step_budget: int = Field(default=settings.SKILL_STEP_BUDGET, ge=1)
    episode_step_budget: int = Field(default=settings.EPISODE_STEP_BUDGET, ge=1)
    nav_stop_radius: float = Field(default=0.8, gt=0, description="导航技能的停止距离")
    nav_map_resolution: float = Field(default=0.2, gt=0)
    nav_map_size: float = Field(default=20.0, gt=0)


class TaskConfig(BaseModel):
    nav_success_radius: float = Field(default=1.0, gt=0)


class RunSection(BaseModel):
    """批量运行参数"""
    dataset: Optional[str] = None
    master_seed: int = 0
    workers: int = Field(default=1, ge=1)
    output_dir: str = settings.RESULTS_OUTPUT_DIR
    trace: bool = False


class RunConfig(BaseModel):
    """完整运行配置(TOML文件的各个小节), 空文件即可运行"""
    scene: SceneSpec = SceneSpec()
    camera: CameraConfig = CameraConfig()
    world: WorldParams = WorldParams()
    reward: RewardConfig = RewardConfig()
    perception: PerceptionConfig = PerceptionConfig()
    agent: AgentConfig = AgentConfig()
    task: TaskConfig = TaskConfig()
    run: RunSection = RunSection()


"""--------------------检测器预设--------------------"""
class DetectorProfile(BaseModel):
    """模拟检测器的噪声模型"""
    name: str
    provenance: Literal["TASKSPEC", "OPENVOCAB"] = "TASKSPEC"
    default_recall: float = Field(default=1.0, ge=0, le=1, description="未单独配置类别的召回率")
    recall_by_class: Dict[int, float] = Field(default_factory=dict)
    confusion: Dict[int, Tuple[int, float]] = Field(default_factory=dict, description="类别 -> (混淆成的类别, 概率)")
    mask_erosion_px: int = Field(default=0, ge=0)
    false_positive_rate: float = Field(default=0.0, ge=0, le=1)
    false_positive_classes: List[int] = Field(default_factory=lambda: list(OBJECT_CLASSES))
    false_positive_size_px: int = Field(default=6, ge=1, description="误检色块边长")
    min_mask_px: int = Field(default=1, ge=1)
    confidence_range: Tuple[float, float] = (0.5, 1.0)

    @field_validator("recall_by_class")
    @classmethod
    def _check_recall(cls, v):
        for class_id, p in v.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"类别 {class_id} 的召回率 {p} 不在[0,1]内")
        return v

    @field_validator("confusion")
    @classmethod
    def _check_confusion(cls, v):
        for class_id, (other, p) in v.items():
            if other == BACKGROUND:
                raise ValueError(f"类别 {class_id} 不能混淆为背景")
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"类别 {class_id} 的混淆概率 {p} 不在[0,1]内")
        return v

    def recall(self, class_id: int) -> float:
        return self.recall_by_class.get(class_id, self.default_recall)


"""--------------------回合/结果记录--------------------"""
class Prompt(BaseModel):
    """任务提示: 把 object 从 start_receptacle 移到 goal_receptacle"""
    object: int
    start_receptacle: int
    goal_receptacle: int

    @model_validator(mode="after")
    def _distinct(self):
        if len({self.object, self.start_receptacle, self.goal_receptacle}) != 3:
            raise ValueError("任务提示中的三个类别必须互不相同")
        return self


class Episode(BaseModel):
    """数据集中的一个回合"""
    episode_id: int
    scene_seed: int
    prompt: Prompt
    agent_start: Tuple[float, float, float] = Field(..., description="(x, y, theta)")
    step_budget: int = Field(default=settings.EPISODE_STEP_BUDGET, gt=0)


class DatasetHeader(BaseModel):
    """数据集文件首行"""
    format: str = "ovmm-episodes"
    version: int = 1
    seed: int
    n: int
    scene_spec: SceneSpec


class SuccessFlags(BaseModel):
    """四个子任务的成功标记, 必须满足顺序门控"""
    nav_to_obj: bool = False
    pick: bool = False
    nav_to_rec: bool = False
    place: bool = False

    @model_validator(mode="after")
    def _gated(self):
        chain = [self.nav_to_obj, self.pick, self.nav_to_rec, self.place]
        for i in range(1, 4):
            if chain[i] and not all(chain[:i]):
                raise ValueError(f"门控不成立: {chain}")
        return self

    def as_tuple(self) -> tuple:
        return (self.nav_to_obj, self.pick, self.nav_to_rec, self.place)


class EpisodeResult(BaseModel):
    """单个回合的运行结果(结果文件中的一行)"""
    episode_id: int
    flags: SuccessFlags
    failure_cause: str
    steps_used: int
    sparse_reward: float
    shaped_reward: float
    retry_count: int
    error: Optional[str] = None
    wall_time: Optional[float] = Field(default=None, exclude=True, description="耗时单独写入timings文件")


class MetricsReport(BaseModel):
    """整体指标(百分比)"""
    n_episodes: int
    nav_to_obj_rate: float
    pick_rate: float
    nav_to_rec_rate: float
    overall_success_rate: float
    partial_success_metric: float
    relative_rates: List[float]

    @property
    def absolute_rates(self) -> tuple:
        return (self.nav_to_obj_rate, self.pick_rate, self.nav_to_rec_rate, self.overall_success_rate)


"""--------------------API请求/响应--------------------"""
class MessageResponse(BaseModel):
    """通用的成功响应模型"""
    message: str


class TaskCreationResponse(BaseModel):
    """用于返回任务创建结果的响应模型"""
    message: str
    task_id: str


class TaskStatusResponse(BaseModel):
    """用于返回任务状态的响应模型"""
    task_id: str
    task_name: str
    task_type: str
    status: str
    progress: Optional[float] = None
    progress_text: Optional[str] = None


class DatasetGenerateRequest(BaseModel):
    """用于接收数据集生成请求的请求体模型"""
    n: int = Field(default=100, ge=0, description="回合数量", examples=[100])
    seed: int = Field(default=1, description="随机种子")
    scene_spec: SceneSpec = SceneSpec()
    file_name: str = Field(default="episodes.jsonl", description="输出文件名(位于数据集输出目录下)")


class BatchRunRequest(BaseModel):
    """用于接收批量运行请求的请求体模型"""
    dataset_path: str = Field(..., description="数据集文件路径")
    config_path: Optional[str] = Field(default=None, description="TOML运行配置, 为空时使用默认配置")
    seed: int = Field(default=0, description="主随机种子")
    workers: int = Field(default=settings.DEFAULT_WORKERS, ge=1, description="工作进程数")
    trace: bool = False


class BatchRunStatusResponse(BaseModel):
    """用于返回批量运行任务状态和结果的响应模型"""
    task_id: str
    status: str
    progress: float
    progress_text: str
    metrics: Optional[MetricsReport] = None


class BatchRunRecordResponse(BaseModel):
    """批量运行记录"""
    run_id: str
    dataset_path: str
    results_path: str
    metrics: Optional[MetricsReport] = None


class ReportRequest(BaseModel):
    """用于接收报表渲染请求的请求体模型"""
    results_paths: List[str] = Field(..., min_length=1)
    compare: bool = False


class ReportResponse(BaseModel):
    text: str
    metrics: List[MetricsReport]


class FuseRequest(BaseModel):
    """离线标签图融合请求"""
    taskspec_path: str
    openvocab_path: str
    goal_class: int
    start_class: Optional[int] = None
    goal_receptacle_class: Optional[int] = None
    out_path: str


class DetectorProfileUpdateRequest(BaseModel):
    """用于接受检测器预设更新请求的请求体模型"""
    params: dict = Field(..., examples=[{"default_recall": 0.9, "mask_erosion_px": 1}])
