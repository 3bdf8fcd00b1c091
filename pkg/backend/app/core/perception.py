# app/core/perception.py
import logging
import numpy as np
from enum import IntEnum
from pathlib import Path
from dataclasses import dataclass, field
from typing import Optional, List, Iterable, Tuple, Dict
from scipy.ndimage import binary_erosion, label as label_components
from .config import OvmmError, ConfigError, load_detector_config, save_detector_config
from .data_mapping import BACKGROUND, ROBOT, WALL
from .schemas import DetectorProfile, PerceptionConfig, Prompt
from .world import Frame
from ..utils.file_io import read_label_image, write_label_image


logger = logging.getLogger(__name__)


class DimensionMismatch(OvmmError):
    """参与融合的两张图尺寸不一致"""


class Provenance(IntEnum):
    NONE = 0
    TASKSPEC = 1
    OPENVOCAB = 2


@dataclass(frozen=True)
class TaskClasses:
    """任务相关类别, 融合时绘制在最上层; 家具类别可缺省(离线融合只给出目标物体)"""
    goal_object: int
    start_receptacle: Optional[int] = None
    goal_receptacle: Optional[int] = None

    def __post_init__(self):
        given = [c for c in (self.goal_object, self.start_receptacle, self.goal_receptacle) if c is not None]
        if len(set(given)) != len(given):
            raise ValueError(f"任务类别必须互不相同: {given}")
        if BACKGROUND in given:
            raise ValueError("任务类别不能是背景")

    @classmethod
    def from_prompt(cls, prompt: Prompt) -> "TaskClasses":
        return cls(prompt.object, prompt.start_receptacle, prompt.goal_receptacle)

    @property
    def paint_order(self) -> List[int]:
        """自底向上的绘制顺序, 目标物体在最上层"""
        return [c for c in (self.goal_receptacle, self.start_receptacle, self.goal_object) if c is not None]

    def __contains__(self, class_id: int) -> bool:
        return class_id in self.paint_order


@dataclass(frozen=True)
class Detection:
    class_id: int
    confidence: float
    mask: np.ndarray
    source_instance: int = 0    # 误检为0

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.mask))


@dataclass
class DetectionSet:
    height: int
    width: int
    detections: List[Detection] = field(default_factory=list)
    provenance: Provenance = Provenance.TASKSPEC

    def __post_init__(self):
        for det in self.detections:
            if det.mask.shape != (self.height, self.width):
                raise DimensionMismatch(f"检测掩膜尺寸 {det.mask.shape} 与图像尺寸 {(self.height, self.width)} 不一致")
            if not det.mask.any():
                raise ValueError(f"类别 {det.class_id} 的检测掩膜为空")

    def __len__(self):
        return len(self.detections)

    def class_mask(self, class_id: int) -> np.ndarray:
        mask = np.zeros((self.height, self.width), dtype=bool)
        for det in self.detections:
            if det.class_id == class_id:
                mask |= det.mask
        return mask


@dataclass
class LabelMap:
    labels: np.ndarray
    provenance: np.ndarray

    def __post_init__(self):
        if self.labels.shape != self.provenance.shape:
            raise DimensionMismatch(f"类别图 {self.labels.shape} 与来源图 {self.provenance.shape} 尺寸不一致")

    @classmethod
    def empty(cls, height: int, width: int) -> "LabelMap":
        return cls(np.zeros((height, width), dtype=np.uint8), np.zeros((height, width), dtype=np.uint8))

    @classmethod
    def from_image(cls, image: np.ndarray, provenance: Provenance = Provenance.TASKSPEC) -> "LabelMap":
        labels = np.asarray(image, dtype=np.uint8)
        prov = np.where(labels != BACKGROUND, int(provenance), int(Provenance.NONE)).astype(np.uint8)
        return cls(labels, prov)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.labels.shape

    def fraction(self, class_id: int) -> float:
        return float(np.count_nonzero(self.labels == class_id)) / self.labels.size


"""--------------------检测器预设--------------------"""
def load_detector_profile(name: str) -> DetectorProfile:
    """从检测器预设目录加载噪声模型"""
    data = load_detector_config(name)
    try:
        return DetectorProfile.model_validate({"name": name, **data})
    except ValueError as e:
        raise ConfigError(f"检测器预设 {name} 不合法: {e}") from e

def save_detector_profile(profile: DetectorProfile):
    save_detector_config(profile.name, profile.model_dump(mode="json", exclude={"name"}))


"""--------------------检测/合成/融合--------------------"""
def detect(frame: Frame, profile: DetectorProfile, rng: np.random.Generator) -> DetectionSet:
    """
    模拟检测器: 对画面中每个可见实例依次
        1. 以召回率决定是否检出
        2. 按混淆表替换类别
        3. 腐蚀掩膜, 丢弃过小的掩膜
    最后以false_positive_rate的概率加入一个误检色块
    """
    H, W = frame.height, frame.width
    detections = []
    for inst in np.unique(frame.instance_map):
        if inst == 0:
            continue
        mask = frame.instance_map == inst
        class_id = int(frame.class_map[mask][0])
        if class_id in (BACKGROUND, WALL, ROBOT):
            continue
        if rng.random() >= profile.recall(class_id):
            continue
        if class_id in profile.confusion:
            other, p = profile.confusion[class_id]
            if rng.random() < p:
                class_id = other
        if profile.mask_erosion_px > 0:
            mask = binary_erosion(mask, iterations=profile.mask_erosion_px)
        if np.count_nonzero(mask) < profile.min_mask_px:
            continue
        confidence = float(rng.uniform(*profile.confidence_range))
        detections.append(Detection(class_id, confidence, mask, int(inst)))

    if profile.false_positive_rate > 0 and profile.false_positive_classes and rng.random() < profile.false_positive_rate:
        s = min(profile.false_positive_size_px, H, W)
        r0 = int(rng.integers(0, H - s + 1))
        c0 = int(rng.integers(0, W - s + 1))
        mask = np.zeros((H, W), dtype=bool)
        mask[r0:r0 + s, c0:c0 + s] = True
        class_id = int(rng.choice(profile.false_positive_classes))
        detections.append(Detection(class_id, float(rng.uniform(*profile.confidence_range)), mask, 0))

    return DetectionSet(H, W, detections, Provenance[profile.provenance])


def compose_priority(d: DetectionSet, t: TaskClasses) -> LabelMap:
    """非任务类别按面积从大到小先画, 任务类别按 目标家具 -> 起始家具 -> 目标物体 的顺序覆盖在上面"""
    out = LabelMap.empty(d.height, d.width)
    tag = int(d.provenance)
    non_task = sorted((det for det in d.detections if det.class_id not in t), key=lambda det: -det.area)
    for det in non_task:
        out.labels[det.mask] = det.class_id
        out.provenance[det.mask] = tag
    for class_id in t.paint_order:
        for det in d.detections:
            if det.class_id == class_id:
                out.labels[det.mask] = class_id
                out.provenance[det.mask] = tag
    return out


def fuse(taskspec: LabelMap, openvocab: DetectionSet, t: TaskClasses) -> LabelMap:
    """
    融合两种检测器的结果:
        1. 以任务专用检测器的类别图为底
        2. 底图为背景的位置用开放词汇检测器的合成图填充
        3. 开放词汇检测器检出目标物体的位置标记为目标物体, 底图已是任务类别的像素除外
    """
    if taskspec.shape != (openvocab.height, openvocab.width):
        raise DimensionMismatch(f"任务专用类别图 {taskspec.shape} 与开放词汇检测 {(openvocab.height, openvocab.width)} 尺寸不一致")
    fallback = compose_priority(openvocab, t)
    labels = taskspec.labels.copy()
    prov = taskspec.provenance.copy()

    empty = labels == BACKGROUND
    labels[empty] = fallback.labels[empty]
    # 填充的像素一律记为开放词汇来源, 与传入检测集合自身标注的来源无关
    prov[empty] = np.where(fallback.labels[empty] != BACKGROUND, int(Provenance.OPENVOCAB), int(Provenance.NONE))

    goal = openvocab.class_mask(t.goal_object)
    guarded = np.isin(taskspec.labels, t.paint_order)
    override = goal & ~guarded
    labels[override] = t.goal_object
    prov[override] = int(Provenance.OPENVOCAB)
    return LabelMap(labels, prov)


def label_image_to_detections(image: np.ndarray, provenance: Provenance = Provenance.OPENVOCAB) -> DetectionSet:
    """8位类别图 -> 检测集合, 每个类别的每个连通域作为一个检测"""
    image = np.asarray(image, dtype=np.uint8)
    H, W = image.shape
    detections = []
    for class_id in np.unique(image):
        if class_id in (BACKGROUND, ROBOT):
            continue
        components, n = label_components(image == class_id)
        for k in range(1, n + 1):
            detections.append(Detection(int(class_id), 1.0, components == k, 0))
    return DetectionSet(H, W, detections, provenance)


def fuse_label_files(taskspec_path: str | Path, openvocab_path: str | Path, task: TaskClasses, out_path: str | Path) -> LabelMap:
    """离线融合两张8位类别图并写出结果"""
    taskspec = LabelMap.from_image(read_label_image(taskspec_path), Provenance.TASKSPEC)
    openvocab = label_image_to_detections(read_label_image(openvocab_path))
    fused = fuse(taskspec, openvocab, task)
    write_label_image(out_path, fused.labels)
    logger.info(f"|--> 融合类别图已保存: {out_path}")
    return fused


def goal_pixel_recall(label_maps: Iterable[LabelMap], truths: Iterable[np.ndarray], goal_class: int) -> float:
    """一组画面上目标物体的像素召回率, 真值中没有目标像素时返回nan"""
    hit, total = 0, 0
    for lm, truth in zip(label_maps, truths):
        gt = truth == goal_class
        total += int(np.count_nonzero(gt))
        hit += int(np.count_nonzero(gt & (lm.labels == goal_class)))
    return hit / total if total else float("nan")


class Perception:
    """按感知模式把一帧真值画面变成智能体使用的类别图"""

    def __init__(
            self, config: PerceptionConfig, task: TaskClasses,
            rng_taskspec: np.random.Generator, rng_openvocab: np.random.Generator,
            profiles: Optional[Dict[str, DetectorProfile]] = None
    ):
        self.mode = config.mode
        self.task = task
        self.rng_taskspec = rng_taskspec
        self.rng_openvocab = rng_openvocab
        profiles = profiles or load_profiles(config)
        self.taskspec = profiles["ground_truth"] if self.mode == "ground_truth" else profiles[config.taskspec_profile]
        self.openvocab = profiles[config.openvocab_profile]

    def __call__(self, frame: Frame) -> LabelMap:
        if self.mode == "openvocab":
            return compose_priority(detect(frame, self.openvocab, self.rng_openvocab), self.task)
        base = compose_priority(detect(frame, self.taskspec, self.rng_taskspec), self.task)
        if self.mode == "fused":
            return fuse(base, detect(frame, self.openvocab, self.rng_openvocab), self.task)
        return base


def load_profiles(config: PerceptionConfig) -> Dict[str, DetectorProfile]:
    """加载某个感知配置需要的全部检测器预设"""
    names = {"ground_truth", config.taskspec_profile, config.openvocab_profile}
    return {name: load_detector_profile(name) for name in sorted(names)}
