# tests/test_perception.py
import numpy as np
import pytest
from app.core.config import ConfigError
from app.core.data_mapping import BACKGROUND, WALL, ROBOT
from app.core.schemas import DetectorProfile, PerceptionConfig
from app.core.world import AgentState, Frame, render
from app.core.perception import (
    Detection, DetectionSet, DimensionMismatch, LabelMap, Perception, Provenance, TaskClasses,
    compose_priority, detect, fuse, fuse_label_files, goal_pixel_recall, label_image_to_detections,
    load_detector_profile, load_profiles,
)
from app.utils.file_io import read_label_image, write_label_image
from app.utils.metrics import binomial_sigma


TASK = TaskClasses(goal_object=30, start_receptacle=10, goal_receptacle=14)
GT = DetectorProfile(name="gt", confidence_range=(1.0, 1.0))


def _mask(shape, r0, r1, c0, c1) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    m[r0:r1, c0:c1] = True
    return m


def _truth_labels(frame) -> np.ndarray:
    labels = frame.class_map.copy()
    labels[np.isin(labels, (WALL, ROBOT))] = BACKGROUND
    return labels


"""--------------------任务类别--------------------"""
def test_task_classes_must_be_distinct():
    with pytest.raises(ValueError):
        TaskClasses(goal_object=30, start_receptacle=30, goal_receptacle=14)
    with pytest.raises(ValueError):
        TaskClasses(goal_object=BACKGROUND)


def test_paint_order_puts_goal_object_last():
    assert TASK.paint_order == [14, 10, 30]
    assert TaskClasses(goal_object=31).paint_order == [31]


"""--------------------模拟检测器--------------------"""
def test_ground_truth_detector_reproduces_class_map(room):
    frame = render(room, AgentState(1.0, 2.5, 0.0, arm_extension=0.8))
    dets = detect(frame, GT, np.random.default_rng(0))
    assert {d.source_instance for d in dets.detections} == set(np.unique(frame.instance_map)) - {0}
    labels = compose_priority(dets, TASK)
    np.testing.assert_array_equal(labels.labels, _truth_labels(frame))


def test_detector_is_deterministic_for_a_seed(room):
    profile = load_detector_profile("openvocab")
    frame = render(room, AgentState(1.0, 2.5, 0.0))
    a = detect(frame, profile, np.random.default_rng(5))
    b = detect(frame, profile, np.random.default_rng(5))
    assert [(d.class_id, d.confidence) for d in a.detections] == [(d.class_id, d.confidence) for d in b.detections]
    assert all(np.array_equal(x.mask, y.mask) for x, y in zip(a.detections, b.detections))


def test_zero_recall_detects_nothing(room):
    frame = render(room, AgentState(1.0, 2.5, 0.0))
    dets = detect(frame, DetectorProfile(name="blind", default_recall=0.0), np.random.default_rng(0))
    assert len(dets) == 0
    assert (compose_priority(dets, TASK).labels == BACKGROUND).all()


def test_certain_confusion_swaps_the_class(room):
    frame = render(room, AgentState(1.0, 2.5, 0.0))
    profile = DetectorProfile(name="confused", confusion={10: (12, 1.0)})
    dets = detect(frame, profile, np.random.default_rng(0))
    assert 10 not in {d.class_id for d in dets.detections}
    assert 12 in {d.class_id for d in dets.detections}


def test_erosion_and_min_mask_drop_thin_instances(room):
    frame = render(room, AgentState(1.0, 2.5, 0.0))
    profile = DetectorProfile(name="coarse", mask_erosion_px=1, min_mask_px=10**6)
    assert len(detect(frame, profile, np.random.default_rng(0))) == 0


def test_false_positive_patch_has_configured_size(room):
    frame = render(room, AgentState(1.0, 2.5, 0.0))
    profile = DetectorProfile(name="noisy", default_recall=0.0, false_positive_rate=1.0,
                              false_positive_classes=[33], false_positive_size_px=4)
    dets = detect(frame, profile, np.random.default_rng(0))
    assert len(dets) == 1
    assert dets.detections[0].class_id == 33 and dets.detections[0].area == 16
    assert dets.detections[0].source_instance == 0


def test_detection_set_rejects_mismatched_masks():
    with pytest.raises(DimensionMismatch):
        DetectionSet(4, 4, [Detection(30, 1.0, np.ones((3, 4), dtype=bool))])


"""--------------------优先级合成--------------------"""
def test_task_classes_paint_over_larger_non_task_detections():
    shape = (8, 8)
    d = DetectionSet(8, 8, [
        Detection(30, 0.9, _mask(shape, 2, 4, 2, 4)),
        Detection(12, 0.9, _mask(shape, 0, 8, 0, 8)),
        Detection(14, 0.9, _mask(shape, 0, 6, 0, 6)),
        Detection(10, 0.9, _mask(shape, 0, 5, 0, 5)),
    ])
    out = compose_priority(d, TASK)
    assert out.labels[3, 3] == 30
    assert out.labels[4, 4] == 10
    assert out.labels[5, 5] == 14
    assert out.labels[7, 7] == 12
    assert (out.provenance == int(Provenance.TASKSPEC)).all()


def test_smaller_non_task_detection_stays_visible():
    shape = (6, 6)
    d = DetectionSet(6, 6, [
        Detection(31, 0.9, _mask(shape, 1, 2, 1, 2)),
        Detection(16, 0.9, _mask(shape, 0, 6, 0, 6)),
    ])
    out = compose_priority(d, TASK)
    assert out.labels[1, 1] == 31
    assert out.fraction(16) == pytest.approx(35 / 36)


"""--------------------融合--------------------"""
def _random_inputs(rng: np.random.Generator, shape=(16, 20)):
    labels = rng.choice([0, 0, 0, 10, 12, 14, 30, 31], size=shape).astype(np.uint8)
    taskspec = LabelMap.from_image(labels)
    dets = []
    for _ in range(int(rng.integers(1, 6))):
        r0, c0 = int(rng.integers(0, shape[0] - 1)), int(rng.integers(0, shape[1] - 1))
        r1, c1 = int(rng.integers(r0 + 1, shape[0] + 1)), int(rng.integers(c0 + 1, shape[1] + 1))
        dets.append(Detection(int(rng.choice([30, 31, 10, 12, 16])), 0.8, _mask(shape, r0, r1, c0, c1)))
    return taskspec, DetectionSet(shape[0], shape[1], dets, Provenance.OPENVOCAB)


def _oracle_pixel(t: int, in_goal: bool, fallback: int) -> tuple:
    """逐像素的融合规则, 返回(类别, 来源)"""
    if in_goal and t not in TASK:
        return TASK.goal_object, Provenance.OPENVOCAB
    if t != BACKGROUND:
        return t, Provenance.TASKSPEC
    if fallback != BACKGROUND:
        return fallback, Provenance.OPENVOCAB
    return BACKGROUND, Provenance.NONE


def test_fuse_matches_per_pixel_rule_on_500_frames():
    rng = np.random.default_rng(0)
    for _ in range(500):
        taskspec, openvocab = _random_inputs(rng)
        fused = fuse(taskspec, openvocab, TASK)
        fallback = compose_priority(openvocab, TASK)
        goal = openvocab.class_mask(TASK.goal_object)
        for (i, j), t in np.ndenumerate(taskspec.labels):
            label, prov = _oracle_pixel(int(t), bool(goal[i, j]), int(fallback.labels[i, j]))
            assert fused.labels[i, j] == label
            assert fused.provenance[i, j] == int(prov)

        # 任务专用检测器的任务类别像素不变
        guarded = np.isin(taskspec.labels, TASK.paint_order)
        np.testing.assert_array_equal(fused.labels[guarded], taskspec.labels[guarded])
        # 开放词汇来源只出现在底图为背景或被目标物体覆盖的位置
        from_openvocab = fused.provenance == int(Provenance.OPENVOCAB)
        assert ((taskspec.labels == BACKGROUND) | goal)[from_openvocab].all()
        # 与空检测再融合一次结果不变
        again = fuse(fused, DetectionSet(openvocab.height, openvocab.width), TASK)
        np.testing.assert_array_equal(again.labels, fused.labels)
        np.testing.assert_array_equal(again.provenance, fused.provenance)


def test_fuse_with_the_same_detections_twice_changes_nothing():
    rng = np.random.default_rng(1)
    for _ in range(10):
        taskspec, openvocab = _random_inputs(rng)
        fused = fuse(taskspec, openvocab, TASK)
        again = fuse(fused, openvocab, TASK)
        np.testing.assert_array_equal(again.labels, fused.labels)
        np.testing.assert_array_equal(again.provenance, fused.provenance)


def test_fallback_pixels_are_tagged_openvocab_whatever_the_detection_set_says():
    shape = (4, 4)
    taskspec = LabelMap.from_image(np.array([[12, 0, 0, 0]] * 4, dtype=np.uint8))
    # 检测集合自己标注为TASKSPEC, 融合时填充的像素仍然记为开放词汇来源
    openvocab = DetectionSet(4, 4, [Detection(31, 0.7, _mask(shape, 0, 4, 1, 3))], Provenance.TASKSPEC)
    fused = fuse(taskspec, openvocab, TASK)
    assert (fused.labels[:, 1:3] == 31).all()
    assert (fused.provenance[:, 1:3] == int(Provenance.OPENVOCAB)).all()
    assert (fused.provenance[:, 0] == int(Provenance.TASKSPEC)).all()
    assert (fused.provenance[:, 3] == int(Provenance.NONE)).all()


def test_fuse_marks_provenance_of_openvocab_pixels():
    shape = (4, 4)
    taskspec = LabelMap.from_image(np.array([[12, 0, 0, 0]] * 4, dtype=np.uint8))
    openvocab = DetectionSet(4, 4, [Detection(30, 0.7, _mask(shape, 0, 4, 0, 2))], Provenance.OPENVOCAB)
    fused = fuse(taskspec, openvocab, TaskClasses(goal_object=30))
    assert (fused.labels[:, :2] == 30).all()
    assert (fused.provenance[:, :2] == int(Provenance.OPENVOCAB)).all()
    assert (fused.labels[:, 2:] == BACKGROUND).all()
    assert (fused.provenance[:, 2:] == int(Provenance.NONE)).all()


def test_fuse_rejects_mismatched_shapes():
    with pytest.raises(DimensionMismatch):
        fuse(LabelMap.empty(4, 4), DetectionSet(4, 5), TASK)


def test_label_image_to_detections_splits_components():
    image = np.zeros((5, 7), dtype=np.uint8)
    image[0:2, 0:2] = 30
    image[3:5, 5:7] = 30
    image[2, 3] = 12
    image[4, 0] = ROBOT
    dets = label_image_to_detections(image)
    assert sorted(d.class_id for d in dets.detections) == [12, 30, 30]
    assert dets.provenance == Provenance.OPENVOCAB


def test_fuse_label_files_writes_fused_image(tmp_path):
    taskspec = np.zeros((6, 6), dtype=np.uint8)
    taskspec[:, :3] = 10
    openvocab = np.zeros((6, 6), dtype=np.uint8)
    openvocab[2:4, 2:5] = 30
    write_label_image(tmp_path / "taskspec.png", taskspec)
    write_label_image(tmp_path / "openvocab.png", openvocab)
    task = TaskClasses(goal_object=30, start_receptacle=10)
    fuse_label_files(tmp_path / "taskspec.png", tmp_path / "openvocab.png", task, tmp_path / "out" / "fused.png")
    out = read_label_image(tmp_path / "out" / "fused.png")
    assert (out[2:4, :3] == 10).all()
    assert (out[2:4, 3:5] == 30).all()
    assert out[0, 4] == BACKGROUND


def test_read_label_image_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_label_image(tmp_path / "nope.png")


def test_goal_pixel_recall():
    truth = np.array([[30, 30, 0, 0]], dtype=np.uint8)
    seen = LabelMap.from_image(np.array([[30, 0, 30, 0]], dtype=np.uint8))
    assert goal_pixel_recall([seen], [truth], 30) == pytest.approx(0.5)
    assert np.isnan(goal_pixel_recall([seen], [np.zeros_like(truth)], 30))


# 能看到桌上杯子的几个位姿, 最后一个机械臂伸出遮挡了画面下半部分
VIEW_POSES = [
    AgentState(2.0, 2.5, 0.0), AgentState(1.5, 2.3, 0.1), AgentState(2.3, 1.6, 0.8),
    AgentState(2.2, 3.3, -0.7), AgentState(1.8, 2.5, 0.0, arm_extension=0.6),
]


def _small_object_frame(side: int = 5) -> Frame:
    """64x128的画面中间只有一个side x side像素的杯子"""
    class_map = np.zeros((64, 128), dtype=np.uint8)
    instance_map = np.zeros((64, 128), dtype=np.int32)
    class_map[30:30 + side, 60:60 + side] = 30
    instance_map[30:30 + side, 60:60 + side] = 3
    return Frame(class_map, instance_map, np.full((64, 128), 2.0))


def test_openvocab_detects_small_objects_at_configured_recall():
    profile = load_detector_profile("openvocab")
    frame = _small_object_frame()
    assert frame.instance_pixels(3) <= 30
    rng = np.random.default_rng(2024)
    n = 1000
    hits = sum(
        any(d.source_instance == 3 and d.class_id == 30 for d in detect(frame, profile, rng).detections)
        for _ in range(n)
    )
    p = profile.recall(30)
    assert abs(hits / n - p) <= 3 * binomial_sigma(p, n)


def test_noiseless_detectors_round_trip_through_fuse(room):
    for agent in VIEW_POSES:
        frame = render(room, agent)
        dets = detect(frame, GT, np.random.default_rng(0))
        fused = fuse(compose_priority(dets, TASK), dets, TASK)
        truth = _truth_labels(frame)
        for class_id in TASK.paint_order:
            np.testing.assert_array_equal(fused.labels == class_id, truth == class_id)


def test_fused_goal_recall_is_at_least_either_input(room):
    taskspec_profile = load_detector_profile("taskspec")
    openvocab_profile = load_detector_profile("openvocab")
    rng_t, rng_o = np.random.default_rng(7), np.random.default_rng(8)
    truths, taskspec_maps, openvocab_maps, fused_maps = [], [], [], []
    for _ in range(10):
        for agent in VIEW_POSES:
            frame = render(room, agent)
            base = compose_priority(detect(frame, taskspec_profile, rng_t), TASK)
            ov = detect(frame, openvocab_profile, rng_o)
            truths.append(_truth_labels(frame))
            taskspec_maps.append(base)
            openvocab_maps.append(compose_priority(ov, TASK))
            fused_maps.append(fuse(base, ov, TASK))
    fused = goal_pixel_recall(fused_maps, truths, TASK.goal_object)
    assert not np.isnan(fused)
    assert fused >= goal_pixel_recall(taskspec_maps, truths, TASK.goal_object)
    assert fused >= goal_pixel_recall(openvocab_maps, truths, TASK.goal_object)


"""--------------------检测器预设与感知模式--------------------"""
def test_bundled_profiles_load():
    profiles = load_profiles(PerceptionConfig(taskspec_profile="taskspec_finetuned"))
    assert set(profiles) == {"ground_truth", "taskspec_finetuned", "openvocab"}
    assert profiles["openvocab"].provenance == "OPENVOCAB"


def test_unknown_profile_raises_config_error():
    with pytest.raises(ConfigError):
        load_detector_profile("does_not_exist")


def test_ground_truth_perception_equals_truth(room):
    frame = render(room, AgentState(1.0, 2.5, 0.0))
    perceive = Perception(PerceptionConfig(mode="ground_truth"), TASK,
                          np.random.default_rng(0), np.random.default_rng(1))
    np.testing.assert_array_equal(perceive(frame).labels, _truth_labels(frame))


@pytest.mark.parametrize("mode", ["taskspec", "openvocab", "fused"])
def test_perception_modes_keep_frame_shape(room, mode):
    frame = render(room, AgentState(1.0, 2.5, 0.0))
    perceive = Perception(PerceptionConfig(mode=mode), TASK, np.random.default_rng(0), np.random.default_rng(1))
    assert perceive(frame).shape == frame.class_map.shape
