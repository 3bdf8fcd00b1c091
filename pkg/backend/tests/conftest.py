# tests/conftest.py
import os
import shutil
import tempfile
from pathlib import Path

# 必须在导入 app.core.config 之前设置, 数据库与输出目录全部指向临时目录
_TMP = tempfile.mkdtemp(prefix="ovmm-tests-")
os.environ.setdefault("OVMM_DB_PATH", os.path.join(_TMP, "db", "ovmm.db"))
os.environ.setdefault("OVMM_DATASET_OUTPUT_DIR", os.path.join(_TMP, "datasets"))
os.environ.setdefault("OVMM_RESULTS_OUTPUT_DIR", os.path.join(_TMP, "results"))
# 检测器预设会被接口测试改写, 使用一份拷贝
_DETECTORS = os.path.join(_TMP, "detectors")
shutil.copytree(Path(__file__).resolve().parents[1] / "config" / "detectors", _DETECTORS)
os.environ.setdefault("OVMM_DETECTOR_CONFIG_DIR", _DETECTORS)

import pytest
from app.core.schemas import Episode, RunConfig, PerceptionConfig
from app.core.world import Scene
from tests.helpers import SMALL_SPEC, box_room, feasible_scene, pose_facing_goal_object


@pytest.fixture
def room() -> Scene:
    return box_room()


@pytest.fixture
def gt_config() -> RunConfig:
    return RunConfig(scene=SMALL_SPEC, perception=PerceptionConfig(mode="ground_truth"))


@pytest.fixture
def adjacent_episode() -> Episode:
    """智能体一开始就站在目标物体旁边并面向它"""
    seed, scene = feasible_scene()
    return Episode(episode_id=0, scene_seed=seed, prompt=scene.prompt,
                   agent_start=pose_facing_goal_object(scene), step_budget=200)
