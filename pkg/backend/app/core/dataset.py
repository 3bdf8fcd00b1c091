# app/core/dataset.py
import logging
import numpy as np
from pathlib import Path
from typing import List, Optional, Callable
from .config import settings
from .schemas import SceneSpec, Episode, DatasetHeader
from .world import PlacementInfeasible, generate_scene, sample_agent_start, is_free
from ..utils.file_io import write_dataset, read_dataset


logger = logging.getLogger(__name__)

MAX_SCENE_ATTEMPTS = 100


def build_episodes(
        n: int, seed: int, spec: SceneSpec, step_budget: int = settings.EPISODE_STEP_BUDGET,
        progress: Optional[Callable[[int, int], None]] = None
) -> List[Episode]:
    """
    生成n个回合, 对同一个seed结果完全一致
    场景种子由主随机流依次抽取, 放置失败的种子直接跳过
    """
    rng = np.random.default_rng(seed)
    episodes = []
    for episode_id in range(n):
        for _ in range(MAX_SCENE_ATTEMPTS):
            scene_seed = int(rng.integers(0, 2**31 - 1))
            try:
                scene = generate_scene(scene_seed, spec)
                start = sample_agent_start(scene, np.random.default_rng([scene_seed, 1]))
                break
            except PlacementInfeasible as e:
                logger.debug(f"场景种子 {scene_seed} 放置失败, 换下一个: {e}")
        else:
            raise PlacementInfeasible(f"连续 {MAX_SCENE_ATTEMPTS} 个场景种子都无法放置, 请检查场景规格")
        episodes.append(Episode(
            episode_id=episode_id, scene_seed=scene_seed, prompt=scene.prompt,
            agent_start=tuple(round(v, 4) for v in start), step_budget=step_budget,
        ))
        if progress:
            progress(episode_id + 1, n)
    return episodes


def generate_dataset(
        n: int, seed: int, spec: SceneSpec, out: str | Path,
        progress: Optional[Callable[[int, int], None]] = None
) -> Path:
    """生成数据集文件(首行文件头, 其后每行一个回合), n=0时只有文件头"""
    episodes = build_episodes(n, seed, spec, progress=progress)
    header = DatasetHeader(seed=seed, n=n, scene_spec=spec)
    path = write_dataset(out, header, episodes)
    logger.info(f"|--> 数据集生成完成: {path} ({n} 个回合)")
    return path


def validate_dataset(path: str | Path) -> List[str]:
    """重新实例化每个回合的场景, 检查任务类别是否存在以及初始位姿是否合法, 返回问题列表"""
    header, episodes = read_dataset(path)
    problems = []
    for ep in episodes:
        try:
            scene = generate_scene(ep.scene_seed, header.scene_spec, ep.prompt)
        except PlacementInfeasible as e:
            problems.append(f"回合 {ep.episode_id}: 场景无法重建 ({e})")
            continue
        p = ep.prompt
        if not scene.objects_of_class(p.object):
            problems.append(f"回合 {ep.episode_id}: 场景中没有目标物体类别 {p.object}")
        if not scene.receptacles_of_class(p.start_receptacle):
            problems.append(f"回合 {ep.episode_id}: 场景中没有起始家具类别 {p.start_receptacle}")
        if not scene.receptacles_of_class(p.goal_receptacle):
            problems.append(f"回合 {ep.episode_id}: 场景中没有目标家具类别 {p.goal_receptacle}")
        start_ids = {r.id for r in scene.receptacles_of_class(p.start_receptacle)}
        if not any(o.resting_on in start_ids for o in scene.objects_of_class(p.object)):
            problems.append(f"回合 {ep.episode_id}: 没有任何起始家具上放着目标物体")
        x, y, _ = ep.agent_start
        if not is_free(scene, x, y, 0.2):
            problems.append(f"回合 {ep.episode_id}: 初始位姿与障碍物重叠")
    return problems
