# app/core/batch.py
import os
import json
import logging
import threading
import traceback
from pathlib import Path
from dataclasses import dataclass
from concurrent.futures import ProcessPoolExecutor, as_completed
from typing import Optional, Dict, List, Callable, Tuple
from pydantic import ValidationError
from .config import ConfigError, load_toml
from .schemas import RunConfig, SceneSpec, Episode, EpisodeResult, SuccessFlags, MetricsReport, DetectorProfile
from .perception import load_profiles
from .agent import load_replay
from .episode import run_episode
from .evaluation import FailureCause, aggregate_metrics
from ..utils.file_io import JsonlAppender, read_dataset, write_trace


logger = logging.getLogger(__name__)


@dataclass
class BatchSummary:
    results_path: Path
    timings_path: Path
    metrics: Optional[MetricsReport]
    n_episodes: int
    n_errors: int
    cancelled: bool = False


class OrderedResultWriter:
    """
    批量运行中唯一的结果写出者, 按回合id顺序逐条追加 results.jsonl / timings.jsonl / 轨迹文件
        - 某个回合完成时, 只有id更小的回合都已写出才立即写出, 否则先暂存
        - close时把剩余的暂存结果按id顺序写出(只在取消或出错时出现)
    """

    def __init__(self, out_dir: Path, episode_ids: List[int], keep_trace: bool):
        self.order = sorted(episode_ids)
        self.cursor = 0
        self.keep_trace = keep_trace
        self.trace_dir = out_dir / "traces"
        self.pending: Dict[int, Tuple[EpisodeResult, Optional[Dict]]] = {}
        self.written: List[EpisodeResult] = []
        self.results = JsonlAppender(out_dir / "results.jsonl")
        self.timings = JsonlAppender(out_dir / "timings.jsonl")

    def add(self, result: EpisodeResult, trace_dict: Optional[Dict] = None):
        self.pending[result.episode_id] = (result, trace_dict)
        while self.cursor < len(self.order) and self.order[self.cursor] in self.pending:
            self._write(*self.pending.pop(self.order[self.cursor]))
            self.cursor += 1

    def _write(self, result: EpisodeResult, trace_dict: Optional[Dict]):
        self.results.append(result.model_dump(mode="json"))
        self.timings.append({"episode_id": result.episode_id, "wall_time": result.wall_time})
        if self.keep_trace and trace_dict is not None:
            write_trace(self.trace_dir, result.episode_id, trace_dict)
        self.written.append(result)

    def close(self):
        for episode_id in sorted(self.pending):
            self._write(*self.pending.pop(episode_id))
        self.results.close()
        self.timings.close()


def run_single_episode(
        episode: Episode, cfg: RunConfig, master_seed: int,
        profiles: Dict[str, DetectorProfile], replay: Optional[Dict], keep_trace: bool
) -> Tuple[EpisodeResult, Optional[Dict]]:
    """执行单个回合[原子性任务], 任何异常都记录为失败回合而不是向上抛出"""
    try:
        result, trace = run_episode(episode, cfg, master_seed, profiles=profiles, replay=replay)
        return result, trace.to_dict() if keep_trace else None
    except Exception as e:
        logger.error(f"|--> [错误]: 回合 {episode.episode_id} 执行失败: {e}")
        logger.debug(traceback.format_exc())
        failed = EpisodeResult(
            episode_id=episode.episode_id, flags=SuccessFlags(), failure_cause=FailureCause.UNCERTAIN.value,
            steps_used=0, sparse_reward=0.0, shaped_reward=0.0, retry_count=0,
            error=f"{type(e).__name__}: {e}",
        )
        return failed, None


def load_run_config(path: Optional[str | Path] = None) -> RunConfig:
    """读取TOML运行配置, 为空时全部使用默认值"""
    if path is None:
        return RunConfig()
    try:
        return RunConfig.model_validate(load_toml(path))
    except ValidationError as e:
        raise ConfigError(f"运行配置 {path} 不合法: {e}") from e


def load_scene_spec(path: Optional[str | Path] = None) -> SceneSpec:
    """场景规格文件既可以是完整的运行配置(取[scene]小节), 也可以只包含场景字段"""
    if path is None:
        return SceneSpec()
    data = load_toml(path)
    try:
        return SceneSpec.model_validate(data.get("scene", data))
    except ValidationError as e:
        raise ConfigError(f"场景规格 {path} 不合法: {e}") from e


def prepare_run(cfg: RunConfig, dataset_path: str | Path) -> Tuple[RunConfig, List[Episode], Dict[str, DetectorProfile], Optional[Dict]]:
    """在执行任何回合之前完成全部配置检查, 出错时抛出ConfigError"""
    dataset_path = Path(dataset_path)
    if not dataset_path.exists():
        raise ConfigError(f"数据集文件 {dataset_path} 不存在")
    try:
        header, episodes = read_dataset(dataset_path)
    except ValueError as e:
        raise ConfigError(f"数据集文件 {dataset_path} 不合法: {e}") from e
    cfg = cfg.model_copy(update={"scene": header.scene_spec})
    profiles = load_profiles(cfg.perception)
    replay = None
    if cfg.agent.skill_mode == "replay":
        if not cfg.agent.replay_path:
            raise ConfigError("replay模式需要配置 agent.replay_path")
        replay = load_replay(cfg.agent.replay_path)
    return cfg, episodes, profiles, replay


def run_batch(
        cfg: RunConfig, dataset_path: Optional[str | Path] = None, master_seed: Optional[int] = None,
        workers: Optional[int] = None, out_dir: Optional[str | Path] = None, trace: Optional[bool] = None,
        progress: Optional[Callable[[int, int], None]] = None, stop_event: Optional[threading.Event] = None
) -> BatchSummary:
    """
    批量执行数据集中的全部回合
        - 回合种子 = master_seed XOR episode_id, 结果与工作进程数无关
        - 结果按回合id顺序逐条追加到 results.jsonl, 耗时写入 timings.jsonl, 中途退出时已完成的前缀保留在文件中
    """
    dataset_path = dataset_path or cfg.run.dataset
    if not dataset_path:
        raise ConfigError("没有指定数据集文件")
    master_seed = cfg.run.master_seed if master_seed is None else master_seed
    workers = cfg.run.workers if workers is None else workers
    out_dir = Path(out_dir or cfg.run.output_dir)
    keep_trace = cfg.run.trace if trace is None else trace
    if workers < 1:
        raise ConfigError(f"工作进程数至少为1, 实际为 {workers}")

    cfg, episodes, profiles, replay = prepare_run(cfg, dataset_path)
    total = len(episodes)
    num_workers = max(1, min(workers, os.cpu_count() or 1, total or 1))
    logger.info(f"|--> 主进程: 开始批量运行 {total} 个回合, 工作进程数 {num_workers}")

    writer = OrderedResultWriter(out_dir, [ep.episode_id for ep in episodes], keep_trace)
    done = 0
    cancelled = False

    def _collect(result: EpisodeResult, trace_dict: Optional[Dict]):
        nonlocal done
        writer.add(result, trace_dict)
        done += 1
        if progress:
            progress(done, total)

    try:
        if num_workers == 1:
            for ep in episodes:
                if stop_event is not None and stop_event.is_set():
                    cancelled = True
                    break
                _collect(*run_single_episode(ep, cfg, master_seed, profiles, replay, keep_trace))
        else:
            executor = ProcessPoolExecutor(max_workers=num_workers)
            try:
                futures = {
                    executor.submit(run_single_episode, ep, cfg, master_seed, profiles, replay, keep_trace): ep
                    for ep in episodes
                }
                logger.info(f"|--> 主进程: 提交了 {len(futures)} 个回合到进程池")
                for future in as_completed(futures):
                    if stop_event is not None and stop_event.is_set():
                        cancelled = True
                        logger.info("|--> 主进程: 收到停止信号, 开始终止任务")
                        break
                    _collect(*future.result())
            finally:
                executor.shutdown(wait=True, cancel_futures=True)
                logger.info("|--> 主进程: 进程池已关闭")
    finally:
        writer.close()

    ordered = writer.written
    results_path, timings_path = writer.results.path, writer.timings.path

    metrics = aggregate_metrics([r.flags for r in ordered]) if ordered else None
    if metrics is not None:
        with open(out_dir / "metrics.json", "w", encoding="utf-8") as f:
            json.dump(metrics.model_dump(mode="json"), f, indent=4, ensure_ascii=False)
    n_errors = sum(r.error is not None for r in ordered)
    logger.info(f"|--> 主进程: 批量运行结束, 完成 {len(ordered)}/{total} 个回合, 失败 {n_errors} 个")
    return BatchSummary(results_path, timings_path, metrics, len(ordered), n_errors, cancelled)
