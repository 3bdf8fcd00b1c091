# app/tasks/batch_run.py
import uuid
import logging
from typing import Optional
from ..db import crud
from ..db.database import SessionLocal
from ..core.config import settings, STOP_EVENT
from ..core.batch import load_run_config, run_batch


logger = logging.getLogger(__name__)


def batch_run_task(
        task_id: str, dataset_path: str, config_path: Optional[str], seed: int, workers: int, trace: bool
):
    """批量运行数据集中的全部回合[后台任务]"""
    db = SessionLocal()
    progress = 0.0
    try:
        crud.update_task_status(db, task_id, "PROCESSING", 0.0, "正在加载运行配置...")
        # 清除旧的停止信号, 确保本次任务不受之前任务的影响
        STOP_EVENT.clear()
        cfg = load_run_config(config_path)
        run_id = str(uuid.uuid4())
        out_dir = f"{settings.RESULTS_OUTPUT_DIR}/{run_id}"

        def _progress(done: int, total: int):
            nonlocal progress
            progress = done / total * 100
            crud.update_task_status(db, task_id, "PROCESSING", progress, f"整体进度: {done}/{total}")

        summary = run_batch(
            cfg, dataset_path, master_seed=seed, workers=workers, out_dir=out_dir,
            trace=trace, progress=_progress, stop_event=STOP_EVENT,
        )
        if summary.cancelled:
            crud.update_task_status(db, task_id, "FAILED", progress, "任务被用户手动停止")
            return

        crud.create_batch_run_record(db, {
            "run_id": run_id,
            "dataset_path": str(dataset_path),
            "results_path": str(summary.results_path),
            "task_id": task_id,
            "run_config": cfg.model_dump(mode="json"),
            "metrics": summary.metrics.model_dump(mode="json") if summary.metrics else None,
        })
        text = f"全部回合已完成, 结果: {summary.results_path}"
        if summary.n_errors:
            text += f" (其中 {summary.n_errors} 个回合执行出错)"
        crud.update_task_status(db, task_id, "COMPLETED", 100.0, text)

    except Exception as e:
        error_msg = f"任务执行错误: {e}"
        logger.error(f"|--> {error_msg}")
        crud.update_task_status(db, task_id, "FAILED", progress, error_msg)
    finally:
        db.close()
