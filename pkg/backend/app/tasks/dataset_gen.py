# app/tasks/dataset_gen.py
import logging
from pathlib import Path
from ..db import crud
from ..db.database import SessionLocal
from ..core.config import settings
from ..core.schemas import SceneSpec
from ..core.dataset import generate_dataset, validate_dataset


logger = logging.getLogger(__name__)


def generate_dataset_task(task_id: str, n: int, seed: int, scene_spec: dict, file_name: str):
    """生成回合数据集[后台任务]"""
    db = SessionLocal()
    try:
        crud.update_task_status(db, task_id, "PROCESSING", 0.0, "正在生成场景...")
        spec = SceneSpec.model_validate(scene_spec)
        out = Path(settings.DATASET_OUTPUT_DIR) / file_name

        def _progress(done: int, total: int):
            crud.update_task_status(db, task_id, "PROCESSING", done / total * 95, f"已生成 {done}/{total} 个回合")

        path = generate_dataset(n, seed, spec, out, progress=_progress)
        crud.update_task_status(db, task_id, "PROCESSING", 95.0, "正在校验数据集...")
        problems = validate_dataset(path)
        if problems:
            logger.warning(f"|--> 数据集校验发现 {len(problems)} 个问题: {problems[:5]}")
            crud.update_task_status(db, task_id, "FAILED", 100.0, f"数据集校验失败: {problems[0]}")
            return
        crud.update_task_status(db, task_id, "COMPLETED", 100.0, f"数据集已生成: {path}")

    except Exception as e:
        error_msg = f"任务执行错误: {e}"
        logger.error(f"|--> {error_msg}")
        crud.update_task_status(db, task_id, "FAILED", 0.0, error_msg)
    finally:
        db.close()
