# app/db/crud.py
from datetime import datetime
from typing import Optional, List
from sqlalchemy.orm import Session
from . import db_models


ACTIVE_STATUSES = ["PENDING", "PROCESSING"]


"""--------------------创建/取消/更新任务--------------------"""
def create_task(db: Session, task_id: str, task_name: str, task_type: str, params: dict) -> db_models.TaskProgress:
    """
    创建一个后台任务记录。

    :param db: SQLAlchemy数据库会话.
    :param task_id: 任务ID.
    :param task_name: 任务名称.
    :param task_type: 任务类型.
    :param params: 任务参数.
    :return: 创建的任务对象.
    """
    task = db_models.TaskProgress(task_id=task_id, task_name=task_name, task_type=task_type)
    task.set_params(params)
    db.add(task)
    db.commit()
    db.refresh(task)
    return task

def update_task_status(db: Session, task_id: str, status: str, progress: float, text: str):
    """
    更新任务状态, 进度, 进度的文字说明。

    :param db: SQLAlchemy数据库会话.
    :param task_id: 任务ID.
    :param status: 任务状态.
    :param progress: 任务进度.
    :param text: 进度说明.
    """
    task = get_task_by_id(db, task_id)
    if task:
        task.status = status
        task.cur_progress = progress
        task.progress_text = text
        if status in ["COMPLETED", "FAILED"]:
            task.end_time = datetime.now()
        db.commit()

def cancel_task(db: Session, task_id: str) -> bool:
    """把仍在等待或执行中的任务标记为被取消"""
    task = get_task_by_id(db, task_id)
    if task is None or task.status not in ACTIVE_STATUSES:
        return False
    task.status = "FAILED"
    task.progress_text = "任务被用户取消"
    task.end_time = datetime.now()
    db.commit()
    return True

def is_task_type_processing(db: Session, task_type: str) -> Optional[str]:
    """
    检查指定类型的任务是否有任何一个正处于 PENDING 或 PROCESSING 状态。

    :param db: SQLAlchemy数据库会话.
    :param task_type: 要检查的任务类型, 例如 "BatchRun".
    :return: 正在运行的任务ID, 没有则返回None.
    """
    processing_task = db.query(db_models.TaskProgress).filter(
        db_models.TaskProgress.task_type == task_type,
        db_models.TaskProgress.status.in_(ACTIVE_STATUSES)
    ).first()
    return processing_task.task_id if processing_task else None

"""--------------------查询任务--------------------"""
def get_task_by_id(db: Session, task_id: str) -> Optional[db_models.TaskProgress]:
    return db.query(db_models.TaskProgress).filter(db_models.TaskProgress.task_id == task_id).first()

def get_all_tasks(db: Session, skip: int = 0, limit: int = 100, task_type: Optional[str] = None) -> List[db_models.TaskProgress]:
    """
    获取历史任务列表, 按开始时间倒序。

    :param db: SQLAlchemy数据库会话.
    :param skip: 跳过的任务数量.
    :param limit: 返回的任务数量.
    :param task_type: 只返回该类型的任务, 为空时返回全部.
    """
    query = db.query(db_models.TaskProgress)
    if task_type is not None:
        query = query.filter(db_models.TaskProgress.task_type == task_type)
    return query.order_by(db_models.TaskProgress.start_time.desc()).offset(skip).limit(limit).all()

def delete_task_by_task_id(db: Session, task_id: str) -> int:
    """根据 task_id 删除 TaskProgress 表中的记录, commit 由调用方统一处理"""
    return db.query(db_models.TaskProgress).filter(
        db_models.TaskProgress.task_id == task_id
    ).delete(synchronize_session=False)

"""--------------------批量运行记录--------------------"""
def create_batch_run_record(db: Session, run_info: dict) -> db_models.BatchRunRecord:
    """在数据库中创建一条批量运行记录"""
    record = db_models.BatchRunRecord(
        run_id=run_info["run_id"],
        dataset_path=run_info["dataset_path"],
        results_path=run_info["results_path"],
        task_id=run_info["task_id"],
    )
    record.set_run_config(run_info["run_config"])
    record.set_metrics(run_info.get("metrics"))
    db.add(record)
    db.commit()
    db.refresh(record)
    return record

def get_batch_run_record_by_task_id(db: Session, task_id: str) -> Optional[db_models.BatchRunRecord]:
    return db.query(db_models.BatchRunRecord).filter(db_models.BatchRunRecord.task_id == task_id).first()

def get_all_batch_run_records(db: Session) -> List[db_models.BatchRunRecord]:
    """获取全部批量运行记录, 按完成时间倒序"""
    return db.query(db_models.BatchRunRecord).order_by(db_models.BatchRunRecord.create_time.desc()).all()

def delete_batch_run_record_by_task_id(db: Session, task_id: str) -> int:
    """commit 由调用方统一处理"""
    return db.query(db_models.BatchRunRecord).filter(
        db_models.BatchRunRecord.task_id == task_id
    ).delete(synchronize_session=False)
