# app/api/routers/task_operate.py
from typing import Optional, Literal
from fastapi import APIRouter, Depends, HTTPException
from sqlalchemy.orm import Session
from ...db.database import get_db
from ...db import crud
from ...core import schemas
from ...core.config import STOP_EVENT


router = APIRouter(
    prefix="/task_operate",
    tags=["任务操作[查询/取消]"],
)


def _status_response(task) -> schemas.TaskStatusResponse:
    return schemas.TaskStatusResponse(
        task_id=task.task_id, task_name=task.task_name, task_type=task.task_type,
        status=task.status, progress=task.cur_progress, progress_text=task.progress_text
    )


@router.post("/{task_id}/cancel", response_model=schemas.MessageResponse, summary="取消正在运行的任务")
def cancel_task(task_id: str, db: Session = Depends(get_db)):
    """发送停止信号, 批量运行在下一个回合边界处停止"""
    task = crud.get_task_by_id(db, task_id)
    if not task:
        raise HTTPException(status_code=404, detail="任务未找到")

    if task.status not in crud.ACTIVE_STATUSES:
        raise HTTPException(status_code=400, detail=f"任务状态为 {task.status}, 无法取消。")

    STOP_EVENT.set()
    return {"message": f"任务 {task_id} 的取消信号已发送。"}


@router.get("/status/{task_id}", response_model=schemas.TaskStatusResponse, summary="查询任务状态")
def get_task_status(task_id: str, db: Session = Depends(get_db)):
    task = crud.get_task_by_id(db, task_id)
    if not task:
        raise HTTPException(status_code=404, detail="任务不存在")
    return _status_response(task)


@router.get("/history", response_model=list[schemas.TaskStatusResponse], summary="获取历史任务列表")
def get_task_history(
        skip: int = 0, limit: int = 100,
        task_type: Optional[Literal["DatasetGenerate", "BatchRun"]] = None,
        db: Session = Depends(get_db)
):
    """按开始时间倒序, 可以只看数据集生成或批量运行任务"""
    return [_status_response(t) for t in crud.get_all_tasks(db, skip=skip, limit=limit, task_type=task_type)]
