# app/api/routers/batch_run.py
import uuid
from sqlalchemy.orm import Session
from fastapi import APIRouter, Depends, HTTPException, BackgroundTasks
from ...db import crud
from ...db.database import get_db
from ...core import schemas
from ...tasks.batch_run import batch_run_task


router = APIRouter(
    prefix="/batch-run",
    tags=["批量运行"],
)


def _record_response(record) -> schemas.BatchRunRecordResponse:
    metrics = record.get_metrics()
    return schemas.BatchRunRecordResponse(
        run_id=record.run_id,
        dataset_path=record.dataset_path,
        results_path=record.results_path,
        metrics=schemas.MetricsReport.model_validate(metrics) if metrics else None,
    )


@router.post("/start", response_model=schemas.TaskCreationResponse, summary="启动批量运行任务")
def start_batch_run(
    request: schemas.BatchRunRequest, background_tasks: BackgroundTasks, db: Session = Depends(get_db)
):
    """同一时间只允许一个批量运行任务, 所有工作进程共享全局停止信号"""
    processing_task_id = crud.is_task_type_processing(db, "BatchRun")
    if processing_task_id:
        return schemas.TaskCreationResponse(
            message="已有批量运行任务正在进行中, 请等待其完成后再试",
            task_id=processing_task_id
        )
    task_id = str(uuid.uuid4())
    task_name = f"批量运行_seed={request.seed}"
    crud.create_task(db, task_id, task_name, "BatchRun", request.model_dump(mode="json"))
    background_tasks.add_task(
        batch_run_task, task_id, request.dataset_path, request.config_path,
        request.seed, request.workers, request.trace
    )
    return schemas.TaskCreationResponse(message="批量运行任务已启动", task_id=task_id)


@router.get("/status/{task_id}", response_model=schemas.BatchRunStatusResponse, summary="查询批量运行状态和结果")
def get_batch_run_status(task_id: str, db: Session = Depends(get_db)):
    task = crud.get_task_by_id(db, task_id)
    if not task or task.task_type != "BatchRun":
        raise HTTPException(status_code=404, detail="批量运行任务不存在")
    record = crud.get_batch_run_record_by_task_id(db, task_id)
    return schemas.BatchRunStatusResponse(
        task_id=task.task_id,
        status=task.status,
        progress=task.cur_progress,
        progress_text=task.progress_text,
        metrics=_record_response(record).metrics if record else None,
    )


@router.get("/records", response_model=list[schemas.BatchRunRecordResponse], summary="获取全部批量运行记录")
def get_batch_run_records(db: Session = Depends(get_db)):
    return [_record_response(r) for r in crud.get_all_batch_run_records(db)]


@router.delete("/{task_id}", response_model=schemas.MessageResponse, summary="删除批量运行记录")
def delete_batch_run(task_id: str, db: Session = Depends(get_db)):
    """删除运行记录及其任务记录, 结果文件保留在磁盘上"""
    task = crud.get_task_by_id(db, task_id)
    if not task:
        raise HTTPException(status_code=404, detail="任务不存在")
    if task.status in crud.ACTIVE_STATUSES:
        raise HTTPException(status_code=400, detail="任务仍在运行, 请先取消")
    crud.delete_batch_run_record_by_task_id(db, task_id)
    crud.delete_task_by_task_id(db, task_id)
    db.commit()
    return schemas.MessageResponse(message=f"批量运行 {task_id} 的记录已删除")
