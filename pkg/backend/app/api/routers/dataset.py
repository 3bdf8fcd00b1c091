# app/api/routers/dataset.py
import uuid
from pathlib import Path
from sqlalchemy.orm import Session
from fastapi import APIRouter, Depends, HTTPException, BackgroundTasks
from ...db import crud
from ...db.database import get_db
from ...core import schemas
from ...core.config import settings
from ...core.dataset import validate_dataset
from ...tasks.dataset_gen import generate_dataset_task


router = APIRouter(
    prefix="/dataset",
    tags=["回合数据集"],
)


@router.post("/generate", response_model=schemas.TaskCreationResponse, summary="启动数据集生成任务")
def start_dataset_generate(
    request: schemas.DatasetGenerateRequest, background_tasks: BackgroundTasks, db: Session = Depends(get_db)
):
    processing_task_id = crud.is_task_type_processing(db, "DatasetGenerate")
    if processing_task_id:
        return schemas.TaskCreationResponse(
            message="已有数据集生成任务正在进行中, 请等待其完成后再试",
            task_id=processing_task_id
        )
    task_id = str(uuid.uuid4())
    task_name = f"数据集生成_n={request.n}_seed={request.seed}"
    params_dict = request.model_dump(mode="json")
    crud.create_task(db, task_id, task_name, "DatasetGenerate", params_dict)
    background_tasks.add_task(
        generate_dataset_task, task_id, request.n, request.seed,
        params_dict["scene_spec"], request.file_name
    )
    return schemas.TaskCreationResponse(message="数据集生成任务已启动", task_id=task_id)


@router.get("/list", summary="获取已生成的数据集文件")
def list_datasets():
    out_dir = Path(settings.DATASET_OUTPUT_DIR)
    if not out_dir.exists():
        return []
    return sorted(p.name for p in out_dir.glob("*.jsonl"))


@router.get("/validate/{file_name}", summary="校验数据集文件")
def validate_dataset_file(file_name: str):
    """重建每个回合的场景并检查任务类别与初始位姿, 返回问题列表"""
    path = Path(settings.DATASET_OUTPUT_DIR) / file_name
    if not path.exists():
        raise HTTPException(status_code=404, detail=f"数据集文件 {file_name} 不存在")
    try:
        problems = validate_dataset(path)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=f"数据集文件不合法: {e}")
    return {"file_name": file_name, "valid": not problems, "problems": problems}
