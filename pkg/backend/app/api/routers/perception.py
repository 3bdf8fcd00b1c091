# app/api/routers/perception.py
from fastapi import APIRouter, HTTPException
from ...core import schemas
from ...core.perception import TaskClasses, DimensionMismatch, fuse_label_files


router = APIRouter(
    prefix="/perception",
    tags=["感知"],
)


@router.post("/fuse", response_model=schemas.MessageResponse, summary="离线融合两张类别图")
def fuse_label_images(request: schemas.FuseRequest):
    try:
        task = TaskClasses(request.goal_class, request.start_class, request.goal_receptacle_class)
        fuse_label_files(request.taskspec_path, request.openvocab_path, task, request.out_path)
    except FileNotFoundError as e:
        raise HTTPException(status_code=404, detail=str(e))
    except (DimensionMismatch, ValueError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    return schemas.MessageResponse(message=f"融合类别图已保存: {request.out_path}")
