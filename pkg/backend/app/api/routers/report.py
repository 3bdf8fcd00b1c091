# app/api/routers/report.py
from fastapi import APIRouter, HTTPException
from ...core import schemas
from ...core.report import report
from ...core.evaluation import EmptyInput


router = APIRouter(
    prefix="/report",
    tags=["结果报表"],
)


@router.post("/render", response_model=schemas.ReportResponse, summary="渲染一个或多个结果文件的报表")
def render(request: schemas.ReportRequest):
    try:
        text, reports = report(request.results_paths, compare=request.compare)
    except FileNotFoundError as e:
        raise HTTPException(status_code=404, detail=str(e))
    except (EmptyInput, ValueError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    return schemas.ReportResponse(text=text, metrics=list(reports.values()))
