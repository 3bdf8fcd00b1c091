# app/api/routers/config_manage.py
from fastapi import APIRouter, HTTPException
from pydantic import ValidationError
from ...core.schemas import MessageResponse, DetectorProfile, DetectorProfileUpdateRequest
from ...core.config import settings, load_config_json, ConfigError
from ...core.perception import load_detector_profile, save_detector_profile


router = APIRouter(
    prefix="/settings",
    tags=["设置"],
)


@router.get("/all-config-info", summary="获取当前所有配置信息")
def get_all_config():
    """获取config.json中的全部配置"""
    return load_config_json()


@router.get("/detectors", summary="获取可用的检测器预设名称")
def get_available_detectors():
    return settings.AVAILABLE_DETECTORS


@router.get("/detectors/{name}", response_model=DetectorProfile, summary="获取检测器预设")
def get_detector_profile(name: str):
    try:
        return load_detector_profile(name)
    except ConfigError as e:
        raise HTTPException(status_code=404, detail=str(e))


@router.put("/detectors/{name}", response_model=MessageResponse, summary="更新检测器预设")
def update_detector_profile(name: str, request: DetectorProfileUpdateRequest):
    """在已有预设的基础上更新部分参数, 校验通过后写回预设文件"""
    try:
        cur = load_detector_profile(name).model_dump(mode="json")
    except ConfigError as e:
        raise HTTPException(status_code=404, detail=str(e))
    cur.update(request.params)
    try:
        profile = DetectorProfile.model_validate({**cur, "name": name})
    except ValidationError as e:
        raise HTTPException(status_code=400, detail=f"检测器预设参数不合法: {e}")
    save_detector_profile(profile)
    return MessageResponse(message=f"检测器预设 {name} 更新成功")
