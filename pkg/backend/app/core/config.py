# app/core/config.py
import json
import threading
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from typing import Dict, Any
from pathlib import Path
from pydantic_settings import BaseSettings, SettingsConfigDict


# 全局的停止事件
STOP_EVENT = threading.Event()
BACKEND_DIR = Path(__file__).resolve().parents[2]
CONFIG_FILE = BACKEND_DIR / "config" / "config.json"


class OvmmError(Exception):
    """本项目所有领域异常的基类"""


class ConfigError(OvmmError):
    """配置文件缺失或不合法"""


class InputFileError(OvmmError, ValueError):
    """输入数据文件内容损坏或格式不对(结果文件、类别图等)"""


def load_config_json():
    """根据默认路径来加载json配置文件"""
    if CONFIG_FILE.exists():
        with open(CONFIG_FILE, "r", encoding="utf-8") as f:
            return json.load(f)
    else:
        return {}


def _resolve(path: str) -> str:
    """相对路径统一按backend目录解析"""
    p = Path(path)
    return str(p if p.is_absolute() else BACKEND_DIR / p)


class Settings(BaseSettings):
    """配置文件读取类, 环境变量 OVMM_* 优先于config.json"""
    model_config = SettingsConfigDict(env_prefix="OVMM_")

    config: Dict[str, Any] = load_config_json()
    DETECTOR_CONFIG_DIR: str = _resolve(config.get("detector_config_dir", "config/detectors"))
    DATASET_OUTPUT_DIR: str = _resolve(config.get("dataset_output_dir", "output/datasets"))
    RESULTS_OUTPUT_DIR: str = _resolve(config.get("results_output_dir", "output/results"))
    DB_PATH: str = _resolve(config.get("db_path", "output/db/ovmm.db"))

    DEFAULT_WORKERS: int = int(config.get("default_workers", 4))
    SKILL_STEP_BUDGET: int = int(config.get("skill_step_budget", 500))
    EPISODE_STEP_BUDGET: int = int(config.get("episode_step_budget", 2000))
    AVAILABLE_DETECTORS: list[str] = config.get(
        "available_detectors", ["ground_truth", "taskspec", "taskspec_finetuned", "openvocab"]
    )


settings = Settings()


def get_detector_config_path(name: str) -> Path:
    """根据检测器名称获取预设配置文件路径"""
    return Path(settings.DETECTOR_CONFIG_DIR) / f"{name.lower()}.json"

def load_detector_config(name: str) -> dict:
    """加载检测器噪声预设"""
    config_path = get_detector_config_path(name)
    if not config_path.exists():
        raise ConfigError(f"检测器预设 {config_path} 不存在")
    with open(config_path, "r", encoding="utf-8") as f:
        return json.load(f)

def save_detector_config(name: str, config_data: dict):
    """将检测器预设保存到指定文件"""
    config_path = get_detector_config_path(name)
    config_path.parent.mkdir(parents=True, exist_ok=True)
    with open(config_path, "w", encoding="utf-8") as f:
        json.dump(config_data, f, indent=4, ensure_ascii=False)

def load_toml(path: str | Path) -> dict:
    """读取TOML格式的运行配置/场景配置, 缺失或格式错误统一抛出ConfigError"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"配置文件 {path} 不存在")
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"配置文件 {path} 格式错误: {e}") from e
