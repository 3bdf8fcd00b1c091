# app/utils/file_io.py
import json
import numpy as np
from PIL import Image
from pathlib import Path
from typing import List, Dict, Iterable, Tuple
from pydantic import ValidationError
from ..core.config import InputFileError
from ..core.schemas import DatasetHeader, Episode, EpisodeResult


def dumps(record: Dict) -> str:
    """固定键顺序与分隔符, 保证相同内容写出的字节完全一致"""
    return json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False)

def write_jsonl(path: str | Path, records: Iterable[Dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(dumps(record) + "\n")
    return path

def read_jsonl(path: str | Path) -> List[Dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"文件不存在: {path}")
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise InputFileError(f"{path} 第 {lineno} 行不是合法的JSON: {e}") from e
    return records


def write_dataset(path: str | Path, header: DatasetHeader, episodes: List[Episode]) -> Path:
    """数据集文件: 第一行为文件头, 之后每行一个回合"""
    records = [header.model_dump(mode="json")] + [ep.model_dump(mode="json") for ep in episodes]
    return write_jsonl(path, records)

def read_dataset(path: str | Path) -> Tuple[DatasetHeader, List[Episode]]:
    records = read_jsonl(path)
    if not records:
        raise ValueError(f"数据集文件为空: {path}")
    header = DatasetHeader.model_validate(records[0])
    return header, [Episode.model_validate(r) for r in records[1:]]


def write_results(path: str | Path, results: List[EpisodeResult]) -> Path:
    """结果文件按回合id排序, 不含耗时(耗时写入单独的timings文件)"""
    ordered = sorted(results, key=lambda r: r.episode_id)
    return write_jsonl(path, (r.model_dump(mode="json") for r in ordered))

def read_results(path: str | Path) -> List[EpisodeResult]:
    try:
        return [EpisodeResult.model_validate(r) for r in read_jsonl(path)]
    except ValidationError as e:
        raise InputFileError(f"结果文件 {path} 中的记录不合法: {e}") from e


class JsonlAppender:
    """逐条追加写出JSONL, 每条写完立即flush, 进程中途退出时已写出的行都是完整的"""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._f = open(self.path, "w", encoding="utf-8", newline="\n")

    def append(self, record: Dict):
        self._f.write(dumps(record) + "\n")
        self._f.flush()

    def close(self):
        if not self._f.closed:
            self._f.close()

    def __enter__(self) -> "JsonlAppender":
        return self

    def __exit__(self, *exc):
        self.close()


def write_trace(trace_dir: str | Path, episode_id: int, trace: Dict) -> Path:
    path = Path(trace_dir) / f"episode_{episode_id}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(trace, f, sort_keys=True, indent=2, ensure_ascii=False)
    return path

def read_trace(path: str | Path) -> Dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def read_label_image(path: str | Path) -> np.ndarray:
    """读取8位灰度类别图(每个像素即类别id)"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"类别图不存在: {path}")
    with Image.open(path) as img:
        if img.mode != "L":
            raise InputFileError(f"类别图必须是8位灰度图, 实际模式为 {img.mode}: {path}")
        return np.array(img, dtype=np.uint8)

def write_label_image(path: str | Path, labels: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(labels, dtype=np.uint8)).save(path)
    return path
