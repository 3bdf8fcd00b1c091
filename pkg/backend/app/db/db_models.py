# app/db/db_models.py
import json
from datetime import datetime
from sqlalchemy import Column, Integer, String, Float, DateTime, Text, ForeignKey
from .database import Base


class TaskProgress(Base):
    """跟踪所有后台任务(数据集生成/批量运行)进度的数据表"""
    __tablename__ = "task_progress"

    id = Column(Integer, primary_key=True, index=True)
    task_id = Column(String, unique=True, index=True, comment="任务的唯一ID")
    task_name = Column(String, comment="任务名称, 如:批量运行")
    task_type = Column(String, comment="任务类型, 如:BatchRun")
    status = Column(String, default="PENDING", comment="任务状态, 如: PENDING, PROCESSING, COMPLETED, FAILED")
    start_time = Column(DateTime, default=datetime.now, comment="任务开始时间")
    end_time = Column(DateTime, nullable=True, comment="任务结束时间")
    task_params = Column(Text, comment="任务参数的JSON字符串")
    cur_progress = Column(Float, default=0.0, comment="当前进度(0.0 to 100.0)")
    progress_text = Column(String, default="任务已提交, 等待执行...", comment="任务进度的文字描述")

    def set_params(self, params: dict):
        self.task_params = json.dumps(params, ensure_ascii=False)

    def get_params(self) -> dict:
        return json.loads(self.task_params) if self.task_params else {}


class BatchRunRecord(Base):
    """已完成的批量运行记录表"""
    __tablename__ = "batch_run_record"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(String, unique=True, index=True, comment="运行唯一ID")
    dataset_path = Column(String, comment="数据集文件路径")
    results_path = Column(String, comment="结果文件路径")
    create_time = Column(DateTime, default=datetime.now, comment="运行完成时间")
    run_config = Column(Text, comment="运行配置的JSON字符串")
    metrics = Column(Text, nullable=True, comment="汇总指标的JSON字符串")
    task_id = Column(String, ForeignKey("task_progress.task_id"), comment="关联的批量运行任务ID")

    def set_run_config(self, config: dict):
        self.run_config = json.dumps(config, ensure_ascii=False)

    def get_run_config(self) -> dict:
        return json.loads(self.run_config) if self.run_config else {}

    def set_metrics(self, metrics: dict | None):
        self.metrics = json.dumps(metrics, ensure_ascii=False) if metrics is not None else None

    def get_metrics(self) -> dict | None:
        return json.loads(self.metrics) if self.metrics else None
