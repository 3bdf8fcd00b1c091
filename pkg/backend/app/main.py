# app/main.py
import asyncio
import logging
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from contextlib import asynccontextmanager
from app.api.routers import config_manage, task_operate, dataset, batch_run, report, perception
from app.core.config import STOP_EVENT


logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    try:
        logger.info("应用启动...")
        from app.db.database import create_db_and_tables
        create_db_and_tables()
        yield
    except asyncio.CancelledError:
        logger.info("收到取消信号, 正在关闭...")
    finally:
        logger.info("应用关闭...发送停止信号给后台任务...")
        STOP_EVENT.set()
        logger.info("应用已关闭...")

app = FastAPI(
    title="桌面尺度开放词汇移动操作仿真 API",
    description="用于回合数据集生成, 批量运行, 结果报表和类别图融合的API接口",
    version="1.0.0",
    lifespan=lifespan
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

@app.get("/", tags=["首页"])
async def root():
    return {"message": "欢迎使用开放词汇移动操作仿真 API!"}

app.include_router(config_manage.router)
app.include_router(task_operate.router)
app.include_router(dataset.router)
app.include_router(batch_run.router)
app.include_router(report.router)
app.include_router(perception.router)
