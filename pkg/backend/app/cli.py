# app/cli.py
import sys
import logging
import argparse
from pathlib import Path
from typing import List, Optional
from pydantic import ValidationError
from .core.config import settings, OvmmError, InputFileError
from .core.batch import load_run_config, load_scene_spec, run_batch
from .core.dataset import generate_dataset
from .core.report import report, plot_relative_rates
from .core.perception import TaskClasses, fuse_label_files


logger = logging.getLogger("app.cli")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2


def _cmd_gen(args) -> int:
    spec = load_scene_spec(args.spec)
    out = args.out or Path(settings.DATASET_OUTPUT_DIR) / "episodes.jsonl"
    generate_dataset(args.n, args.seed, spec, out)
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = load_run_config(args.config)

    def _progress(done: int, total: int):
        if done == total or done % 10 == 0:
            logger.info(f"|--> 进度: {done}/{total} ({done / total * 100:.2f}%)")

    summary = run_batch(
        cfg, args.dataset, master_seed=args.seed, workers=args.workers,
        out_dir=args.out, trace=args.trace or None, progress=_progress,
    )
    if summary.metrics is not None:
        m = summary.metrics
        print(f"episodes={summary.n_episodes} overall_sr={m.overall_success_rate:.1f} psm={m.partial_success_metric:.1f}")
    print(summary.results_path)
    return EXIT_OK


def _cmd_report(args) -> int:
    text, reports = report(args.results, compare=args.compare)
    print(text, end="")
    if args.plot:
        plot_relative_rates(reports, args.plot)
    return EXIT_OK


def _cmd_fuse(args) -> int:
    task = TaskClasses(args.goal_class, args.start_class, args.goal_receptacle_class)
    fuse_label_files(args.taskspec, args.openvocab, task, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ovmm", description="桌面尺度开放词汇移动操作仿真")
    parser.add_argument("-v", "--verbose", action="store_true", help="输出DEBUG级别日志")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="生成回合数据集")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spec", help="场景规格TOML, 缺省使用默认规格")
    p.add_argument("--out", help="输出的数据集文件")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("run", help="批量运行数据集中的回合")
    p.add_argument("--dataset", help="数据集文件, 缺省取配置中的run.dataset")
    p.add_argument("--config", help="TOML运行配置")
    p.add_argument("--seed", type=int, help="主随机种子")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="结果输出目录")
    p.add_argument("--trace", action="store_true", help="为每个回合写出轨迹文件")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("report", help="渲染结果报表")
    p.add_argument("results", nargs="+", help="一个或多个results.jsonl")
    p.add_argument("--compare", action="store_true", help="以第一个结果为基准显示差值")
    p.add_argument("--plot", help="把技能相对成功率柱状图保存到该路径")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("fuse", help="离线融合两张8位类别图")
    p.add_argument("--taskspec", required=True)
    p.add_argument("--openvocab", required=True)
    p.add_argument("--goal-class", type=int, required=True)
    p.add_argument("--start-class", type=int)
    p.add_argument("--goal-receptacle-class", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fuse)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except InputFileError as e:
        logger.error(f"|--> [读写错误]: {e}")
        return EXIT_IO
    except (OvmmError, ValidationError, ValueError) as e:
        logger.error(f"|--> [配置错误]: {e}")
        return EXIT_CONFIG
    except OSError as e:
        logger.error(f"|--> [读写错误]: {e}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
