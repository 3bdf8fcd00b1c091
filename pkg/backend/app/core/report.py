# app/core/report.py
import logging
import matplotlib
import pandas as pd
import matplotlib.pyplot as plt
from pathlib import Path
from typing import List, Sequence, Tuple, Dict
from .schemas import EpisodeResult, MetricsReport
from .evaluation import aggregate_metrics, failure_histogram, EmptyInput
from .data_mapping import FAILURE_CAUSE_LABELS
from ..utils.file_io import read_results
from ..utils.metrics import clopper_pearson, one_sided_not_worse, round_half_up


matplotlib.use("Agg")
logger = logging.getLogger(__name__)

ABSOLUTE_COLUMNS = ["NavToObj", "Pick", "NavToRec", "Place", "Overall SR", "Partial Success Metric"]
RELATIVE_COLUMNS = ["NavToObj", "Pick", "NavToRec", "Place"]


def _absolute_row(m: MetricsReport) -> List[float]:
    return [m.nav_to_obj_rate, m.pick_rate, m.nav_to_rec_rate, m.overall_success_rate,
            m.overall_success_rate, m.partial_success_metric]


def _fmt(value: float) -> str:
    return f"{round_half_up(value):.1f}"


def _delta(value: float, base: float) -> str:
    d = round_half_up(value - base) + 0.0
    return f"{_fmt(value)} ({d:+.1f})"


def metrics_tables(reports: Dict[str, MetricsReport], compare: bool = False) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    生成 绝对成功率表 与 技能相对成功率表
    compare=True 时第一个结果作为基准, 其余结果的单元格附带与基准的差值
    """
    names = list(reports)
    absolute = pd.DataFrame([_absolute_row(reports[n]) for n in names], index=names, columns=ABSOLUTE_COLUMNS)
    relative = pd.DataFrame([reports[n].relative_rates for n in names], index=names, columns=RELATIVE_COLUMNS)
    if not compare or len(names) < 2:
        return absolute.map(_fmt), relative.map(_fmt)

    def with_deltas(df: pd.DataFrame) -> pd.DataFrame:
        base = df.iloc[0]
        out = df.map(_fmt).astype(object)
        for name in names[1:]:
            out.loc[name] = [_delta(v, b) for v, b in zip(df.loc[name], base)]
        return out

    return with_deltas(absolute), with_deltas(relative)


def histogram_lines(results: Sequence[EpisodeResult]) -> List[str]:
    rows = failure_histogram(r.failure_cause for r in results)
    return [f"{FAILURE_CAUSE_LABELS[cause.value]} — {round_half_up(pct):.1f}%" for cause, _, pct in rows]


def confidence_lines(named_results: Dict[str, List[EpisodeResult]], compare: bool = False) -> List[str]:
    """
    整体成功率及其95% Clopper-Pearson区间
    compare=True 时, 单侧检验(95%)显著低于第一个结果的行末尾标注 "lower than baseline"
    """
    lines = ["Overall SR 95% confidence interval (%)"]
    base = None
    for name, results in named_results.items():
        n = len(results)
        s = sum(r.flags.place for r in results)
        lo, hi = clopper_pearson(s, n)
        line = f"{name}: {_fmt(100.0 * s / n)} [{_fmt(100.0 * lo)}, {_fmt(100.0 * hi)}]"
        if compare and base is not None and not one_sided_not_worse(s, n, *base):
            line += " lower than baseline"
        if base is None:
            base = (s, n)
        lines.append(line)
    return lines


def render_report(named_results: Dict[str, List[EpisodeResult]], compare: bool = False) -> Tuple[str, Dict[str, MetricsReport]]:
    """把一个或多个结果集渲染成纯文本报表"""
    reports = {}
    for name, results in named_results.items():
        if not results:
            raise EmptyInput(f"结果文件 {name} 中没有回合")
        reports[name] = aggregate_metrics([r.flags for r in results])

    absolute, relative = metrics_tables(reports, compare)
    lines = ["Success rates (%)", absolute.to_string(), "", "Skill relative success rate (%)", relative.to_string()]
    lines += [""] + confidence_lines(named_results, compare)
    for name, results in named_results.items():
        lines += ["", f"Place failure causes: {name} (n={len(results)})"]
        lines += histogram_lines(results) or ["no place failures"]
        errors = sum(r.error is not None for r in results)
        if errors:
            lines.append(f"episodes with runtime errors: {errors}")
    return "\n".join(lines) + "\n", reports


def report(paths: Sequence[str | Path], compare: bool = False) -> Tuple[str, Dict[str, MetricsReport]]:
    named = {}
    for p in paths:
        name = Path(p).parent.name + "/" + Path(p).name if Path(p).parent.name else Path(p).name
        while name in named:
            name += "'"
        named[name] = read_results(p)
    return render_report(named, compare)


def plot_relative_rates(reports: Dict[str, MetricsReport], out_path: str | Path) -> Path:
    """技能相对成功率柱状图"""
    df = pd.DataFrame({name: m.relative_rates for name, m in reports.items()}, index=RELATIVE_COLUMNS)
    fig, ax = plt.subplots(figsize=(7, 4))
    df.plot.bar(ax=ax, rot=0)
    ax.set_ylabel("relative success rate (%)")
    ax.set_ylim(0, 100)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    logger.info(f"|--> 相对成功率图已保存: {out_path}")
    return out_path
