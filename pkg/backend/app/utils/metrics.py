# app/utils/metrics.py
import math
from decimal import Decimal, ROUND_HALF_UP
import numpy as np
from typing import Sequence, Tuple
from scipy import stats


def percent(count, total):
    """
    百分比, total为0时返回0
    :param count: 计数
    :param total: 总数
    :return: 百分比
    """
    return 100.0 * count / total if total else 0.0

def mean_percent(flags: Sequence[bool]):
    """
    布尔序列的均值(%)
    :param flags: 每个回合的成功标记
    :return: 成功率
    """
    if len(flags) == 0:
        return 0.0
    return float(np.mean(np.asarray(flags, dtype=np.float64))) * 100.0

def conditional_percent(rate, prev_rate):
    """
    条件成功率 rate / prev_rate * 100, 前一项为0时返回0
    :param rate: 当前子任务的成功率(%)
    :param prev_rate: 前一子任务的成功率(%)
    :return: 相对成功率(%)
    """
    if prev_rate == 0:
        return 0.0
    return rate / prev_rate * 100.0

def clopper_pearson(successes: int, n: int, confidence: float = 0.95) -> Tuple[float, float]:
    """
    二项分布成功率的精确置信区间
    :param successes: 成功次数
    :param n: 试验次数
    :param confidence: 置信水平
    :return: (下界, 上界)
    """
    if n == 0:
        return (0.0, 1.0)
    alpha = 1 - confidence
    lo = stats.beta.ppf(alpha / 2, successes, n - successes + 1) if successes > 0 else 0.0
    hi = stats.beta.ppf(1 - alpha / 2, successes + 1, n - successes) if successes < n else 1.0
    return (float(lo), float(hi))

def one_sided_not_worse(successes_a: int, n_a: int, successes_b: int, n_b: int, confidence: float = 0.95) -> bool:
    """
    单侧双比例检验: 在给定置信水平下不能认为A的成功率低于B
    :return: True 表示数据不支持 "A < B"
    """
    if n_a == 0 or n_b == 0:
        return True
    p_a, p_b = successes_a / n_a, successes_b / n_b
    pooled = (successes_a + successes_b) / (n_a + n_b)
    se = math.sqrt(pooled * (1 - pooled) * (1 / n_a + 1 / n_b))
    if se == 0:
        return p_a >= p_b
    z = (p_a - p_b) / se
    # H1: p_a < p_b, 拒绝域在左侧
    return bool(stats.norm.cdf(z) > 1 - confidence)

def binomial_sigma(p: float, n: int) -> float:
    """n次独立试验中成功频率的标准差"""
    return math.sqrt(p * (1 - p) / n) if n else 0.0

def round_half_up(value: float, ndigits: int = 1) -> float:
    """四舍五入(0.5进位), 报表中的百分比统一用它取位, 避免 6.25 -> 6.2"""
    q = Decimal(1).scaleb(-ndigits)
    return float(Decimal(str(value)).quantize(q, rounding=ROUND_HALF_UP))
