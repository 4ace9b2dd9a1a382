import itertools
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config import settings
from .exceptions import DegenerateInstanceError, InstanceSizeError, ModelDomainError
from .lower_game import (
    AllocationState,
    LowerGameInstance,
    activation_patterns,
    sinr_coefficient,
    utility_exact,
    utility_lower_bound,
)
from .net_model import (
    ALPHA_UE_BS,
    ALPHA_UE_UE,
    PowerControlConfig,
    db_to_linear,
    fractional_power,
    noise_power,
    path_gain,
)
from .upper_pricing import LcpInstance, UpperInstance, block_inverse

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridSpec:
    """每维 points_per_dim 个等距点的 [0,1]^dims 网格"""

    points_per_dim: int = settings.GRID_POINTS
    dims: int = 1
    budget: int = settings.GRID_BUDGET

    def __post_init__(self):
        if self.points_per_dim < 2:
            raise ModelDomainError("points_per_dim 必须 >= 2")
        if self.total_points > self.budget:
            raise InstanceSizeError(f"网格点数 {self.points_per_dim}^{self.dims} 超过预算 {self.budget}")

    @property
    def total_points(self) -> int:
        return self.points_per_dim ** self.dims

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.points_per_dim)

    def chunks(self, size: int = 8192):
        """按块产生网格点, 顺序确定"""
        axis = self.axis
        product = itertools.product(axis, repeat=self.dims)
        while True:
            block = list(itertools.islice(product, size))
            if not block:
                return
            yield np.array(block, dtype=float).reshape(len(block), self.dims)


def _weighted_rate_table(inst: LowerGameInstance, patterns: np.ndarray) -> np.ndarray:
    """每个激活组合下的 sum_i w_i 1{i} log2(1+SINR_i)"""
    s = patterns.astype(float) @ inst.coupling.g_mat.T
    rates = patterns * np.log2(1.0 + inst.direct / (s + inst.i_c))
    return rates @ inst.w


def brute_force_single_stage(inst: UpperInstance, grid: Optional[GridSpec] = None
                             ) -> Tuple[np.ndarray, float]:
    """在网格上穷举单阶段问题: max sum w_i R_i(x), s.t. sum x_i P_i g_ii <= Q"""
    low = inst.lower
    grid = grid or GridSpec(dims=low.n_d)
    if grid.dims != low.n_d:
        raise ModelDomainError(f"网格维度 {grid.dims} 与链路数 {low.n_d} 不符")
    patterns = activation_patterns(low.n_d)
    table = _weighted_rate_table(low, patterns)
    slack = inst.q_tol * (1 + 1e-12)
    best_x, best_obj = np.zeros(low.n_d), 0.0
    for block in grid.chunks():
        feasible = block[block @ low.beta <= slack]
        if feasible.size == 0:
            continue
        probs = np.prod(np.where(patterns[None, :, :], feasible[:, None, :], 1.0 - feasible[:, None, :]), axis=2)
        objective = probs @ table
        k = int(np.argmax(objective))
        if objective[k] > best_obj:
            best_obj, best_x = float(objective[k]), feasible[k].copy()
    return best_x, best_obj


@dataclass
class LcpSolution:
    y: np.ndarray
    z: np.ndarray
    basis: Tuple[int, ...]


def brute_force_lcp(lcp: LcpInstance, nu: float, tol: float = 1e-9) -> List[LcpSolution]:
    """
    枚举全部互补基, 保留非负解。
    可行性容差按各分量的量级取相对值: y_alpha 用 |A_aa^-1| |q + nu d|, z 用 |A| |y| + |q + nu d|。
    """
    size = lcp.a_mat.shape[0]
    if size > settings.LCP_ENUM_MAX_DIM:
        raise InstanceSizeError(f"LCP 维度 {size} 超过枚举上限 {settings.LCP_ENUM_MAX_DIM}")
    rhs = lcp.q_vec + nu * lcp.d_vec
    solutions = []
    for code in range(2 ** size):
        basis = np.array([(code >> k) & 1 for k in range(size)], dtype=bool)
        alpha = np.flatnonzero(basis)
        y = np.zeros(size)
        y_scale = np.zeros(size)
        if alpha.size:
            try:
                inv = block_inverse(lcp.a_mat[np.ix_(alpha, alpha)])
            except DegenerateInstanceError:
                logger.debug("skip singular basis %s", alpha.tolist())
                continue
            y[alpha] = -inv @ rhs[alpha]
            y_scale[alpha] = np.abs(inv) @ np.abs(rhs[alpha])
        z = lcp.a_mat @ y + rhs
        z_scale = np.abs(rhs) + np.abs(lcp.a_mat) @ np.abs(y)
        if np.all(y >= -tol * y_scale) and np.all(z >= -tol * z_scale):
            solutions.append(LcpSolution(y=np.maximum(y, 0.0), z=np.maximum(z, 0.0), basis=tuple(alpha.tolist())))
    return solutions


def verify_ne(x: AllocationState, inst: LowerGameInstance, utility: str = "lower-bound",
              grid_points: int = settings.NE_GRID_POINTS, tol: float = 1e-6) -> Tuple[bool, float]:
    """逐链路在网格上扫描单方面偏离, 返回 (是否为纳什均衡, 最大收益提升)"""
    xv = x.x if isinstance(x, AllocationState) else np.asarray(x, dtype=float)
    grid = np.linspace(0.0, 1.0, grid_points)
    if utility == "exact":
        coefficient = sinr_coefficient(inst, xv)

        def value(i, xi):
            return utility_exact(i, xi, xv, inst, coefficient)
    elif utility == "lower-bound":
        def value(i, xi):
            return utility_lower_bound(i, xi, xv, inst)
    else:
        raise ModelDomainError(f"未知效用 {utility!r}")
    max_gain = 0.0
    for i in range(inst.n_d):
        current = value(i, xv[i])
        best = max(value(i, v) for v in grid)
        max_gain = max(max_gain, best - current)
    scale = max(1.0, float(np.max(inst.w))) if inst.n_d else 1.0
    return max_gain <= tol * scale, float(max_gain)


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float


def mc_expected_rate(i: int, x: Sequence[float], inst: LowerGameInstance, samples: int = 100000,
                     seed: int = 0) -> McEstimate:
    """按 x 抽样伯努利激活组合, 平均 1{i} log2(1+SINR_i)"""
    if samples < settings.MC_MIN_SAMPLES:
        raise InstanceSizeError(f"样本数至少 {settings.MC_MIN_SAMPLES}")
    x = x.x if isinstance(x, AllocationState) else np.asarray(x, dtype=float)
    rng = np.random.default_rng(seed)
    draws = rng.random((samples, inst.n_d)) < x
    s = draws.astype(float) @ inst.coupling.g_mat[i]
    values = draws[:, i] * np.log2(1.0 + inst.direct[i] / (s + inst.i_c[i]))
    return McEstimate(mean=float(values.mean()), stderr=float(values.std(ddof=1) / np.sqrt(samples)))


def random_upper_instance(n_d: int, seed: int = 0, q_tol_db: float = 0.0, cross_scale: float = 1.0,
                          cell_radius: float = 500.0, mean_length: float = 80.0,
                          bandwidth: float = 1e6) -> UpperInstance:
    """
    单小区单资源块的随机实例: 基站位于原点, 一个蜂窝用户与 n_d 对 D2D 链路在半径
    cell_radius 的圆内均匀分布, 链路长度服从指数分布。cross_scale 缩放 D2D 交叉增益。
    """
    rng = np.random.default_rng(seed)

    def uniform_disc(count: int) -> np.ndarray:
        r = cell_radius * np.sqrt(rng.random(count))
        theta = 2 * np.pi * rng.random(count)
        return r * np.exp(1j * theta)

    d2d_cfg = PowerControlConfig(p_max=0.02, kappa=0.75, alpha=ALPHA_UE_UE)
    cell_cfg = PowerControlConfig(p_max=0.2, kappa=0.75, alpha=ALPHA_UE_BS)
    tx = uniform_disc(n_d)
    length = np.maximum(rng.exponential(mean_length, n_d), 1.0)
    rx = tx + length * np.exp(2j * np.pi * rng.random(n_d))
    ue = uniform_disc(1)[0]

    dist = np.maximum(np.abs(tx[:, None] - rx[None, :]), 1.0)  # dist[j, i]: tx j -> rx i
    h = path_gain(dist, ALPHA_UE_UE)
    off = ~np.eye(n_d, dtype=bool)
    h = np.where(off, h * cross_scale, h)
    g = path_gain(np.maximum(np.abs(tx), 1.0), ALPHA_UE_BS)
    p_d = np.atleast_1d(fractional_power(length, d2d_cfg))
    d_ue = max(abs(ue), 1.0)
    p_c = fractional_power(d_ue, cell_cfg)
    gc = path_gain(d_ue, ALPHA_UE_BS)
    hc = path_gain(np.maximum(np.abs(ue - rx), 1.0), ALPHA_UE_UE)
    i_c = p_c * hc + noise_power(bandwidth)
    lower = LowerGameInstance(h=h, g=g, p_d=p_d, i_c=i_c, w=np.ones(n_d))
    q_tol = db_to_linear(q_tol_db) * p_c * gc
    return UpperInstance(lower=lower, q_tol=q_tol)
