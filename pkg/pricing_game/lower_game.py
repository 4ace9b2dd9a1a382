import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import settings
from .exceptions import InstanceSizeError, ModelDomainError
from .net_model import ChannelMatrices, PowerVector, cellular_interference

logger = logging.getLogger(__name__)

LN2 = np.log(2.0)

NORM_ORDERS = {"l1": 1, "l2": 2, "linf": np.inf}


class LinkState(Enum):
    SILENT = "silent"
    ACTIVE = "active"
    SATURATED = "saturated"


def _norm_order(norm: str):
    try:
        return NORM_ORDERS[norm]
    except KeyError:
        raise ModelDomainError(f"未知范数 {norm!r}, 可选 {sorted(NORM_ORDERS)}")


@dataclass(frozen=True)
class LowerGameInstance:
    """
    单个资源块上的下层 D2D 博弈。

    h[j, i] 为发射端 j 到接收端 i 的增益, i_c 为蜂窝干扰加噪声 I_Ci,
    mu 为基站广播的干扰单价。
    """

    h: np.ndarray
    g: np.ndarray
    p_d: np.ndarray
    i_c: np.ndarray
    w: np.ndarray
    mu: float = 0.0

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        n = h.shape[0] if h.ndim == 2 else 0
        arrays = {
            "h": h.reshape(n, n),
            "g": np.asarray(self.g, dtype=float).reshape(n),
            "p_d": np.asarray(self.p_d, dtype=float).reshape(n),
            "i_c": np.asarray(self.i_c, dtype=float).reshape(n),
            "w": np.asarray(self.w, dtype=float).reshape(n),
        }
        if np.any(arrays["w"] <= 0):
            raise ModelDomainError("权重 w 必须为正")
        if np.any(arrays["i_c"] <= 0):
            raise ModelDomainError("I_C 必须为正")
        if np.any(arrays["p_d"] <= 0) or np.any(arrays["g"] <= 0) or np.any(arrays["h"] <= 0):
            raise ModelDomainError("功率与增益必须为正")
        if not self.mu >= 0:
            raise ModelDomainError(f"价格必须非负, 实际 {self.mu}")
        for name, arr in arrays.items():
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "mu", float(self.mu))

    @classmethod
    def from_channel(cls, ch: ChannelMatrices, pw: PowerVector, k: int = 0,
                     w: Optional[Sequence[float]] = None, mu: float = 0.0) -> "LowerGameInstance":
        n = ch.n_d
        weights = np.ones(n) if w is None else np.asarray(w, dtype=float)
        return cls(h=ch.h, g=ch.g, p_d=pw.p_d, i_c=cellular_interference(ch, pw, k), w=weights, mu=mu)

    @property
    def n_d(self) -> int:
        return self.h.shape[0]

    @property
    def direct(self) -> np.ndarray:
        """直连接收功率 P_i h_ii"""
        return self.p_d * np.diag(self.h)

    @property
    def beta(self) -> np.ndarray:
        """满功率时对基站的干扰 P_i g_ii"""
        return self.p_d * self.g

    @property
    def coupling(self) -> "InterferenceCoupling":
        return InterferenceCoupling.from_instance(self)

    def with_price(self, mu: float) -> "LowerGameInstance":
        return LowerGameInstance(h=self.h, g=self.g, p_d=self.p_d, i_c=self.i_c, w=self.w, mu=mu)

    def waterline(self) -> np.ndarray:
        """a_i = w_i h_ii / (mu g_ii) - I_Ci; mu = 0 时为 +inf"""
        if self.mu == 0:
            return np.full(self.n_d, np.inf)
        return self.w * np.diag(self.h) / (self.mu * self.g) - self.i_c

    def to_dict(self) -> Dict:
        return {
            "h": self.h.tolist(), "g": self.g.tolist(), "p_d": self.p_d.tolist(),
            "i_c": self.i_c.tolist(), "w": self.w.tolist(), "mu": self.mu,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "LowerGameInstance":
        return cls(h=data["h"], g=data["g"], p_d=data["p_d"], i_c=data["i_c"],
                   w=data["w"], mu=data.get("mu", 0.0))


@dataclass(frozen=True)
class InterferenceCoupling:
    """G[i, j] = P_j h_ji, 对角线为零; s = G x"""

    g_mat: np.ndarray

    def __post_init__(self):
        g_mat = np.array(self.g_mat, dtype=float)
        if g_mat.size and np.any(np.diag(g_mat) != 0):
            raise ModelDomainError("耦合矩阵对角线必须为零")
        if np.any(g_mat < 0):
            raise ModelDomainError("耦合矩阵元素必须非负")
        g_mat.setflags(write=False)
        object.__setattr__(self, "g_mat", g_mat)

    @classmethod
    def from_instance(cls, inst: LowerGameInstance) -> "InterferenceCoupling":
        g_mat = (inst.p_d[:, None] * inst.h).T.copy()
        np.fill_diagonal(g_mat, 0.0)
        return cls(g_mat)

    def interference(self, x: np.ndarray) -> np.ndarray:
        return self.g_mat @ np.asarray(x, dtype=float)

    def norm(self, norm: str = "linf") -> float:
        if self.g_mat.size == 0:
            return 0.0
        return float(np.linalg.norm(self.g_mat, _norm_order(norm)))


@dataclass
class AllocationState:
    """接入概率向量及每条链路的 静默/活跃/饱和 标记"""

    x: np.ndarray
    classification: Tuple[LinkState, ...] = ()

    @classmethod
    def from_vector(cls, x: Sequence[float], tol: float = settings.CLASSIFY_TOL) -> "AllocationState":
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        labels = []
        for xi in x:
            if xi <= tol:
                labels.append(LinkState.SILENT)
            elif xi >= 1.0 - tol:
                labels.append(LinkState.SATURATED)
            else:
                labels.append(LinkState.ACTIVE)
        return cls(x=x, classification=tuple(labels))

    def indices(self, state: LinkState) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.classification) if s is state], dtype=int)

    @property
    def active(self) -> np.ndarray:
        return self.indices(LinkState.ACTIVE)

    @property
    def saturated(self) -> np.ndarray:
        return self.indices(LinkState.SATURATED)

    @property
    def silent(self) -> np.ndarray:
        return self.indices(LinkState.SILENT)

    def to_dict(self) -> Dict:
        return {"x": self.x.tolist(), "classification": [s.value for s in self.classification]}


@dataclass
class ConvergenceTrace:
    iterates: List[np.ndarray] = field(default_factory=list)
    residuals: List[float] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    norm: str = "linf"

    def ratios(self) -> np.ndarray:
        """相邻残差之比，用于和收缩率上界比较"""
        r = np.asarray(self.residuals, dtype=float)
        if r.size < 2:
            return np.zeros(0)
        prev = r[:-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(prev > 0, r[1:] / np.where(prev > 0, prev, 1.0), 0.0)
        return out

    def to_rows(self) -> List[Dict]:
        return [{"iteration": t + 1, "residual": float(r)} for t, r in enumerate(self.residuals)]


def classify(x: Sequence[float], tol: float = settings.CLASSIFY_TOL) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """返回 (活跃, 饱和, 静默) 三组下标"""
    state = AllocationState.from_vector(x, tol)
    return state.active, state.saturated, state.silent


def _as_vector(x: Union[AllocationState, Sequence[float]]) -> np.ndarray:
    if isinstance(x, AllocationState):
        return x.x
    return np.asarray(x, dtype=float)


# ---------------------------------------------------------------------------
# 精确期望速率（枚举全部激活组合）
# ---------------------------------------------------------------------------

def activation_patterns(n: int, cap: int = None) -> np.ndarray:
    """2^n 个激活组合, 每行一个 0/1 指示向量"""
    cap = settings.EXACT_ENUMERATION_CAP if cap is None else cap
    if n > cap:
        raise InstanceSizeError(f"N_D={n} 超过精确枚举上限 {cap}")
    codes = np.arange(2 ** n, dtype=np.int64)
    return ((codes[:, None] >> np.arange(n)) & 1).astype(bool)


def pattern_probabilities(x: np.ndarray, patterns: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if patterns.shape[1] == 0:
        return np.ones(patterns.shape[0])
    return np.prod(np.where(patterns, x, 1.0 - x), axis=1)


def _pattern_sinr(inst: LowerGameInstance, patterns: np.ndarray) -> np.ndarray:
    """每个组合下各链路若发射时的 SINR, 形状 (2^n, n)"""
    g_mat = inst.coupling.g_mat
    s = patterns.astype(float) @ g_mat.T
    return inst.direct / (s + inst.i_c)


def expected_rate_exact(i: int, x: Union[AllocationState, Sequence[float]], inst: LowerGameInstance) -> float:
    """链路 i 的期望速率 E[1{i 激活} log2(1+SINR)]"""
    x = _as_vector(x)
    patterns = activation_patterns(inst.n_d)
    probs = pattern_probabilities(x, patterns)
    sinr = _pattern_sinr(inst, patterns)[:, i]
    return float(np.sum(probs * patterns[:, i] * np.log2(1.0 + sinr)))


def sinr_coefficient(inst: LowerGameInstance, x: Union[AllocationState, Sequence[float]]) -> np.ndarray:
    """
    c_i = E_{其他链路}[P_i h_ii / (I + I_Ci)]。
    第 i 条链路自身的比特不影响其受到的干扰，因此可直接对全部组合取期望。
    """
    x = _as_vector(x)
    patterns = activation_patterns(inst.n_d)
    probs = pattern_probabilities(x, patterns)
    return probs @ _pattern_sinr(inst, patterns)


def expected_sinr_rate(i: int, x: Union[AllocationState, Sequence[float]], inst: LowerGameInstance) -> float:
    """log2(1 + x_i c_i): 精确博弈效用中的速率项"""
    x = _as_vector(x)
    return float(np.log2(1.0 + x[i] * sinr_coefficient(inst, x)[i]))


def expected_interference_rate(i: int, x: Union[AllocationState, Sequence[float]], inst: LowerGameInstance) -> float:
    """log2(1 + x_i P_i h_ii / (s_i + I_Ci)): 下界博弈中的速率项（以 bit 计）"""
    x = _as_vector(x)
    s = inst.coupling.interference(x)[i]
    return float(np.log2(1.0 + x[i] * inst.direct[i] / (s + inst.i_c[i])))


def utility_exact(i: int, xi: float, x: Union[AllocationState, Sequence[float]], inst: LowerGameInstance,
                  coefficient: Optional[np.ndarray] = None) -> float:
    """w_i log2(1 + x_i c_i) - mu x_i P_i g_ii"""
    c = sinr_coefficient(inst, _as_vector(x)) if coefficient is None else coefficient
    return float(inst.w[i] * np.log2(1.0 + xi * c[i]) - inst.mu * xi * inst.beta[i])


def utility_lower_bound(i: int, xi: float, x: Union[AllocationState, Sequence[float]], inst: LowerGameInstance) -> float:
    """w_i ln(1 + x_i P_i h_ii / (s_i + I_Ci)) - mu x_i P_i g_ii"""
    x = _as_vector(x)
    s = inst.coupling.interference(x)[i]
    return float(inst.w[i] * np.log1p(xi * inst.direct[i] / (s + inst.i_c[i])) - inst.mu * xi * inst.beta[i])


def marginal_utility_lower_bound(x: Union[AllocationState, Sequence[float]], inst: LowerGameInstance) -> np.ndarray:
    """下界效用对自身 x_i 的偏导，用于 KKT 检查"""
    x = _as_vector(x)
    s = inst.coupling.interference(x)
    return inst.w * inst.direct / (s + inst.i_c + x * inst.direct) - inst.mu * inst.beta


# ---------------------------------------------------------------------------
# 最优响应
# ---------------------------------------------------------------------------

def _br_from_coefficient(inst: LowerGameInstance, c: np.ndarray) -> np.ndarray:
    if inst.mu == 0:
        return np.ones(inst.n_d)
    with np.errstate(divide="ignore"):
        raw = inst.w / (inst.mu * inst.beta * LN2) - 1.0 / c
    return np.clip(raw, 0.0, 1.0)


def br_exact(i: int, x_others: Sequence[float], inst: LowerGameInstance) -> float:
    """精确博弈中链路 i 的最优响应, x_others[i] 不参与计算"""
    c = sinr_coefficient(inst, x_others)
    return float(_br_from_coefficient(inst, c)[i])


def br_map(x: Sequence[float], inst: LowerGameInstance) -> np.ndarray:
    """所有链路同时做精确最优响应"""
    return _br_from_coefficient(inst, sinr_coefficient(inst, x))


def lb_best_response(i: int, x_others: Sequence[float], inst: LowerGameInstance) -> float:
    """下界博弈闭式解 clamp((a_i - s_i) / (P_i h_ii))"""
    return float(lb_map(x_others, inst)[i])


def lb_map(x: Sequence[float], inst: LowerGameInstance) -> np.ndarray:
    if inst.mu == 0:
        return np.ones(inst.n_d)
    s = inst.coupling.interference(np.asarray(x, dtype=float))
    return np.clip((inst.waterline() - s) / inst.direct, 0.0, 1.0)


def _fixed_point(update: Callable[[np.ndarray], np.ndarray], x0: np.ndarray, eps: float,
                 max_iter: int, norm: str) -> Tuple[AllocationState, ConvergenceTrace]:
    order = _norm_order(norm)
    x = np.asarray(x0, dtype=float).copy()
    trace = ConvergenceTrace(iterates=[x.copy()], norm=norm)
    for _ in range(max_iter):
        x_new = update(x)
        residual = float(np.linalg.norm(x_new - x, order)) if x.size else 0.0
        trace.iterates.append(x_new.copy())
        trace.residuals.append(residual)
        trace.iterations += 1
        x = x_new
        logger.debug("iteration %d residual %.3e", trace.iterations, residual)
        if residual < eps:
            trace.converged = True
            break
    if not trace.converged:
        logger.warning("不动点迭代 %d 次未收敛, 末次残差 %.3e", max_iter, trace.residuals[-1] if trace.residuals else 0.0)
    return AllocationState.from_vector(x), trace


def br_iterate(inst: LowerGameInstance, x0: Optional[Sequence[float]] = None, eps: float = settings.LB_EPS,
               max_iter: int = settings.LB_MAX_ITER, norm: str = settings.RESIDUAL_NORM
               ) -> Tuple[AllocationState, ConvergenceTrace]:
    """BR 算法: 同步精确最优响应迭代, 默认从全 1 出发"""
    activation_patterns(inst.n_d)  # 规模检查
    start = np.ones(inst.n_d) if x0 is None else np.asarray(x0, dtype=float)
    return _fixed_point(lambda x: br_map(x, inst), start, eps, max_iter, norm)


def lb_iterate(inst: LowerGameInstance, eps: float = settings.LB_EPS, max_iter: int = settings.LB_MAX_ITER,
               x0: Optional[Sequence[float]] = None, norm: str = settings.RESIDUAL_NORM
               ) -> Tuple[AllocationState, ConvergenceTrace]:
    """LB 算法: x(0) = 1, 同步更新 x(t+1) = f_L(x(t)) 直到残差 < eps"""
    start = np.ones(inst.n_d) if x0 is None else np.asarray(x0, dtype=float)
    return _fixed_point(lambda x: lb_map(x, inst), start, eps, max_iter, norm)


# ---------------------------------------------------------------------------
# 分段仿射结构与收缩证书
# ---------------------------------------------------------------------------

def region_of(x: Sequence[float], inst: LowerGameInstance) -> AllocationState:
    """
    x 所在的多面体区域: a_i - s_i <= 0 静默, >= P_i h_ii 饱和, 其余活跃。
    区域内 f_L 为仿射映射。
    """
    if inst.mu == 0:
        return AllocationState(x=np.ones(inst.n_d), classification=(LinkState.SATURATED,) * inst.n_d)
    s = inst.coupling.interference(np.asarray(x, dtype=float))
    gap = inst.waterline() - s
    labels = []
    for i in range(inst.n_d):
        if gap[i] <= 0:
            labels.append(LinkState.SILENT)
        elif gap[i] >= inst.direct[i]:
            labels.append(LinkState.SATURATED)
        else:
            labels.append(LinkState.ACTIVE)
    return AllocationState(x=lb_map(x, inst), classification=tuple(labels))


def region_affine(state: AllocationState, coupling: InterferenceCoupling, inst: LowerGameInstance
                  ) -> Tuple[np.ndarray, np.ndarray]:
    """区域内 f_L(x) = M x + b, 其中 M = B G"""
    n = inst.n_d
    b_diag = np.zeros(n)
    offset = np.zeros(n)
    for i, label in enumerate(state.classification):
        if label is LinkState.ACTIVE:
            b_diag[i] = -1.0 / inst.direct[i]
            offset[i] = inst.waterline()[i] / inst.direct[i]
        elif label is LinkState.SATURATED:
            offset[i] = 1.0
    return b_diag[:, None] * coupling.g_mat, offset


def region_matrix(state: AllocationState, coupling: InterferenceCoupling, inst: LowerGameInstance) -> np.ndarray:
    return region_affine(state, coupling, inst)[0]


@dataclass(frozen=True)
class ContractionCertificate:
    holds: bool
    eta: float
    norm: str

    def to_dict(self) -> Dict:
        return {"holds": self.holds, "eta": self.eta, "norm": self.norm}


def contraction_certificate(coupling: InterferenceCoupling, inst: LowerGameInstance,
                            norm: str = "l1") -> ContractionCertificate:
    """||G|| <= min_i P_i h_ii 时 f_L 为收缩映射, 收缩率上界 eta = ||G|| / min_i P_i h_ii"""
    if inst.n_d == 0:
        return ContractionCertificate(True, 0.0, norm)
    g_norm = coupling.norm(norm)
    floor = float(np.min(inst.direct))
    eta = g_norm / floor
    return ContractionCertificate(holds=g_norm <= floor, eta=eta, norm=norm)
