from dataclasses import dataclass, field
from typing import Iterable, Sequence, Tuple, Union

import numpy as np

from .exceptions import ModelDomainError

ArrayLike = Union[float, Sequence[float], np.ndarray]

# 热噪声功率谱密度 (dBm/Hz)
NOISE_DENSITY_DBM_HZ = -174.0
# 默认路损指数
ALPHA_UE_UE = 4.37
ALPHA_UE_BS = 3.76


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Position:
    """平面坐标（米）"""

    x: float
    y: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise ModelDomainError(f"非有限坐标: ({self.x}, {self.y})")

    def distance_to(self, other: "Position") -> float:
        return float(np.hypot(self.x - other.x, self.y - other.y))

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y}

    @classmethod
    def from_complex(cls, z: complex) -> "Position":
        return cls(float(np.real(z)), float(np.imag(z)))


@dataclass(frozen=True)
class CellularLink:
    tx: Position
    serving_bs: int


@dataclass(frozen=True)
class D2DPair:
    tx: Position
    rx: Position

    def __post_init__(self):
        if self.tx == self.rx:
            raise ModelDomainError("D2D 发射端与接收端位置重合")

    @property
    def length(self) -> float:
        return self.tx.distance_to(self.rx)


@dataclass(frozen=True)
class LinkPopulation:
    """一次撒点得到的链路集合：基站、蜂窝用户、D2D 对和资源块布局"""

    bs_positions: Tuple[Position, ...]
    cellular_links: Tuple[CellularLink, ...] = ()
    d2d_pairs: Tuple[D2DPair, ...] = ()
    rb_count: int = 1
    rb_bandwidth: float = 1e6

    def __post_init__(self):
        if self.rb_count < 1:
            raise ModelDomainError(f"rb_count 必须 >= 1, 实际 {self.rb_count}")
        if self.rb_bandwidth <= 0:
            raise ModelDomainError("rb_bandwidth 必须为正")
        for link in self.cellular_links:
            if not 0 <= link.serving_bs < len(self.bs_positions):
                raise ModelDomainError(f"无效的服务基站索引 {link.serving_bs}")

    @property
    def n_d(self) -> int:
        return len(self.d2d_pairs)

    @property
    def n_c(self) -> int:
        return len(self.cellular_links)


@dataclass(frozen=True)
class PowerControlConfig:
    """分数功率控制参数 P = min(p_max, d^(kappa*alpha))"""

    p_max: float
    kappa: float = 0.75
    alpha: float = ALPHA_UE_BS

    def __post_init__(self):
        if self.p_max <= 0:
            raise ModelDomainError("p_max 必须为正")
        if not 0.0 <= self.kappa <= 1.0:
            raise ModelDomainError(f"kappa 必须位于 [0, 1], 实际 {self.kappa}")
        if self.alpha <= 2.0:
            raise ModelDomainError(f"路损指数必须 > 2, 实际 {self.alpha}")


@dataclass(frozen=True)
class ChannelMatrices:
    """
    线性信道增益与噪声。

    h[j, i]: D2D 发射端 j 到 D2D 接收端 i 的增益（对角线为直连增益 h_ii）
    g[i]: D2D 发射端 i 到基站
    hc[k, i]: 资源块 k 上的蜂窝用户到 D2D 接收端 i
    gc[k]: 资源块 k 上的蜂窝用户到基站
    w_d2d[k, i], w_bs[k]: 噪声（已并入邻区干扰）
    """

    h: np.ndarray
    g: np.ndarray
    hc: np.ndarray
    gc: np.ndarray
    w_d2d: np.ndarray
    w_bs: np.ndarray

    def __post_init__(self):
        h = np.atleast_2d(np.asarray(self.h, dtype=float))
        n = h.shape[0]
        if h.size == 0:
            h = np.zeros((0, 0))
            n = 0
        g = np.asarray(self.g, dtype=float).reshape(n)
        gc = np.atleast_1d(np.asarray(self.gc, dtype=float))
        k = gc.shape[0]
        hc = np.asarray(self.hc, dtype=float).reshape(k, n)
        w_d2d = np.asarray(self.w_d2d, dtype=float).reshape(k, n)
        w_bs = np.asarray(self.w_bs, dtype=float).reshape(k)
        if h.shape != (n, n):
            raise ModelDomainError(f"h 必须为方阵, 实际 {h.shape}")
        for name, arr in (("h", h), ("g", g), ("hc", hc), ("gc", gc)):
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise ModelDomainError(f"{name} 中存在非正或非有限增益")
        for name, arr in (("w_d2d", w_d2d), ("w_bs", w_bs)):
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise ModelDomainError(f"{name} 噪声必须为正")
        for name, arr in (("h", h), ("g", g), ("hc", hc), ("gc", gc), ("w_d2d", w_d2d), ("w_bs", w_bs)):
            object.__setattr__(self, name, _frozen(arr))

    @property
    def n_d(self) -> int:
        return self.h.shape[0]

    @property
    def rb_count(self) -> int:
        return self.gc.shape[0]

    def to_dict(self) -> dict:
        return {name: getattr(self, name).tolist() for name in ("h", "g", "hc", "gc", "w_d2d", "w_bs")}


@dataclass(frozen=True)
class PowerVector:
    """发射功率。p_c[k] = 0 表示资源块 k 上没有调度蜂窝用户"""

    p_d: np.ndarray
    p_c: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        p_d = np.atleast_1d(np.asarray(self.p_d, dtype=float))
        p_c = np.atleast_1d(np.asarray(self.p_c, dtype=float))
        if np.any(p_d <= 0) or not np.all(np.isfinite(p_d)):
            raise ModelDomainError("D2D 发射功率必须为正")
        if np.any(p_c < 0) or not np.all(np.isfinite(p_c)):
            raise ModelDomainError("蜂窝发射功率不能为负")
        object.__setattr__(self, "p_d", _frozen(p_d))
        object.__setattr__(self, "p_c", _frozen(p_c))

    def to_dict(self) -> dict:
        return {"p_d": self.p_d.tolist(), "p_c": self.p_c.tolist()}


def _positive_distance(d: ArrayLike) -> np.ndarray:
    arr = np.asarray(d, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
        raise ModelDomainError(f"距离必须为正, 实际 {d}")
    return arr


def fractional_power(d: ArrayLike, cfg: PowerControlConfig) -> Union[float, np.ndarray]:
    """分数功率控制: min(p_max, d^(kappa*alpha))"""
    arr = _positive_distance(d)
    p = np.minimum(cfg.p_max, arr ** (cfg.kappa * cfg.alpha))
    return float(p) if p.ndim == 0 else p


def path_gain(d: ArrayLike, alpha: float) -> Union[float, np.ndarray]:
    """距离路损增益 d^(-alpha)"""
    arr = _positive_distance(d)
    gain = arr ** (-alpha)
    return float(gain) if gain.ndim == 0 else gain


def noise_power(bandwidth: float, density_dbm_hz: float = NOISE_DENSITY_DBM_HZ) -> float:
    """热噪声功率（瓦）"""
    return 10 ** ((density_dbm_hz + 10 * np.log10(bandwidth) - 30) / 10)


def db_to_linear(value_db: ArrayLike) -> Union[float, np.ndarray]:
    out = 10 ** (np.asarray(value_db, dtype=float) / 10)
    return float(out) if out.ndim == 0 else out


def sinr_d2d(i: int, active_set: Iterable[int], ch: ChannelMatrices, pw: PowerVector, k: int = 0) -> float:
    """资源块 k 上 D2D 链路 i 在给定激活集合下的 SINR"""
    active = set(int(j) for j in active_set)
    if not 0 <= i < ch.n_d:
        raise IndexError(f"D2D 链路索引越界: {i}")
    if i not in active:
        return 0.0
    others = [j for j in active if j != i]
    d2d_interference = float(np.sum(pw.p_d[others] * ch.h[others, i])) if others else 0.0
    cellular = pw.p_c[k] * ch.hc[k, i]
    return float(pw.p_d[i] * ch.h[i, i] / (d2d_interference + cellular + ch.w_d2d[k, i]))


def sinr_cellular(k: int, active_set: Iterable[int], ch: ChannelMatrices, pw: PowerVector) -> float:
    """资源块 k 上蜂窝用户的 SINR（每个资源块至多一个本小区蜂窝用户）"""
    if not 0 <= k < ch.rb_count:
        raise IndexError(f"资源块索引越界: {k}")
    active = sorted(set(int(j) for j in active_set))
    d2d_interference = float(np.sum(pw.p_d[active] * ch.g[active])) if active else 0.0
    return float(pw.p_c[k] * ch.gc[k] / (d2d_interference + ch.w_bs[k]))


def shannon_rate(sinr: ArrayLike, b: float = 1.0) -> Union[float, np.ndarray]:
    """香农速率 B*log2(1+sinr)"""
    arr = np.asarray(sinr, dtype=float)
    if np.any(arr < 0):
        raise ModelDomainError(f"SINR 不能为负: {sinr}")
    rate = b * np.log2(1.0 + arr)
    return float(rate) if rate.ndim == 0 else rate


def cellular_interference(ch: ChannelMatrices, pw: PowerVector, k: int = 0) -> np.ndarray:
    """各 D2D 接收端受到的蜂窝干扰加噪声 I_Ci"""
    return pw.p_c[k] * ch.hc[k] + ch.w_d2d[k]


def d2d_sinr_profile(x: np.ndarray, ch: ChannelMatrices, pw: PowerVector, k: int = 0) -> np.ndarray:
    """
    把 x 视为发射功率比例时的 D2D SINR 向量:
    x_i P_i h_ii / (sum_{j!=i} x_j P_j h_ji + I_Ci)
    """
    x = np.asarray(x, dtype=float)
    received = (x * pw.p_d)[:, None] * ch.h  # received[j, i]
    signal = np.diag(received).copy()
    interference = received.sum(axis=0) - signal
    return signal / (interference + cellular_interference(ch, pw, k))


def cellular_sinr_profile(x: np.ndarray, ch: ChannelMatrices, pw: PowerVector, k: int = 0) -> float:
    """功率比例 x 下资源块 k 的蜂窝 SINR"""
    x = np.asarray(x, dtype=float)
    return float(pw.p_c[k] * ch.gc[k] / (np.dot(x * pw.p_d, ch.g) + ch.w_bs[k]))
