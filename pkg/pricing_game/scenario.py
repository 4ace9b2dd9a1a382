import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import settings
from .exceptions import ModelDomainError
from .net_model import (
    ALPHA_UE_BS,
    ALPHA_UE_UE,
    CellularLink,
    ChannelMatrices,
    D2DPair,
    LinkPopulation,
    Position,
    PowerControlConfig,
    PowerVector,
    db_to_linear,
    fractional_power,
    noise_power,
    path_gain,
)

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator, None]

# 距离下限（米），避免路损发散
MIN_DISTANCE = 1.0


@dataclass
class ScenarioConfig:
    """仿真场景参数, 默认值即单小区仿真设置"""

    bs_density: float = 1.0 / (np.pi * 500.0 ** 2)
    cellular_density: float = 10.0  # 每小区
    d2d_density: float = 10.0  # 每小区
    d2d_mean_length: float = 80.0
    d2d_length_law: str = "exponential"  # exponential | fixed
    subbands: int = 10
    rb_bandwidth: float = 1e6
    p_max_cellular: float = 0.2
    p_max_d2d: float = 0.02
    kappa: float = 0.75
    alpha_ue_ue: float = ALPHA_UE_UE
    alpha_ue_bs: float = ALPHA_UE_BS
    noise_dbm_hz: float = -174.0
    q_tol_db: float = 0.0
    shadowing_db: float = 0.0  # 0 表示关闭对数正态阴影
    rings: int = 1
    d2d_mode_weight: float = settings.D2D_MODE_WEIGHT
    pf_warmup_rounds: int = settings.PF_WARMUP_ROUNDS
    pf_smoothing: float = settings.PF_SMOOTHING

    def __post_init__(self):
        if self.bs_density <= 0:
            raise ModelDomainError("bs_density 必须为正")
        if self.cellular_density < 0 or self.d2d_density < 0:
            raise ModelDomainError("用户密度不能为负")
        if self.d2d_mean_length <= 0:
            raise ModelDomainError("d2d_mean_length 必须为正")
        if self.d2d_length_law not in ("exponential", "fixed"):
            raise ModelDomainError(f"未知链路长度分布 {self.d2d_length_law!r}")
        if self.subbands < 1:
            raise ModelDomainError("subbands 必须 >= 1")
        if self.rings < 0:
            raise ModelDomainError("rings 不能为负")
        if not 0 < self.d2d_mode_weight <= 1:
            raise ModelDomainError("d2d_mode_weight 必须位于 (0, 1]")

    @property
    def cell_radius(self) -> float:
        """正六边形外接圆半径, 面积 = 1 / bs_density"""
        return float(np.sqrt(2.0 / (3.0 * np.sqrt(3.0) * self.bs_density)))

    @property
    def inter_site_distance(self) -> float:
        return float(np.sqrt(3.0) * self.cell_radius)

    @property
    def d2d_power(self) -> PowerControlConfig:
        return PowerControlConfig(p_max=self.p_max_d2d, kappa=self.kappa, alpha=self.alpha_ue_ue)

    @property
    def cellular_power(self) -> PowerControlConfig:
        return PowerControlConfig(p_max=self.p_max_cellular, kappa=self.kappa, alpha=self.alpha_ue_bs)

    @property
    def noise(self) -> float:
        return noise_power(self.rb_bandwidth, self.noise_dbm_hz)

    @classmethod
    def keys(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "ScenarioConfig":
        return cls(**{k: v for k, v in data.items() if k in cls.keys()})


@dataclass
class Scenario:
    """一次撒点: 中心小区的链路、信道与功率, 邻区干扰已并入噪声"""

    population: LinkPopulation
    channels: ChannelMatrices
    powers: PowerVector
    q_tol: np.ndarray  # 每个资源块的干扰容限, 无蜂窝用户时为 inf
    tx_bs_distance: np.ndarray  # D2D 发射端到最近基站的距离
    rb_user: np.ndarray  # 资源块 -> cellular_links 下标, -1 表示空闲
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_d(self) -> int:
        return self.channels.n_d

    @property
    def rb_count(self) -> int:
        return self.channels.rb_count

    def __iter__(self):
        # 允许 population, channels, powers = scenario
        return iter((self.population, self.channels, self.powers))


def hexagonal_layout(inter_site_distance: float, rings: int = 1) -> np.ndarray:
    """正六边形蜂窝基站坐标（复数）, 第 0 个为中心小区"""
    sites = [0j]
    if rings >= 1:
        sites.extend(inter_site_distance * np.exp(1j * np.pi * np.arange(1, 12, 2) / 6))
    if rings >= 2:
        sites.extend(np.sqrt(3) * inter_site_distance * np.exp(1j * np.pi * np.arange(0, 11, 2) / 6))
        sites.extend(2 * inter_site_distance * np.exp(1j * np.pi * np.arange(1, 12, 2) / 6))
    if rings > 2:
        raise ModelDomainError("最多支持两圈邻区")
    return np.array(sites, dtype=complex)


def sample_in_hexagon(rng: np.random.Generator, count: int, radius: float, center: complex = 0j) -> np.ndarray:
    """六边形内均匀撒点（拒绝采样）, 顶点位于 0, 60, ... 度方向"""
    out = np.empty(0, dtype=complex)
    half_height = np.sqrt(3.0) / 2 * radius
    while out.size < count:
        need = count - out.size
        x = rng.uniform(-radius, radius, 2 * need + 8)
        y = rng.uniform(-half_height, half_height, 2 * need + 8)
        inside = np.sqrt(3.0) * np.abs(x) + np.abs(y) <= np.sqrt(3.0) * radius
        out = np.concatenate([out, (x + 1j * y)[inside]])
    return out[:count] + center


def sample_link_lengths(rng: np.random.Generator, count: int, cfg: ScenarioConfig) -> np.ndarray:
    if cfg.d2d_length_law == "fixed":
        return np.full(count, cfg.d2d_mean_length)
    return np.maximum(rng.exponential(cfg.d2d_mean_length, count), MIN_DISTANCE)


def _gain(rng: np.random.Generator, dist: np.ndarray, alpha: float, shadowing_db: float) -> np.ndarray:
    gain = path_gain(np.maximum(dist, MIN_DISTANCE), alpha)
    if shadowing_db > 0:
        gain = gain * db_to_linear(rng.normal(0.0, shadowing_db, np.shape(gain)))
    return gain


@dataclass
class ModeSelection:
    """每个子带调度到的候选下标（-1 表示空闲）及未被调度的 D2D 候选"""

    subband_user: np.ndarray
    d2d_mode: np.ndarray


class ProportionalFairScheduler:
    """
    加权比例公平调度: 每个子带依次选择 q R / R_bar 最大且本轮尚未被调度的候选,
    调度后按 R_bar <- (1 - a) R_bar + a R_served 平滑。
    """

    def __init__(self, weights: Sequence[float], rates: Sequence[float],
                 smoothing: float = settings.PF_SMOOTHING, avg_rates: Optional[Sequence[float]] = None):
        self.weights = np.asarray(weights, dtype=float)
        self.rates = np.asarray(rates, dtype=float)
        self.smoothing = smoothing
        self.avg_rates = self.rates.copy() if avg_rates is None else np.asarray(avg_rates, dtype=float).copy()

    def schedule(self, subbands: int) -> np.ndarray:
        chosen = np.full(subbands, -1, dtype=int)
        free = np.ones(self.rates.size, dtype=bool)
        with np.errstate(divide="ignore", invalid="ignore"):
            metric = np.where(self.avg_rates > 0, self.weights * self.rates / self.avg_rates, 0.0)
        for k in range(subbands):
            if not free.any():
                break
            candidates = np.flatnonzero(free)
            best = int(candidates[np.argmax(metric[candidates])])
            chosen[k] = best
            free[best] = False
        return chosen

    def update(self, chosen: np.ndarray):
        served = np.zeros(self.rates.size)
        picked = chosen[chosen >= 0]
        served[picked] = self.rates[picked]
        self.avg_rates = (1 - self.smoothing) * self.avg_rates + self.smoothing * served

    def warm_up(self, subbands: int, rounds: int):
        for _ in range(rounds):
            self.update(self.schedule(subbands))


def mode_select(weights: Sequence[float], rates: Sequence[float], subbands: int,
                is_d2d: Sequence[bool], scheduler: Optional[ProportionalFairScheduler] = None,
                warmup_rounds: int = 0) -> ModeSelection:
    """
    按 q R / R_bar 把候选分为蜂窝模式与 D2D 模式。
    未被任何子带调度的潜在 D2D 链路进入 D2D 模式。
    """
    scheduler = scheduler or ProportionalFairScheduler(weights, rates)
    scheduler.warm_up(subbands, warmup_rounds)
    chosen = scheduler.schedule(subbands)
    is_d2d = np.asarray(is_d2d, dtype=bool)
    scheduled = np.zeros(is_d2d.size, dtype=bool)
    scheduled[chosen[chosen >= 0]] = True
    return ModeSelection(subband_user=chosen, d2d_mode=np.flatnonzero(is_d2d & ~scheduled))


def _as_generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def generate_scenario(cfg: ScenarioConfig, seed: SeedLike = None) -> Scenario:
    """按泊松点过程撒点, 完成模式选择并构造中心小区各资源块的信道"""
    rng = _as_generator(seed)
    bs = hexagonal_layout(cfg.inter_site_distance, cfg.rings)
    radius = cfg.cell_radius
    noise = cfg.noise
    cell_cfg, d2d_cfg = cfg.cellular_power, cfg.d2d_power
    k_rb = cfg.subbands

    # 每个小区: 被调度的蜂窝发射端(按子带) 与 D2D 模式链路
    cell_users: List[np.ndarray] = []
    cell_pairs: List[Tuple[np.ndarray, np.ndarray]] = []
    for c, center in enumerate(bs):
        n_ue = rng.poisson(cfg.cellular_density)
        n_pair = rng.poisson(cfg.d2d_density)
        ue = sample_in_hexagon(rng, n_ue, radius, center)
        tx = sample_in_hexagon(rng, n_pair, radius, center)
        lengths = sample_link_lengths(rng, n_pair, cfg)
        rx = tx + lengths * np.exp(2j * np.pi * rng.random(n_pair))

        candidates = np.concatenate([ue, tx])
        is_d2d = np.concatenate([np.zeros(n_ue, dtype=bool), np.ones(n_pair, dtype=bool)])
        serving = np.argmin(np.abs(candidates[:, None] - bs[None, :]), axis=1) if candidates.size else np.zeros(0, int)
        d_bs = np.maximum(np.abs(candidates - bs[serving]), MIN_DISTANCE)
        snr = fractional_power(d_bs, cell_cfg) * path_gain(d_bs, cfg.alpha_ue_bs) / noise if candidates.size else np.zeros(0)
        rates = np.log2(1.0 + np.atleast_1d(snr))
        weights = np.where(is_d2d, cfg.d2d_mode_weight, 1.0)
        selection = mode_select(weights, rates, k_rb, is_d2d,
                                ProportionalFairScheduler(weights, rates, cfg.pf_smoothing),
                                cfg.pf_warmup_rounds)
        users = np.array([candidates[u] if u >= 0 else np.nan + 0j for u in selection.subband_user])
        d2d_idx = selection.d2d_mode - n_ue
        cell_users.append(users)
        cell_pairs.append((tx[d2d_idx], rx[d2d_idx]))
        logger.debug("cell %d: %d UE, %d D2D candidates, %d D2D mode", c, n_ue, n_pair, d2d_idx.size)

    tx, rx = cell_pairs[0]
    n = tx.size
    bs0 = bs[0]
    shadow = cfg.shadowing_db
    lengths = np.abs(tx - rx)

    h = _gain(rng, np.abs(tx[:, None] - rx[None, :]), cfg.alpha_ue_ue, shadow).reshape(n, n)
    g = _gain(rng, np.abs(tx - bs0), cfg.alpha_ue_bs, shadow).reshape(n)
    p_d = np.atleast_1d(fractional_power(np.maximum(lengths, MIN_DISTANCE), d2d_cfg)) if n else np.zeros(0)

    p_c = np.zeros(k_rb)
    gc = np.ones(k_rb)
    hc = np.ones((k_rb, n))
    w_d2d = np.full((k_rb, n), noise)
    w_bs = np.full(k_rb, noise)
    cellular_links: List[CellularLink] = []
    rb_user = np.full(k_rb, -1, dtype=int)
    for k in range(k_rb):
        ue = cell_users[0][k]
        if not np.isnan(ue.real):
            d_ue = max(abs(ue - bs0), MIN_DISTANCE)
            p_c[k] = fractional_power(d_ue, cell_cfg)
            gc[k] = _gain(rng, np.array(d_ue), cfg.alpha_ue_bs, shadow)
            hc[k] = _gain(rng, np.abs(ue - rx), cfg.alpha_ue_ue, shadow)
            rb_user[k] = len(cellular_links)
            cellular_links.append(CellularLink(Position.from_complex(ue), 0))
        # 邻区同频蜂窝用户的干扰并入噪声
        for c in range(1, len(bs)):
            v = cell_users[c][k]
            if np.isnan(v.real):
                continue
            p_v = fractional_power(max(abs(v - bs[c]), MIN_DISTANCE), cell_cfg)
            w_d2d[k] += p_v * _gain(rng, np.abs(v - rx), cfg.alpha_ue_ue, shadow)
            w_bs[k] += p_v * _gain(rng, np.array(abs(v - bs0)), cfg.alpha_ue_bs, shadow)

    channels = ChannelMatrices(h=h, g=g, hc=hc, gc=gc, w_d2d=w_d2d, w_bs=w_bs)
    powers = PowerVector(p_d=p_d, p_c=p_c)
    q_tol = np.where(p_c > 0, db_to_linear(cfg.q_tol_db) * p_c * gc, np.inf)
    tx_bs_distance = np.min(np.abs(tx[:, None] - bs[None, :]), axis=1) if n else np.zeros(0)
    population = LinkPopulation(
        bs_positions=tuple(Position.from_complex(b) for b in bs),
        cellular_links=tuple(cellular_links),
        d2d_pairs=tuple(D2DPair(Position.from_complex(a), Position.from_complex(b)) for a, b in zip(tx, rx)),
        rb_count=k_rb,
        rb_bandwidth=cfg.rb_bandwidth,
    )
    return Scenario(population=population, channels=channels, powers=powers, q_tol=q_tol,
                    tx_bs_distance=tx_bs_distance, rb_user=rb_user, weights=np.ones(n))
