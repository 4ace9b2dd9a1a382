import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import stats
from tqdm import tqdm

from config import settings
from .exceptions import ConfigError, PricingGameError
from .lower_game import LowerGameInstance, activation_patterns, expected_rate_exact, pattern_probabilities
from .net_model import cellular_sinr_profile, d2d_sinr_profile, shannon_rate
from .scenario import Scenario, ScenarioConfig, generate_scenario
from .upper_pricing import PricingMethod, UpperInstance, solve_price

logger = logging.getLogger(__name__)


RATE_POWER_FRACTION = "power-fraction"
RATE_EXPECTED = "expected"


class MethodKind(Enum):
    SPPP = "sppp"
    BISECTION = "bisection"
    BISECTION_BR = "bisection-br"
    IO = "io"
    ALL_ACTIVE = "all-active"
    GUARD_ZONE = "guard-zone"
    CELLULAR_ONLY = "cellular-only"


@dataclass(frozen=True)
class MethodSpec:
    kind: MethodKind
    radius: float = 0.0

    @classmethod
    def parse(cls, text: str) -> "MethodSpec":
        """解析 "sppp", "guard-zone:200" 等方法名"""
        name, _, arg = text.strip().partition(":")
        try:
            kind = MethodKind(name.strip())
        except ValueError:
            valid = ", ".join(k.value for k in MethodKind)
            raise ConfigError(f"未知方法 {text!r}, 可选: {valid}")
        if kind is MethodKind.GUARD_ZONE:
            try:
                radius = float(arg) if arg else 200.0
            except ValueError:
                raise ConfigError(f"保护区半径无效: {text!r}")
            if radius < 0:
                raise ConfigError(f"保护区半径不能为负: {text!r}")
            return cls(kind, radius)
        if arg:
            raise ConfigError(f"方法 {name!r} 不接受参数")
        return cls(kind)

    @property
    def label(self) -> str:
        if self.kind is MethodKind.GUARD_ZONE:
            return f"guard-zone:{self.radius:g}"
        return self.kind.value

    @property
    def rate_model(self) -> str:
        """BR 均衡的 x 是接入概率, 速率按激活组合取期望; 其余方法把 x 当作功率比例"""
        return RATE_EXPECTED if self.kind is MethodKind.BISECTION_BR else RATE_POWER_FRACTION

    @property
    def pricing(self) -> Optional[PricingMethod]:
        try:
            return PricingMethod(self.kind.value)
        except ValueError:
            return None


def parse_methods(items: Union[str, Iterable[str]]) -> List[MethodSpec]:
    if isinstance(items, str):
        items = [s for s in items.split(",") if s.strip()]
    return [MethodSpec.parse(s) for s in items]


@dataclass
class DrawRecord:
    """单次撒点、单个方法的结果"""

    draw: int
    method: str
    cellular_rates: np.ndarray
    d2d_rates: np.ndarray
    interference_ratio: np.ndarray  # 每个资源块 sum x P g / Q
    lower_iterations: List[int] = field(default_factory=list)
    price_iterations: List[int] = field(default_factory=list)
    converged: bool = True
    failed: bool = False
    error: str = ""


@dataclass
class ExperimentResult:
    method: str
    rate_model: str = RATE_POWER_FRACTION
    records: List[DrawRecord] = field(default_factory=list)

    @property
    def ok_records(self) -> List[DrawRecord]:
        return [r for r in self.records if not r.failed]

    @property
    def failures(self) -> int:
        return sum(1 for r in self.records if r.failed)

    def series(self, name: str) -> np.ndarray:
        if name == "cellular":
            parts = [r.cellular_rates for r in self.ok_records]
        elif name == "d2d":
            parts = [r.d2d_rates for r in self.ok_records]
        else:
            raise ValueError(f"未知序列 {name!r}")
        return np.concatenate(parts) if parts else np.zeros(0)

    def totals(self, name: str) -> np.ndarray:
        """每次撒点的总速率"""
        attr = "cellular_rates" if name == "cellular" else "d2d_rates"
        return np.array([float(np.sum(getattr(r, attr))) for r in self.ok_records])

    def summary(self) -> Dict:
        ok = self.ok_records
        cellular = self.series("cellular")
        d2d = self.series("d2d")
        lower = [n for r in ok for n in r.lower_iterations]
        price = [n for r in ok for n in r.price_iterations]
        ratios = [float(np.max(r.interference_ratio)) for r in ok if r.interference_ratio.size]
        return {
            "method": self.method,
            "rate_model": self.rate_model,
            "draws": len(ok),
            "failures": self.failures,
            "cellular_mean_rate": float(cellular.mean()) if cellular.size else 0.0,
            "cellular_total_rate": float(self.totals("cellular").mean()) if ok else 0.0,
            "d2d_mean_rate": float(d2d.mean()) if d2d.size else 0.0,
            "d2d_total_rate": float(self.totals("d2d").mean()) if ok else 0.0,
            "total_rate": float((self.totals("cellular") + self.totals("d2d")).mean()) if ok else 0.0,
            "lower_iterations_median": float(np.median(lower)) if lower else 0.0,
            "price_iterations_mean": float(np.mean(price)) if price else 0.0,
            "max_interference_ratio": max(ratios) if ratios else 0.0,
            "nonconverged": sum(1 for r in ok if not r.converged),
        }

    def rate_rows(self) -> List[Dict]:
        rows = []
        for r in self.ok_records:
            for i, v in enumerate(r.cellular_rates):
                rows.append({"method": self.method, "draw": r.draw, "series": "cellular", "link": i, "rate": float(v)})
            for i, v in enumerate(r.d2d_rates):
                rows.append({"method": self.method, "draw": r.draw, "series": "d2d", "link": i, "rate": float(v)})
        return rows


def allocate_rb(scenario: Scenario, k: int, method: MethodSpec):
    """单个资源块上的接入向量; 定价方法同时返回 PricingOutcome"""
    n = scenario.n_d
    if method.kind is MethodKind.CELLULAR_ONLY:
        return np.zeros(n), None
    if method.kind is MethodKind.GUARD_ZONE:
        return (scenario.tx_bs_distance >= method.radius).astype(float), None
    lower = LowerGameInstance.from_channel(scenario.channels, scenario.powers, k, w=scenario.weights)
    inst = UpperInstance(lower=lower, q_tol=float(scenario.q_tol[k]))
    outcome = solve_price(inst, method.pricing)
    return outcome.x_star.x, outcome


def expected_rb_rates(scenario: Scenario, k: int, x: np.ndarray):
    """x 为接入概率时资源块 k 上的期望速率: (各 D2D 链路, 蜂窝用户)"""
    ch, pw = scenario.channels, scenario.powers
    lower = LowerGameInstance.from_channel(ch, pw, k, w=scenario.weights)
    d2d = np.array([expected_rate_exact(i, x, lower) for i in range(scenario.n_d)])
    patterns = activation_patterns(scenario.n_d)
    probs = pattern_probabilities(x, patterns)
    interference = patterns.astype(float) @ (pw.p_d * ch.g)
    cellular = float(probs @ shannon_rate(pw.p_c[k] * ch.gc[k] / (interference + ch.w_bs[k])))
    return d2d, cellular


def evaluate_draw(scenario: Scenario, method: MethodSpec, draw: int = 0) -> DrawRecord:
    """在一次撒点上运行一个方法, 计算蜂窝与 D2D 链路速率（bps/Hz）"""
    ch, pw = scenario.channels, scenario.powers
    d2d_rates = np.zeros(scenario.n_d)
    cellular_rates = []
    ratios = []
    lower_iterations: List[int] = []
    price_iterations: List[int] = []
    converged = True
    for k in range(scenario.rb_count):
        x, outcome = allocate_rb(scenario, k, method)
        if outcome is not None:
            converged = converged and outcome.converged
            lower_iterations.extend(outcome.lower_iterations)
            price_iterations.append(outcome.iterations)
        if method.rate_model == RATE_EXPECTED:
            d2d_rb, cellular_rb = expected_rb_rates(scenario, k, x)
        else:
            d2d_rb = shannon_rate(d2d_sinr_profile(x, ch, pw, k)) if scenario.n_d else np.zeros(0)
            cellular_rb = shannon_rate(cellular_sinr_profile(x, ch, pw, k))
        if scenario.n_d:
            d2d_rates += d2d_rb
        if scenario.rb_user[k] >= 0:
            cellular_rates.append(cellular_rb)
            ratios.append(float(np.dot(x * pw.p_d, ch.g)) / scenario.q_tol[k])
    return DrawRecord(
        draw=draw, method=method.label, cellular_rates=np.array(cellular_rates), d2d_rates=d2d_rates,
        interference_ratio=np.array(ratios), lower_iterations=lower_iterations,
        price_iterations=price_iterations, converged=converged,
    )


class ExperimentRunner:
    """
    蒙特卡洛实验: 每次撒点的随机数流由主种子派生, 所有方法在同一撒点上比较。
    撒点在线程池中并行, 结果按撒点顺序合并。
    """

    def __init__(self, cfg: ScenarioConfig, methods: Sequence[MethodSpec], draws: int, seed: int = 0,
                 threads: Optional[int] = None, progress: bool = False):
        if draws < 1:
            raise ConfigError("draws 必须 >= 1")
        self.cfg = cfg
        self.methods = list(methods)
        self.draws = draws
        self.seed = seed
        self.threads = max(1, threads or settings.THREADS)
        self.progress = progress

    def draw_seeds(self) -> List[np.random.SeedSequence]:
        return np.random.SeedSequence(self.seed).spawn(self.draws)

    def run_draw(self, draw: int, seed: np.random.SeedSequence) -> List[DrawRecord]:
        scenario = generate_scenario(self.cfg, seed)
        records = []
        for method in self.methods:
            try:
                records.append(evaluate_draw(scenario, method, draw))
            except PricingGameError as exc:
                logger.warning("draw %d method %s failed: %s", draw, method.label, exc)
                records.append(DrawRecord(draw=draw, method=method.label, cellular_rates=np.zeros(0),
                                          d2d_rates=np.zeros(0), interference_ratio=np.zeros(0),
                                          failed=True, error=str(exc)))
        return records

    def run(self) -> Dict[str, ExperimentResult]:
        results = {m.label: ExperimentResult(method=m.label, rate_model=m.rate_model) for m in self.methods}
        seeds = self.draw_seeds()
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            batches = pool.map(self.run_draw, range(self.draws), seeds)
            if self.progress:
                batches = tqdm(batches, total=self.draws, desc="draws")
            for batch in batches:
                for record in batch:
                    results[record.method].records.append(record)
        for label, result in results.items():
            if result.failures:
                logger.warning("%s: %d draws excluded", label, result.failures)
        return results


def run_experiment(cfg: ScenarioConfig, methods: Sequence[Union[str, MethodSpec]], draws: int, seed: int = 0,
                   threads: Optional[int] = None, progress: bool = False) -> Dict[str, ExperimentResult]:
    specs = [m if isinstance(m, MethodSpec) else MethodSpec.parse(m) for m in methods]
    return ExperimentRunner(cfg, specs, draws, seed, threads, progress).run()


def rate_cdf(result: Union[ExperimentResult, Sequence[float]], series: str = "cellular") -> np.ndarray:
    """经验分布函数, 每行 (速率, 累积概率)"""
    values = result.series(series) if isinstance(result, ExperimentResult) else np.asarray(result, dtype=float)
    if values.size == 0:
        raise ValueError("空序列无法计算 CDF")
    ordered = np.sort(values)
    return np.column_stack([ordered, np.arange(1, ordered.size + 1) / ordered.size])


def ks_distance(a: Sequence[float], b: Sequence[float]) -> float:
    return float(stats.ks_2samp(np.asarray(a), np.asarray(b)).statistic)


SWEEP_PARAMS = ("q_tol_db", "d2d_density")


def run_sweep(cfg: ScenarioConfig, methods: Sequence[Union[str, MethodSpec]], draws: int,
              param: str, values: Sequence[float], seed: int = 0, threads: Optional[int] = None) -> pd.DataFrame:
    """对 q_tol_db 或 d2d_density 扫描, 每个 (方法, 参数值) 一行"""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"不支持的扫描参数 {param!r}, 可选 {SWEEP_PARAMS}")
    rows = []
    for value in values:
        point = replace(cfg, **{param: float(value)})
        results = run_experiment(point, methods, draws, seed, threads)
        for label, result in results.items():
            summary = result.summary()
            rows.append({
                "method": label,
                "sweep_param": param,
                "value": float(value),
                "cellular_mean_rate": summary["cellular_mean_rate"],
                "d2d_total_rate": summary["d2d_total_rate"],
                "total_rate": summary["total_rate"],
                "draws": summary["draws"],
                "failures": summary["failures"],
            })
    return pd.DataFrame(rows).sort_values(["method", "value"], kind="stable").reset_index(drop=True)
