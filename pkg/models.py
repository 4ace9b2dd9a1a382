from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Dict, List, Optional

from config import settings
from pricing_game.scenario import ScenarioConfig


class RunCommand(Enum):
    SOLVE_RB = "solve-rb"
    PRICE_SEARCH = "price-search"
    EXPERIMENT = "experiment"
    SWEEP = "sweep"
    ORACLE_CHECK = "oracle-check"


DEFAULT_METHODS = ["sppp", "bisection", "io", "all-active", "guard-zone:200"]


@dataclass
class RunConfig:
    """一次批处理运行的全部参数"""

    command: RunCommand = RunCommand.EXPERIMENT
    seed: int = 0
    out: str = settings.DEFAULT_OUT_DIR
    draws: int = 100
    methods: List[str] = field(default_factory=lambda: list(DEFAULT_METHODS))
    rb: int = 0  # solve-rb / price-search 使用的资源块
    mu: Optional[float] = None  # solve-rb 的价格, 缺省取二分法价格
    n_d: int = 3  # oracle-check 随机实例的链路数
    grid_points: int = settings.GRID_POINTS
    sweep_param: str = "q_tol_db"
    sweep_values: List[float] = field(default_factory=lambda: [-5.0, 0.0, 5.0, 10.0, 15.0])
    lower_solver: str = "lb"
    eps: float = settings.LB_EPS
    max_iter: int = settings.LB_MAX_ITER
    threads: Optional[int] = None
    progress: bool = False
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)

    @classmethod
    def run_keys(cls) -> List[str]:
        return [f.name for f in fields(cls) if f.name != "scenario"]

    @classmethod
    def valid_keys(cls) -> List[str]:
        return cls.run_keys() + ScenarioConfig.keys()

    def to_dict(self) -> Dict:
        return {
            "command": self.command.value,
            "seed": self.seed,
            "out": self.out,
            "draws": self.draws,
            "methods": list(self.methods),
            "rb": self.rb,
            "mu": self.mu,
            "n_d": self.n_d,
            "grid_points": self.grid_points,
            "sweep_param": self.sweep_param,
            "sweep_values": list(self.sweep_values),
            "lower_solver": self.lower_solver,
            "eps": self.eps,
            "max_iter": self.max_iter,
            "threads": self.threads,
            "progress": self.progress,
            "scenario": self.scenario.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'RunConfig':
        return cls(
            command=RunCommand(data.get('command', RunCommand.EXPERIMENT.value)),
            seed=data.get('seed', 0),
            out=data.get('out', settings.DEFAULT_OUT_DIR),
            draws=data.get('draws', 100),
            methods=list(data.get('methods', DEFAULT_METHODS)),
            rb=data.get('rb', 0),
            mu=data.get('mu'),
            n_d=data.get('n_d', 3),
            grid_points=data.get('grid_points', settings.GRID_POINTS),
            sweep_param=data.get('sweep_param', 'q_tol_db'),
            sweep_values=list(data.get('sweep_values', [-5.0, 0.0, 5.0, 10.0, 15.0])),
            lower_solver=data.get('lower_solver', 'lb'),
            eps=data.get('eps', settings.LB_EPS),
            max_iter=data.get('max_iter', settings.LB_MAX_ITER),
            threads=data.get('threads'),
            progress=data.get('progress', False),
            scenario=ScenarioConfig.from_dict(data.get('scenario', {})),
        )
