from typing import Any, Dict, Optional


class PricingGameError(Exception):
    """求解器异常基类"""


class ModelDomainError(PricingGameError, ValueError):
    """输入超出物理模型定义域（距离非正、SINR为负等）"""


class InstanceSizeError(PricingGameError, ValueError):
    """实例规模超过枚举上限或网格预算"""


class DegenerateInstanceError(PricingGameError, RuntimeError):
    """主元矩阵奇异，附带可复现的实例快照"""

    def __init__(self, message: str, dump: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.dump = dump or {}


class PivotCyclingError(DegenerateInstanceError):
    """参数化主元过程回到已访问的基"""


class ConfigError(PricingGameError, ValueError):
    """配置文件解析错误"""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
