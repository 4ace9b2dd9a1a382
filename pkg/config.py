import os


class Settings:
    # 项目配置
    PROJECT_NAME = "D2D干扰定价求解器"
    VERSION = "1.0.0"

    # 日志配置
    LOG_LEVEL = os.getenv("D2D_LOG_LEVEL", "WARNING")

    # 下层博弈配置
    EXACT_ENUMERATION_CAP = int(os.getenv("D2D_EXACT_CAP", 16))  # 精确期望速率最多枚举 2^16 个激活组合
    LB_EPS = 1e-6
    LB_MAX_ITER = 1000
    RESIDUAL_NORM = "linf"
    CLASSIFY_TOL = 1e-9  # 静默/活跃/饱和 判定容差

    # 上层定价配置
    MU_MAX_FACTOR = 10.0
    EPS_MU_RATIO = 1e-6
    MU_MIN_RATIO = 1e-12  # nu_bar = 1 / (MU_MIN_RATIO * mu_max)
    PIVOT_TOL = 1e-12
    MAX_PIVOTS = 500

    # 暴力参照配置
    GRID_POINTS = 21
    GRID_BUDGET = 10 ** 7
    LCP_ENUM_MAX_DIM = 12
    MC_MIN_SAMPLES = 1000
    NE_GRID_POINTS = 101

    # 蒙特卡洛配置
    THREADS = max(1, int(os.getenv("D2D_THREADS", 1)))
    PF_WARMUP_ROUNDS = 10
    PF_SMOOTHING = 0.1
    D2D_MODE_WEIGHT = 0.5

    # 输出配置
    CSV_FLOAT_FORMAT = "%.12g"
    DEFAULT_OUT_DIR = "out"


# 全局配置实例
settings = Settings()
