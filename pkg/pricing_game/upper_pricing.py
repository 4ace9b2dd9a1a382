import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg

from config import settings
from .exceptions import DegenerateInstanceError, ModelDomainError, PivotCyclingError
from .lower_game import (
    AllocationState,
    ConvergenceTrace,
    LowerGameInstance,
    br_iterate,
    lb_iterate,
)

logger = logging.getLogger(__name__)


class LowerSolver(Enum):
    LB = "lb"
    BR = "br"


class PricingMethod(Enum):
    SPPP = "sppp"
    BISECTION = "bisection"
    BISECTION_BR = "bisection-br"
    IO = "io"
    ALL_ACTIVE = "all-active"


@dataclass(frozen=True)
class UpperInstance:
    """单个资源块的定价问题: 下层博弈 + 干扰容限 Q + 价格上限"""

    lower: LowerGameInstance
    q_tol: float
    mu_max: Optional[float] = None
    eps_mu: Optional[float] = None

    def __post_init__(self):
        if not self.q_tol >= 0:
            raise ModelDomainError(f"干扰容限必须非负, 实际 {self.q_tol}")
        mu_max = self.mu_max
        if mu_max is None:
            mu_max = default_mu_max(self.lower)
        if mu_max <= 0:
            raise ModelDomainError("mu_max 必须为正")
        eps_mu = self.eps_mu if self.eps_mu is not None else settings.EPS_MU_RATIO * mu_max
        if eps_mu <= 0:
            raise ModelDomainError("eps_mu 必须为正")
        object.__setattr__(self, "mu_max", float(mu_max))
        object.__setattr__(self, "eps_mu", float(eps_mu))

    @property
    def n_d(self) -> int:
        return self.lower.n_d

    @property
    def total_interference(self) -> float:
        """全部链路满接入时对基站的干扰"""
        return float(np.sum(self.lower.beta))

    @property
    def is_trivial(self) -> bool:
        return self.total_interference <= self.q_tol

    def to_dict(self) -> Dict:
        return {"lower": self.lower.to_dict(), "q_tol": self.q_tol,
                "mu_max": self.mu_max, "eps_mu": self.eps_mu}

    @classmethod
    def from_dict(cls, data: Dict) -> "UpperInstance":
        return cls(lower=LowerGameInstance.from_dict(data["lower"]), q_tol=data["q_tol"],
                   mu_max=data.get("mu_max"), eps_mu=data.get("eps_mu"))


def default_mu_max(lower: LowerGameInstance) -> float:
    """10 * max_i w_i h_ii / (g_ii I_Ci), 此价格下所有链路都静默"""
    if lower.n_d == 0:
        return 1.0
    return settings.MU_MAX_FACTOR * float(np.max(lower.w * np.diag(lower.h) / (lower.g * lower.i_c)))


@dataclass
class UcPoint:
    mu: float
    u_c1: float
    u_c2: float
    state: AllocationState
    trace: Optional[ConvergenceTrace] = None

    @property
    def u_c(self) -> float:
        return min(self.u_c1, self.u_c2)

    @property
    def converged(self) -> bool:
        return self.trace is None or self.trace.converged


@dataclass
class SpppStep:
    """一个临界值处（转轴之后）的 LCP 解"""

    nu: float
    mu: float
    y: np.ndarray
    z: np.ndarray
    residual: float
    pivot: str = ""


@dataclass
class BisectionStep:
    iteration: int
    mu_l: float
    mu_u: float
    mu_m: float
    u_c1: float
    u_c2: float
    lower_iterations: int


@dataclass
class PricingOutcome:
    mu_star: float
    x_star: AllocationState
    u_c1: float
    u_c2: float
    iterations: int
    method: PricingMethod
    converged: bool = True
    interference: float = 0.0
    lower_iterations: List[int] = field(default_factory=list)
    steps: List = field(default_factory=list)

    @property
    def u_c(self) -> float:
        return min(self.u_c1, self.u_c2)

    def to_dict(self) -> Dict:
        return {
            "method": self.method.value,
            "mu_star": self.mu_star,
            "u_c1": self.u_c1,
            "u_c2": self.u_c2,
            "iterations": self.iterations,
            "converged": self.converged,
            "interference": self.interference,
            "x": self.x_star.x.tolist(),
        }

    def to_row(self) -> Dict:
        row = {k: v for k, v in self.to_dict().items() if k != "x"}
        for i, xi in enumerate(self.x_star.x):
            row[f"x{i}"] = float(xi)
        return row


def _solve_lower(inst: LowerGameInstance, solver: LowerSolver, eps: float, max_iter: int
                 ) -> Tuple[AllocationState, ConvergenceTrace]:
    if solver is LowerSolver.BR:
        return br_iterate(inst, eps=eps, max_iter=max_iter)
    return lb_iterate(inst, eps=eps, max_iter=max_iter)


def eval_uc(mu: float, inst: UpperInstance, solver: LowerSolver = LowerSolver.LB,
            eps: float = settings.LB_EPS, max_iter: int = settings.LB_MAX_ITER) -> UcPoint:
    """在价格 mu 下求解下层博弈, 返回 U_c1 = mu sum x_i P_i g_ii 与 U_c2 = mu Q"""
    if mu < 0:
        raise ModelDomainError(f"价格必须非负, 实际 {mu}")
    state, trace = _solve_lower(inst.lower.with_price(mu), solver, eps, max_iter)
    u_c1 = mu * float(np.dot(state.x, inst.lower.beta))
    return UcPoint(mu=mu, u_c1=u_c1, u_c2=mu * inst.q_tol, state=state, trace=trace)


def _trivial_outcome(inst: UpperInstance, method: PricingMethod) -> PricingOutcome:
    x = np.ones(inst.n_d)
    return PricingOutcome(mu_star=0.0, x_star=AllocationState.from_vector(x), u_c1=0.0, u_c2=0.0,
                          iterations=0, method=method, interference=inst.total_interference)


# ---------------------------------------------------------------------------
# 参数化线性互补问题
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LcpInstance:
    """0 <= y ⊥ A y + q + nu d >= 0, y = [x, t]"""

    a_mat: np.ndarray
    q_vec: np.ndarray
    d_vec: np.ndarray
    nu: float = 0.0
    nu_bar: float = np.inf

    @property
    def n_d(self) -> int:
        return self.q_vec.shape[0] // 2

    def z_of(self, y: np.ndarray, nu: float) -> np.ndarray:
        return self.a_mat @ y + self.q_vec + nu * self.d_vec

    def to_dict(self) -> Dict:
        return {"a_mat": self.a_mat.tolist(), "q_vec": self.q_vec.tolist(),
                "d_vec": self.d_vec.tolist(), "nu": self.nu, "nu_bar": self.nu_bar}


def build_lcp(inst: UpperInstance) -> LcpInstance:
    """A = [[A0, I], [-I, 0]], A0[i, j] = P_j h_ji; q = [I_C, 1]; d = [-w h_ii / g_ii, 0]"""
    low = inst.lower
    n = low.n_d
    a0 = (low.p_d[:, None] * low.h).T
    a_mat = np.block([[a0, np.eye(n)], [-np.eye(n), np.zeros((n, n))]])
    q_vec = np.concatenate([low.i_c, np.ones(n)])
    d_vec = np.concatenate([-low.w * np.diag(low.h) / low.g, np.zeros(n)])
    nu_bar = 1.0 / (settings.MU_MIN_RATIO * inst.mu_max)
    return LcpInstance(a_mat=a_mat, q_vec=q_vec, d_vec=d_vec, nu=0.0, nu_bar=nu_bar)


def block_inverse(block: np.ndarray) -> np.ndarray:
    """
    主子块求逆。先按行最大元均衡再做 LU, 奇异性判据与行缩放无关。
    """
    block = np.asarray(block, dtype=float)
    row_max = np.max(np.abs(block), axis=1)
    if not np.all(np.isfinite(row_max)) or np.any(row_max == 0):
        raise DegenerateInstanceError("主子块存在零行或非有限元素")
    scale = 1.0 / row_max
    try:
        lu = linalg.lu_factor(scale[:, None] * block, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise DegenerateInstanceError(f"主子块奇异: {exc}")
    if np.min(np.abs(np.diag(lu[0]))) <= settings.PIVOT_TOL:
        raise DegenerateInstanceError("主子块奇异")
    # (S A)^-1 S = A^-1
    return linalg.lu_solve(lu, np.diag(scale))


def principal_pivot_transform(a_mat: np.ndarray, q_vec: np.ndarray, d_vec: np.ndarray, basis: np.ndarray
                              ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    对基 alpha (y_alpha 为基变量) 做主元变换。
    返回 (M, q, d) 使得 基变量 = M * 非基变量 + q + nu d。
    """
    alpha = np.flatnonzero(basis)
    beta = np.flatnonzero(~basis)
    m_bar = np.array(a_mat, dtype=float, copy=True)
    q_bar = np.array(q_vec, dtype=float, copy=True)
    d_bar = np.array(d_vec, dtype=float, copy=True)
    if alpha.size == 0:
        return m_bar, q_bar, d_bar
    try:
        inv_aa = block_inverse(a_mat[np.ix_(alpha, alpha)])
    except DegenerateInstanceError as exc:
        exc.dump["basis"] = alpha.tolist()
        raise
    a_ab = a_mat[np.ix_(alpha, beta)]
    a_ba = a_mat[np.ix_(beta, alpha)]
    a_bb = a_mat[np.ix_(beta, beta)]
    m_bar[np.ix_(alpha, alpha)] = inv_aa
    m_bar[np.ix_(alpha, beta)] = -inv_aa @ a_ab
    m_bar[np.ix_(beta, alpha)] = a_ba @ inv_aa
    m_bar[np.ix_(beta, beta)] = a_bb - a_ba @ inv_aa @ a_ab
    q_bar[alpha] = -inv_aa @ q_vec[alpha]
    q_bar[beta] = q_vec[beta] - a_ba @ inv_aa @ q_vec[alpha]
    d_bar[alpha] = -inv_aa @ d_vec[alpha]
    d_bar[beta] = d_vec[beta] - a_ba @ inv_aa @ d_vec[alpha]
    return m_bar, q_bar, d_bar


def _split_solution(basis: np.ndarray, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """基变量取值拆回 (y, z)"""
    y = np.where(basis, values, 0.0)
    z = np.where(basis, 0.0, values)
    return np.maximum(y, 0.0), np.maximum(z, 0.0)


def _segment_candidates(x_q: np.ndarray, x_d: np.ndarray, beta: np.ndarray, q_tol: float,
                        nu_a: float, nu_b: float) -> List[float]:
    """
    [nu_a, nu_b] 上 x = x_q + nu x_d, 于是 U_c1(mu) = mu I_q + I_d 关于 mu 仿射。
    候选点为两端及与 U_c2 = mu Q 的交点。
    """
    if nu_b <= 0:
        return []
    mu_lo = 1.0 / nu_b
    mu_hi = 1.0 / nu_a if nu_a > 0 else np.inf
    out = [mu_lo]
    if np.isfinite(mu_hi):
        out.append(mu_hi)
    i_q = float(np.dot(beta, x_q))
    i_d = float(np.dot(beta, x_d))
    if q_tol != i_q:
        cross = i_d / (q_tol - i_q)
        if mu_lo <= cross <= mu_hi:
            out.append(cross)
    return out


def sppp_solve(lcp: LcpInstance, inst: UpperInstance) -> PricingOutcome:
    """
    对称参数化主元法: 从 nu = 0 (y = 0, z 全为基变量) 出发沿 nu 递增追踪 LCP 解,
    在每个临界值做单主元或双主元, 并在每段上搜索 min(U_c1, U_c2) 的最大值。
    """
    if inst.is_trivial:
        return _trivial_outcome(inst, PricingMethod.SPPP)
    n = lcp.n_d
    size = 2 * n
    beta = inst.lower.beta
    # 第一块行乘 1/(P_i h_ii), t_i 换成 t_i / (P_i h_ii); 正对角缩放不改变互补关系,
    # 缩放后 A 的非零块为 O(1)
    direct = np.diag(lcp.a_mat)[:n]
    row_scale = np.ones(size)
    row_scale[:n] = 1.0 / direct
    col_scale = np.ones(size)
    col_scale[n:] = direct
    a_s = row_scale[:, None] * lcp.a_mat * col_scale[None, :]
    q_s = row_scale * lcp.q_vec
    d_s = row_scale * lcp.d_vec

    tol = settings.PIVOT_TOL
    basis = np.zeros(size, dtype=bool)
    nu = lcp.nu
    history = set()
    steps: List[SpppStep] = []
    pivots = 0
    last_pivot = ""
    best_u, best_mu, best_x = 0.0, inst.mu_max, np.zeros(n)

    def consider(mu: float, x_q: np.ndarray, x_d: np.ndarray):
        nonlocal best_u, best_mu, best_x
        x = np.clip(x_q + x_d / mu, 0.0, 1.0)
        interference = float(np.dot(beta, x))
        u = min(mu * interference, mu * inst.q_tol)
        if u > best_u:
            best_u, best_mu, best_x = u, mu, x

    while True:
        try:
            m_bar, q_bar, d_bar = principal_pivot_transform(a_s, q_s, d_s, basis)
        except DegenerateInstanceError as exc:
            exc.dump["instance"] = inst.to_dict()
            raise
        values = q_bar + nu * d_bar
        if pivots:
            y_s, _ = _split_solution(basis, values)
            y = col_scale * y_s
            z = lcp.z_of(y, nu)
            residual = float(np.max(np.abs(np.minimum(y_s, a_s @ y_s + q_s + nu * d_s)))) if size else 0.0
            steps.append(SpppStep(nu=nu, mu=1.0 / nu if nu > 0 else np.inf, y=y, z=z,
                                  residual=residual, pivot=last_pivot))

        d_scale = max(1.0, float(np.max(np.abs(d_bar))))
        candidates = np.flatnonzero(d_bar < -tol * d_scale)
        if candidates.size:
            ratios = np.maximum(-q_bar[candidates] / d_bar[candidates], nu)
            nu_next = float(np.min(ratios))
            r = int(candidates[np.flatnonzero(ratios <= nu_next * (1 + 1e-12) + 1e-300)[0]])
        else:
            nu_next, r = np.inf, -1
        stop = nu_next >= lcp.nu_bar
        nu_end = lcp.nu_bar if stop else nu_next

        x_q = np.where(basis[:n], q_bar[:n], 0.0)
        x_d = np.where(basis[:n], d_bar[:n], 0.0)
        for mu in _segment_candidates(x_q, x_d, beta, inst.q_tol, nu, nu_end):
            consider(mu, x_q, x_d)
        if stop:
            break

        nu = nu_next
        values = q_bar + nu * d_bar
        key = (basis.tobytes(), nu)
        if key in history:
            raise PivotCyclingError(f"基在 nu={nu:.6g} 处重复", {"instance": inst.to_dict()})
        history.add(key)
        if pivots >= settings.MAX_PIVOTS:
            raise PivotCyclingError(f"主元次数超过 {settings.MAX_PIVOTS}", {"instance": inst.to_dict()})

        m_rr = m_bar[r, r]
        m_scale = max(1.0, float(np.max(np.abs(m_bar[:, r]))))
        if m_rr > tol * m_scale:
            last_pivot = f"single:{r}"
            basis[r] = ~basis[r]
            logger.debug("single pivot r=%d at nu=%.6g", r, nu)
        elif abs(m_rr) <= tol * m_scale:
            column = m_bar[:, r]
            blocking = [i for i in range(size) if i != r and column[i] < -tol * m_scale]
            if not blocking:
                raise DegenerateInstanceError(f"双主元无阻塞变量 r={r}", {"instance": inst.to_dict()})
            ratios = np.array([max(values[i], 0.0) / -column[i] for i in blocking])
            s = blocking[int(np.argmin(ratios))]
            if abs(m_bar[r, s] * m_bar[s, r]) <= tol * m_scale ** 2:
                raise DegenerateInstanceError(f"双主元 2x2 块奇异 r={r}, s={s}", {"instance": inst.to_dict()})
            basis[r] = ~basis[r]
            basis[s] = ~basis[s]
            last_pivot = f"double:{r},{s}"
            logger.debug("double pivot r=%d s=%d at nu=%.6g", r, s, nu)
        else:
            raise DegenerateInstanceError(f"主元对角元为负 M_rr={m_rr:.3e}", {"instance": inst.to_dict()})
        pivots += 1

    state = AllocationState.from_vector(best_x)
    interference = float(np.dot(beta, state.x))
    return PricingOutcome(
        mu_star=best_mu, x_star=state, u_c1=best_mu * interference, u_c2=best_mu * inst.q_tol,
        iterations=pivots, method=PricingMethod.SPPP, interference=interference, steps=steps,
    )


# ---------------------------------------------------------------------------
# 二分法与贪心
# ---------------------------------------------------------------------------

def bisection_iteration_bound(mu_max: float, eps: float) -> int:
    """区间从 [0, mu_max] 缩到宽度 eps 所需的二分次数"""
    return max(0, math.ceil(math.log2(mu_max / eps)))


def bisection_price(inst: UpperInstance, lower_solver: LowerSolver = LowerSolver.LB,
                    eps: float = settings.LB_EPS, max_iter: int = settings.LB_MAX_ITER) -> PricingOutcome:
    """
    二分搜索 U_c1 与 U_c2 的交点。区间始终满足 U_c1(mu_l) >= U_c2(mu_l),
    U_c1(mu_u) <= U_c2(mu_u); 返回右端点 mu_u（满足干扰约束的一侧）。

    停止条件 mu_u - mu_l <= min(eps_mu, EPS_MU_RATIO * mu_u): 精度随右端点缩小,
    交点远小于 mu_max 时也能收敛。右端点低于 MU_MIN_RATIO * mu_max 时停止。
    """
    method = PricingMethod.BISECTION_BR if lower_solver is LowerSolver.BR else PricingMethod.BISECTION
    if inst.is_trivial:
        return _trivial_outcome(inst, method)
    lo, hi = 0.0, inst.mu_max
    floor = settings.MU_MIN_RATIO * inst.mu_max
    hi_point = eval_uc(hi, inst, lower_solver, eps, max_iter)
    bound = bisection_iteration_bound(inst.mu_max, min(inst.eps_mu, settings.EPS_MU_RATIO * floor))
    steps: List[BisectionStep] = []
    lower_iterations = [hi_point.trace.iterations]
    converged = hi_point.converged
    while len(steps) < bound:
        if hi - lo <= min(inst.eps_mu, settings.EPS_MU_RATIO * hi) or hi <= floor:
            break
        mid = 0.5 * (lo + hi)
        point = eval_uc(mid, inst, lower_solver, eps, max_iter)
        converged = converged and point.converged
        lower_iterations.append(point.trace.iterations)
        if point.u_c1 <= point.u_c2:
            hi, hi_point = mid, point
        else:
            lo = mid
        steps.append(BisectionStep(len(steps) + 1, lo, hi, mid, point.u_c1, point.u_c2, point.trace.iterations))
        logger.debug("bisection %d: [%.6g, %.6g]", len(steps), lo, hi)
    interference = float(np.dot(hi_point.state.x, inst.lower.beta))
    return PricingOutcome(
        mu_star=hi, x_star=hi_point.state, u_c1=hi_point.u_c1, u_c2=hi_point.u_c2,
        iterations=len(steps), method=method, converged=converged, interference=interference,
        lower_iterations=lower_iterations, steps=steps,
    )


def io_greedy(inst: UpperInstance) -> PricingOutcome:
    """按 P_i g_ii 升序接入链路, 直到累计干扰超过 Q"""
    beta = inst.lower.beta
    order = np.argsort(beta, kind="stable")
    prefix = int(np.searchsorted(np.cumsum(beta[order]), inst.q_tol, side="right"))
    x = np.zeros(inst.n_d)
    x[order[:prefix]] = 1.0
    return PricingOutcome(mu_star=0.0, x_star=AllocationState.from_vector(x), u_c1=0.0, u_c2=0.0,
                          iterations=prefix, method=PricingMethod.IO, interference=float(np.dot(beta, x)))


def all_active(inst: UpperInstance) -> PricingOutcome:
    return _trivial_outcome(inst, PricingMethod.ALL_ACTIVE)


# ---------------------------------------------------------------------------
# U_c1 的区域仿射形式与单调性条件
# ---------------------------------------------------------------------------

def monotonicity_certificate(inst: UpperInstance, state: AllocationState) -> bool:
    """U_c1 关于 mu 非增的两个充分条件"""
    low = inst.lower
    h, g, p = low.h, low.g, low.p_d
    n = low.n_d
    diag = np.diag(h)
    for i in range(n):
        cross = sum(h[i, j] / diag[j] * g[j] for j in range(n) if j != i)
        if not cross < g[i]:
            return False
    active, saturated = state.active, state.saturated
    if active.size == 0 or saturated.size == 0:
        return True
    first = active[0]
    for i in active:
        total = np.sum(p[saturated] * (h[saturated, i] - h[first, i] / g[first] * g[saturated]))
        if total < 0:
            return False
    return True


def uc1_region_form(state: AllocationState, inst: UpperInstance) -> Tuple[float, float]:
    """
    区域内 U_c1(mu) = intercept + slope * mu:
    intercept = beta_a^T H^-1 W_a, slope = beta_s^T 1 - beta_a^T H^-1 C_a
    """
    low = inst.lower
    active, saturated = state.active, state.saturated
    beta = low.beta
    slope_sat = float(np.sum(beta[saturated]))
    if active.size == 0:
        return slope_sat, 0.0
    direct = low.direct
    g_full = (low.p_d[:, None] * low.h).T  # 含对角线
    h_aa = g_full[np.ix_(active, active)] / direct[active][:, None]
    w_a = low.w[active] / beta[active]
    i_d = g_full[np.ix_(active, saturated)].sum(axis=1) if saturated.size else np.zeros(active.size)
    c_a = (low.i_c[active] + i_d) / direct[active]
    try:
        solved = linalg.solve(h_aa.T, beta[active])
    except linalg.LinAlgError as exc:
        raise DegenerateInstanceError(f"H_aa 奇异: {exc}", {"instance": inst.to_dict()})
    intercept = float(solved @ w_a)
    slope = slope_sat - float(solved @ c_a)
    return slope, intercept


def solve_price(inst: UpperInstance, method: PricingMethod) -> PricingOutcome:
    if method is PricingMethod.SPPP:
        return sppp_solve(build_lcp(inst), inst)
    if method is PricingMethod.BISECTION:
        return bisection_price(inst, LowerSolver.LB)
    if method is PricingMethod.BISECTION_BR:
        return bisection_price(inst, LowerSolver.BR)
    if method is PricingMethod.IO:
        return io_greedy(inst)
    if method is PricingMethod.ALL_ACTIVE:
        return all_active(inst)
    raise ModelDomainError(f"未知定价方法 {method}")
