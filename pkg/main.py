#!/usr/bin/env python3
"""
D2D干扰定价求解器主入口 - 批处理命令行
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, fields, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from config import settings
from models import RunCommand, RunConfig
from pricing_game.exceptions import ConfigError, DegenerateInstanceError, ModelDomainError, PricingGameError
from pricing_game.experiment import SWEEP_PARAMS, MethodKind, parse_methods, run_experiment, run_sweep, rate_cdf
from pricing_game.lower_game import LowerGameInstance, br_iterate, contraction_certificate, expected_rate_exact, lb_iterate
from pricing_game.oracle import GridSpec, brute_force_single_stage, random_upper_instance, verify_ne
from pricing_game.scenario import ScenarioConfig, generate_scenario
from pricing_game.upper_pricing import LowerSolver, UpperInstance, bisection_price, solve_price

logger = logging.getLogger("main")

# 退出码
EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_SOLVER_ERROR = 3

INT_KEYS = {"seed", "draws", "rb", "n_d", "grid_points", "max_iter", "threads"}
FLOAT_KEYS = {"mu", "eps"}
BOOL_KEYS = {"progress"}


def _to_bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"无法解析布尔值 {raw!r}")


def _convert(key: str, raw: str):
    """按键名把字符串值转换为对应类型"""
    if key in INT_KEYS:
        return int(raw)
    if key in FLOAT_KEYS:
        return float(raw)
    if key in BOOL_KEYS:
        return _to_bool(raw)
    if key == "methods":
        return [s.strip() for s in raw.split(",") if s.strip()]
    if key == "sweep_values":
        return [float(s) for s in raw.split(",") if s.strip()]
    if key == "command":
        return RunCommand(raw)
    scenario_types = {f.name: f.type for f in fields(ScenarioConfig)}
    if key in scenario_types:
        kind = scenario_types[key]
        return kind(raw) if kind in (int, float) else raw
    return raw


def _validate(cfg: RunConfig):
    parse_methods(cfg.methods)
    if cfg.lower_solver not in ("lb", "br"):
        raise ConfigError(f"lower_solver 必须为 lb 或 br, 实际 {cfg.lower_solver!r}")
    if cfg.sweep_param not in SWEEP_PARAMS:
        raise ConfigError(f"sweep_param 必须为 {SWEEP_PARAMS} 之一")
    if cfg.draws < 1:
        raise ConfigError("draws 必须 >= 1")
    if cfg.threads is not None and cfg.threads < 1:
        raise ConfigError("threads 必须 >= 1")


def parse_config(text: str, overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    """
    解析 `key = value` 配置文本, `#` 之后为注释。
    未知键报错并列出全部合法键; 格式错误报告行号。
    """
    valid = RunConfig.valid_keys()
    run_values: Dict = {}
    scenario_values: Dict = {}
    items = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ConfigError(f"缺少 '=': {line.strip()!r}", lineno)
        key, _, raw = content.partition("=")
        items.append((lineno, key.strip(), raw.strip()))
    for key, raw in (overrides or {}).items():
        items.append((None, key, str(raw)))

    for lineno, key, raw in items:
        if key not in valid:
            raise ConfigError(f"未知配置项 {key!r}; 合法配置项: {', '.join(valid)}", lineno)
        try:
            value = _convert(key, raw)
        except ValueError as exc:
            raise ConfigError(f"{key} 的值无效 {raw!r}: {exc}", lineno)
        if key in RunConfig.run_keys():
            run_values[key] = value
        else:
            scenario_values[key] = value

    try:
        scenario = ScenarioConfig(**scenario_values)
    except ModelDomainError as exc:
        raise ConfigError(str(exc))
    cfg = replace(RunConfig(), scenario=scenario, **run_values)
    _validate(cfg)
    return cfg


def load_config(path: Optional[str], overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    text = ""
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as exc:
            raise ConfigError(f"无法读取配置文件 {path}: {exc}")
    return parse_config(text, overrides)


def write_csv(rows, path: str):
    """固定 12 位有效数字, 保证重复运行逐字节一致"""
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(rows)
    frame.to_csv(path, index=False, float_format=settings.CSV_FLOAT_FORMAT, lineterminator="\n")
    logger.info("wrote %s (%d rows)", path, len(frame))


def _file_label(label: str) -> str:
    return label.replace(":", "-")


def _first_draw_seed(seed: int) -> np.random.SeedSequence:
    # 与 experiment 第 0 次撒点使用同一随机流
    return np.random.SeedSequence(seed).spawn(1)[0]


def _rb_instance(cfg: RunConfig) -> UpperInstance:
    scenario = generate_scenario(cfg.scenario, _first_draw_seed(cfg.seed))
    if not 0 <= cfg.rb < scenario.rb_count:
        raise ConfigError(f"rb 必须位于 [0, {scenario.rb_count})")
    lower = LowerGameInstance.from_channel(scenario.channels, scenario.powers, cfg.rb, w=scenario.weights)
    return UpperInstance(lower=lower, q_tol=float(scenario.q_tol[cfg.rb]))


def _solve_rb(cfg: RunConfig) -> List[str]:
    inst = _rb_instance(cfg)
    solver = LowerSolver(cfg.lower_solver)
    mu = cfg.mu if cfg.mu is not None else bisection_price(inst, solver, cfg.eps, cfg.max_iter).mu_star
    lower = inst.lower.with_price(mu)
    iterate = br_iterate if solver is LowerSolver.BR else lb_iterate
    state, trace = iterate(lower, eps=cfg.eps, max_iter=cfg.max_iter)
    certificate = contraction_certificate(lower.coupling, lower, norm="l1")
    interference = float(np.dot(state.x, lower.beta))
    write_csv(trace.to_rows() or [{"iteration": 0, "residual": 0.0}], os.path.join(cfg.out, f"trace_{solver.value}.csv"))
    write_csv([{
        "solver": solver.value, "rb": cfg.rb, "n_d": lower.n_d, "mu": mu,
        "iterations": trace.iterations, "converged": trace.converged,
        "interference": interference, "q_tol": inst.q_tol,
        "certificate_holds": certificate.holds, "eta": certificate.eta,
    }], os.path.join(cfg.out, "summary.csv"))
    return [f"{solver.value}: N_D={lower.n_d} mu={mu:.6g} iterations={trace.iterations} "
            f"converged={trace.converged} eta={certificate.eta:.4g}"]


def _price_search(cfg: RunConfig) -> List[str]:
    inst = _rb_instance(cfg)
    lines, rows = [], []
    for spec in parse_methods(cfg.methods):
        if spec.pricing is None:
            continue
        outcome = solve_price(inst, spec.pricing)
        row = outcome.to_row()
        row["q_tol"] = inst.q_tol
        rows.append(row)
        if spec.kind in (MethodKind.BISECTION, MethodKind.BISECTION_BR):
            trace_rows = [asdict(s) for s in outcome.steps]
        elif spec.kind is MethodKind.SPPP:
            trace_rows = [{"step": t + 1, "nu": s.nu, "mu": s.mu, "residual": s.residual, "pivot": s.pivot}
                          for t, s in enumerate(outcome.steps)]
        else:
            trace_rows = []
        if trace_rows:
            write_csv(trace_rows, os.path.join(cfg.out, f"trace_{_file_label(spec.label)}.csv"))
        lines.append(f"{spec.label}: mu*={outcome.mu_star:.6g} U_c={outcome.u_c:.6g} "
                     f"interference/Q={outcome.interference / inst.q_tol:.4g} iterations={outcome.iterations}")
    write_csv(rows, os.path.join(cfg.out, "summary.csv"))
    return lines


def _experiment(cfg: RunConfig) -> List[str]:
    results = run_experiment(cfg.scenario, cfg.methods, cfg.draws, cfg.seed, cfg.threads, cfg.progress)
    summaries, rate_rows, lines = [], [], []
    for label, result in results.items():
        summary = result.summary()
        summaries.append(summary)
        rate_rows.extend(result.rate_rows())
        for series in ("cellular", "d2d"):
            values = result.series(series)
            if values.size:
                cdf = rate_cdf(values)
                write_csv(pd.DataFrame(cdf, columns=["rate", "cdf"]),
                          os.path.join(cfg.out, f"cdf_{_file_label(label)}_{series}.csv"))
        lines.append(f"{label}: cellular_mean={summary['cellular_mean_rate']:.4f} "
                     f"d2d_total={summary['d2d_total_rate']:.4f} draws={summary['draws']} "
                     f"failures={summary['failures']}")
    write_csv(summaries, os.path.join(cfg.out, "summary.csv"))
    write_csv(pd.DataFrame(rate_rows, columns=["method", "draw", "series", "link", "rate"]),
              os.path.join(cfg.out, "rates.csv"))
    return lines


def _sweep(cfg: RunConfig) -> List[str]:
    frame = run_sweep(cfg.scenario, cfg.methods, cfg.draws, cfg.sweep_param, cfg.sweep_values,
                      cfg.seed, cfg.threads)
    write_csv(frame, os.path.join(cfg.out, "sweep.csv"))
    lines = []
    for label, group in frame.groupby("method", sort=False):
        points = " ".join(f"{v:g}:{c:.3f}/{d:.3f}" for v, c, d in
                          zip(group["value"], group["cellular_mean_rate"], group["d2d_total_rate"]))
        lines.append(f"{label}: {cfg.sweep_param} cellular/d2d {points}")
    return lines


def _oracle_check(cfg: RunConfig) -> List[str]:
    inst = random_upper_instance(cfg.n_d, cfg.seed, cfg.scenario.q_tol_db)
    outcome = bisection_price(inst, LowerSolver.BR, cfg.eps, cfg.max_iter)
    lower = inst.lower.with_price(outcome.mu_star)
    x = outcome.x_star
    ne_rate = float(sum(lower.w[i] * expected_rate_exact(i, x, lower) for i in range(lower.n_d)))
    _, bf_rate = brute_force_single_stage(inst, GridSpec(cfg.grid_points, cfg.n_d))
    gap = 1.0 - ne_rate / bf_rate if bf_rate > 0 else 0.0
    is_ne, max_gain = verify_ne(x, lower, "exact")
    write_csv([{
        "n_d": cfg.n_d, "seed": cfg.seed, "mu_star": outcome.mu_star, "ne_rate": ne_rate,
        "brute_force_rate": bf_rate, "gap": gap, "is_ne": is_ne, "max_gain": max_gain,
    }], os.path.join(cfg.out, "summary.csv"))
    return [f"oracle-check: N_D={cfg.n_d} NE rate={ne_rate:.4f} brute force={bf_rate:.4f} gap={gap:.2%}"]


HANDLERS = {
    RunCommand.SOLVE_RB: _solve_rb,
    RunCommand.PRICE_SEARCH: _price_search,
    RunCommand.EXPERIMENT: _experiment,
    RunCommand.SWEEP: _sweep,
    RunCommand.ORACLE_CHECK: _oracle_check,
}


def _prepare_out(out: str):
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"无法创建输出目录 {out}: {exc}")
    if not os.access(out, os.W_OK):
        raise ConfigError(f"输出目录不可写: {out}")


def run(cfg: RunConfig) -> int:
    """执行一条命令, 写出 CSV 并打印每个方法一行摘要; 返回退出码"""
    try:
        _prepare_out(cfg.out)
        for line in HANDLERS[cfg.command](cfg):
            print(line)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except DegenerateInstanceError as exc:
        dump_path = os.path.join(cfg.out, "instance_dump.json")
        with open(dump_path, "w", encoding="utf-8") as f:
            json.dump({"error": str(exc), "config": cfg.to_dict(), **exc.dump}, f, indent=2, default=str)
        print(f"solver error: {exc} (instance written to {dump_path})", file=sys.stderr)
        return EXIT_SOLVER_ERROR
    except PricingGameError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER_ERROR
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="d2d-pricing", description=settings.PROJECT_NAME)
    parser.add_argument("--config", help="key = value 配置文件")
    parser.add_argument("--out", help="输出目录")
    parser.add_argument("--seed", type=int, help="主随机种子")
    parser.add_argument("--command", choices=[c.value for c in RunCommand], help="运行的命令")
    parser.add_argument("--verbose", action="store_true", help="输出调试日志")
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.VERSION}")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else getattr(logging, settings.LOG_LEVEL.upper(), logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    overrides = {k: v for k, v in (("out", args.out), ("seed", args.seed), ("command", args.command))
                 if v is not None}
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    logger.info("running %s with seed %d", cfg.command.value, cfg.seed)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
