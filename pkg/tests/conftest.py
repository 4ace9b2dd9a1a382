import numpy as np
import pytest

from pricing_game.lower_game import LowerGameInstance
from pricing_game.net_model import ChannelMatrices, PowerVector
from pricing_game.oracle import random_upper_instance
from pricing_game.upper_pricing import UpperInstance


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="运行全规模统计测试")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="需要 --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def two_link_channel():
    """两条 D2D 链路 + 一个蜂窝用户的手算实例"""
    ch = ChannelMatrices(
        h=[[1e-6, 2e-8], [5e-8, 2e-6]],
        g=[1e-9, 4e-9],
        hc=[[1e-9, 2e-9]],
        gc=[1e-8],
        w_d2d=[[1e-13, 1e-13]],
        w_bs=[1e-13],
    )
    pw = PowerVector(p_d=[0.02, 0.01], p_c=[0.2])
    return ch, pw


@pytest.fixture
def two_link_game(two_link_channel):
    ch, pw = two_link_channel
    return LowerGameInstance.from_channel(ch, pw, 0, w=[1.0, 1.0])


def constrain(inst: UpperInstance, ratio: float = 0.3) -> UpperInstance:
    """把干扰容限设为满接入干扰的 ratio 倍, 保证定价问题非平凡"""
    return UpperInstance(lower=inst.lower, q_tol=ratio * inst.total_interference)


@pytest.fixture
def three_link_instance():
    return constrain(random_upper_instance(3, seed=7))


@pytest.fixture
def constrained():
    return constrain


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
