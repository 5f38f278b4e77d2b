import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), 'src'))

from coprime import dcf_from_ss  # noqa: E402
from opamp import RECOVERED_C_X, build_T, default_params, printed_pole_targets  # noqa: E402
from polyrat import Polynomial, RationalFunction  # noqa: E402
from ratmat import opamp_grid, rm_to_ss, unit_grid  # noqa: E402
from stabilize import hybrid_compensator  # noqa: E402


def random_stable_rf(rng, max_degree=2) -> RationalFunction:
    """随机稳定真有理函数：极点实部在 [-5, -0.5]"""
    k = int(rng.integers(0, max_degree + 1))
    poles = list(-rng.uniform(0.5, 5.0, size=k))
    zeros = list(rng.uniform(-5.0, 5.0, size=int(rng.integers(0, k + 1))))
    gain = rng.uniform(0.5, 2.0) * rng.choice([-1.0, 1.0])
    return RationalFunction(Polynomial.from_roots(zeros, gain), Polynomial.from_roots(poles))


def random_plant(rng, max_degree=4):
    """
    随机真有理函数（稳定与不稳定混合），返回 (num, den) 多项式

    根的实部模长在 [0.5, 5]，分子分母的根至少相距 0.3。
    """
    k = int(rng.integers(0, max_degree + 1))
    den_roots = []
    while len(den_roots) < k:
        re = rng.uniform(0.5, 5.0) * rng.choice([-1.0, 1.0])
        if k - len(den_roots) >= 2 and rng.random() < 0.3:
            im = rng.uniform(0.5, 3.0)
            den_roots += [complex(re, im), complex(re, -im)]
        else:
            den_roots.append(complex(re, 0.0))
    m = int(rng.integers(0, k + 1))
    num_roots = []
    while len(num_roots) < m:
        z = rng.uniform(0.5, 5.0) * rng.choice([-1.0, 1.0])
        if all(abs(z - p) > 0.3 for p in den_roots):
            num_roots.append(z)
    gain = rng.uniform(0.5, 2.0) * rng.choice([-1.0, 1.0])
    return Polynomial.from_roots(num_roots, gain), Polynomial.from_roots(den_roots)


def random_ss(rng, n, p, m, stable=True):
    """随机状态空间模型；A 的特征值模长在 [0.5, 4]，stable 时全部为负"""
    eig = rng.uniform(0.5, 4.0, size=n)
    eig = -eig if stable else eig * rng.choice([-1.0, 1.0], size=n)
    V = rng.normal(size=(n, n)) + 2.0 * np.eye(n)
    A = V @ np.diag(eig) @ np.linalg.inv(V)
    return A, rng.normal(size=(n, m)), rng.normal(size=(p, n)), rng.normal(size=(p, m))


@pytest.fixture
def rng():
    return np.random.default_rng(20240613)


@pytest.fixture
def grid():
    return unit_grid()


@pytest.fixture(scope='session')
def opamp_T():
    return build_T(default_params(RECOVERED_C_X), True)


@pytest.fixture(scope='session')
def opamp_ss(opamp_T):
    return rm_to_ss(opamp_T)


@pytest.fixture(scope='session')
def opamp_dcf(opamp_ss):
    f_poles, l_poles = printed_pole_targets()
    return dcf_from_ss(opamp_ss, f_poles, l_poles, omegas=opamp_grid())


@pytest.fixture(scope='session')
def opamp_compensator(opamp_dcf):
    return hybrid_compensator(opamp_dcf, None, omegas=opamp_grid())


@pytest.fixture
def settings_path(tmp_path, monkeypatch):
    """把设置文件与历史库重定向到临时目录，测试结束后恢复数值容差"""
    from polyrat import TOLERANCES
    from utils import SettingsUtils
    path = tmp_path / 'settings.json'
    monkeypatch.setattr(SettingsUtils, 'SETTINGS_PATH', str(path))
    monkeypatch.delenv('PORTSTAB_GRID', raising=False)
    for key, value in list(TOLERANCES.items()):
        monkeypatch.setitem(TOLERANCES, key, value)
    return path
