import json
import logging
import math
import os
import sys
from typing import Optional

import numpy as np
import pandas as pd

from polyrat import set_tolerances
from ratmat import GRID_POINTS, OPAMP_GRID, UNIT_GRID, auto_grid, log_grid

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def parse_date(text: str) -> Optional[int]:
    """'YYYY-MM-DD'（UTC 零点）转为 Unix 时间戳，格式错误时返回 None"""
    try:
        return int(pd.to_datetime(text, format='%Y-%m-%d', utc=True).timestamp())
    except (ValueError, TypeError):
        return None


class SettingsUtils:
    """数值容差、网格与历史库路径等设置的读写工具"""
    SETTINGS_PATH = os.path.join('data', 'settings.json')

    DEFAULTS = {
        'tol_stab_rel': 1e-9,
        'gcd_rel_tol': 1e-6,
        'rank_rel_tol': 1e-8,
        'grid_points': GRID_POINTS,
        'grid_unit': list(UNIT_GRID),
        'grid_opamp': list(OPAMP_GRID),
        'default_shift': 1.0,
        'history_db': os.path.join('data', 'portstab.db'),
        'log_level': 'INFO',
    }

    @staticmethod
    def _ensure_dir():
        folder = os.path.dirname(SettingsUtils.SETTINGS_PATH)
        if folder:
            os.makedirs(folder, exist_ok=True)

    @staticmethod
    def read_settings():
        """读取设置文件；文件缺失或损坏时返回空字典"""
        if not os.path.exists(SettingsUtils.SETTINGS_PATH):
            return {}
        try:
            with open(SettingsUtils.SETTINGS_PATH, 'r', encoding='utf-8') as f:
                return json.load(f) or {}
        except (OSError, ValueError) as e:
            logger.warning("读取设置失败: %s", e)
            return {}

    @staticmethod
    def write_settings(data: dict):
        SettingsUtils._ensure_dir()
        try:
            with open(SettingsUtils.SETTINGS_PATH, 'w', encoding='utf-8') as f:
                json.dump(data, f, ensure_ascii=False, indent=2)
        except OSError as e:
            logger.error("写入设置失败: %s", e)

    @staticmethod
    def get(key: str):
        """
        读取单个设置项

        Args:
            key: 设置名，须在 DEFAULTS 中

        Returns:
            设置值，未配置时取默认值
        """
        if key not in SettingsUtils.DEFAULTS:
            raise KeyError(f"未知设置项: {key}")
        return SettingsUtils.read_settings().get(key, SettingsUtils.DEFAULTS[key])

    @staticmethod
    def set(key: str, value):
        data = SettingsUtils.read_settings()
        data[key] = value
        SettingsUtils.write_settings(data)

    @staticmethod
    def apply_tolerances():
        """把设置文件中的数值容差写入 polyrat.TOLERANCES"""
        set_tolerances(stab_rel=SettingsUtils.get('tol_stab_rel'),
                       gcd_rel=SettingsUtils.get('gcd_rel_tol'),
                       rank_rel=SettingsUtils.get('rank_rel_tol'))


class GridUtils:
    """频率网格：环境变量 PORTSTAB_GRID 优先，其次设置文件，最后按极点自动选取"""
    ENV_VAR = 'PORTSTAB_GRID'

    @staticmethod
    def parse(text: str):
        """
        解析 "lo,hi[,n]" 形式的网格描述

        Returns:
            tuple: (lo, hi, n)，n 缺省时为 None
        """
        parts = [p.strip() for p in text.split(',') if p.strip()]
        if len(parts) not in (2, 3):
            raise ValueError(f"网格格式应为 lo,hi[,n]: {text!r}")
        lo, hi = float(parts[0]), float(parts[1])
        if not (0 < lo < hi) or not math.isfinite(hi):
            raise ValueError(f"网格边界非法: {text!r}")
        n = int(parts[2]) if len(parts) == 3 else None
        if n is not None and n < 2:
            raise ValueError(f"网格点数至少为 2: {text!r}")
        return lo, hi, n

    @staticmethod
    def from_env() -> Optional[np.ndarray]:
        text = os.environ.get(GridUtils.ENV_VAR)
        if not text:
            return None
        lo, hi, n = GridUtils.parse(text)
        return log_grid(lo, hi, n or SettingsUtils.get('grid_points'))

    @staticmethod
    def resolve(*systems, preset: Optional[str] = None) -> np.ndarray:
        """
        选取频率网格

        Args:
            systems: 用于自动选取的系统（StateSpace 或 RationalMatrix）
            preset: 'unit' 或 'opamp' 时使用设置文件中的对应区间

        Returns:
            np.ndarray: 频率点 ω
        """
        grid = GridUtils.from_env()
        if grid is not None:
            return grid
        n = SettingsUtils.get('grid_points')
        if preset in ('unit', 'opamp'):
            lo, hi = SettingsUtils.get(f'grid_{preset}')
            return log_grid(lo, hi, n)
        return auto_grid(*systems, n=n)


def setup_logging(level: Optional[str] = None):
    """配置根日志：输出到 stderr，保证 stdout 只有 JSON"""
    name = (level or SettingsUtils.get('log_level') or 'INFO').upper()
    logging.basicConfig(level=getattr(logging, name, logging.INFO), format=LOG_FORMAT,
                        stream=sys.stderr, force=True)
