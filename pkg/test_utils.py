import logging

import numpy as np
import pytest

import polyrat
from ratmat import GRID_POINTS, UNIT_GRID
from utils import GridUtils, SettingsUtils, parse_date, setup_logging


def test_grid_description():
    assert GridUtils.parse("1e-2,1e2") == (1e-2, 1e2, None)
    assert GridUtils.parse(" 1, 10, 5 ") == (1.0, 10.0, 5)


@pytest.mark.parametrize("text", ["1", "0,10", "10,1", "1,10,1", "1,inf", "1,2,3,4"])
def test_invalid_grid_description(text):
    with pytest.raises(ValueError):
        GridUtils.parse(text)


def test_grid_from_environment(settings_path, monkeypatch):
    assert GridUtils.from_env() is None
    monkeypatch.setenv(GridUtils.ENV_VAR, "1,1000,4")
    grid = GridUtils.resolve(preset='unit')
    assert np.allclose(grid, [1.0, 10.0, 100.0, 1000.0])


def test_grid_presets(settings_path):
    grid = GridUtils.resolve(preset='unit')
    assert grid.size == GRID_POINTS
    assert grid[0] == pytest.approx(UNIT_GRID[0])
    assert grid[-1] == pytest.approx(UNIT_GRID[1])
    SettingsUtils.set('grid_points', 11)
    assert GridUtils.resolve(preset='opamp').size == 11


def test_settings_defaults_and_overrides(settings_path):
    assert SettingsUtils.get('default_shift') == 1.0
    assert not settings_path.exists()
    SettingsUtils.set('default_shift', 2.5)
    assert settings_path.exists()
    assert SettingsUtils.get('default_shift') == 2.5
    with pytest.raises(KeyError):
        SettingsUtils.get('no_such_key')


def test_corrupt_settings_fall_back_to_defaults(settings_path):
    settings_path.write_text('{broken', encoding='utf-8')
    assert SettingsUtils.read_settings() == {}
    assert SettingsUtils.get('log_level') == 'INFO'


def test_dates():
    assert parse_date('2024-06-13') == 1718236800
    assert parse_date('13/06/2024') is None


def test_settings_tolerances_reach_numerics(settings_path):
    SettingsUtils.set('tol_stab_rel', 1e-3)
    SettingsUtils.set('rank_rel_tol', 1e-10)
    SettingsUtils.apply_tolerances()
    assert polyrat.TOLERANCES['stab_rel'] == 1e-3
    assert polyrat.TOLERANCES['rank_rel'] == 1e-10
    assert polyrat.TOLERANCES['gcd_rel'] == SettingsUtils.DEFAULTS['gcd_rel_tol']
    assert polyrat.stability_tol([-1.0]) == pytest.approx(2e-3)


@pytest.mark.parametrize("value", [0.0, 1.0, -1e-6, 2.0])
def test_tolerances_must_be_fractions(settings_path, value):
    with pytest.raises(ValueError):
        polyrat.set_tolerances(gcd_rel=value)


def test_logging_level(settings_path):
    setup_logging('debug')
    assert logging.getLogger().level == logging.DEBUG
    setup_logging()
    assert logging.getLogger().level == logging.INFO
