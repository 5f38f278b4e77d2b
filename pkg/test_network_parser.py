import json

import numpy as np
import pytest

from coprime import dcf_from_ss
from errors import NetworkFileError
from network_parser import NetworkParser, spec_document
from opamp import RECOVERED_C_X, opamp_spec
from polyrat import Polynomial, RationalFunction
from ratmat import RationalMatrix, StateSpace

UNSTABLE = RationalMatrix([[RationalFunction(Polynomial([1.0]), Polynomial([-1.0, 1.0]))]])


def write(tmp_path, name, data):
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding='utf-8')
    return str(path)


def test_ratmat_file(tmp_path):
    path = write(tmp_path, 'scalar.json', {"kind": "ratmat", "payload": UNSTABLE.to_json()})
    spec = NetworkParser.parse_file(path)
    assert spec.kind == 'ratmat'
    assert spec.name == 'scalar'
    assert spec.network[0, 0](0.0) == pytest.approx(-1.0)


def test_statespace_file_with_metadata(tmp_path):
    data = {"kind": "statespace", "metadata": {"name": "lag", "description": "first order"},
            "payload": {"A": [[-1.0]], "B": [[1.0]], "C": [[1.0]], "D": [[0.0]]}}
    spec = NetworkParser.parse_file(write(tmp_path, 'x.json', data))
    assert spec.name == 'lag'
    assert spec.description == 'first order'
    assert isinstance(spec.network, StateSpace)
    assert np.allclose(spec.network.poles(), [-1.0])


def test_opamp_file():
    spec = NetworkParser.parse_dict({"kind": "opamp2stage", "payload": opamp_spec()})
    assert spec.params.C_x == RECOVERED_C_X
    assert spec.network.shape == (2, 2)
    assert spec.network.improper_entries() == []
    raw = NetworkParser.parse_dict({"kind": "opamp2stage", "payload": opamp_spec(regularized=False)})
    assert raw.network.improper_entries() == [(0, 0)]


def test_bare_payloads_and_command_output():
    assert NetworkParser.parse_dict(UNSTABLE.to_json()).kind == 'ratmat'
    assert NetworkParser.parse_dict({"D": [[2.0]]}).kind == 'statespace'
    bundle = {"T_c": spec_document(StateSpace.static([[0.5]]), name="T_c"), "report": {}}
    spec = NetworkParser.parse_dict(bundle)
    assert spec.name == 'T_c'
    assert np.allclose(spec.network.D, 0.5)


@pytest.mark.parametrize("data, message", [
    ([1, 2], "JSON对象"),
    ({"foo": 1}, "缺少 kind"),
    ({"kind": "netlist", "payload": {}}, "未知的网络类型"),
    ({"kind": "ratmat", "payload": 3}, "payload"),
    ({"kind": "ratmat", "payload": {"rows": 2, "cols": 1, "entries": [[1.0]]}}, "校验失败"),
    ({"kind": "opamp2stage", "payload": {"C_x": 5e-14}}, "缺少字段"),
])
def test_invalid_documents(data, message):
    with pytest.raises(NetworkFileError, match=message):
        NetworkParser.parse_dict(data)


def test_missing_and_broken_files(tmp_path):
    with pytest.raises(NetworkFileError, match="文件不存在"):
        NetworkParser.parse_file(str(tmp_path / 'nope.json'))
    bad = tmp_path / 'bad.json'
    bad.write_text('{not json', encoding='utf-8')
    with pytest.raises(NetworkFileError, match="解析JSON文件失败"):
        NetworkParser.parse_file(str(bad))


def test_dcf_file(tmp_path, grid):
    dcf = dcf_from_ss(UNSTABLE, [-2.0], [-3.0], omegas=grid)
    path = write(tmp_path, 'dcf.json', {"dcf": dcf.to_json(), "report": {}})
    back = NetworkParser.parse_dcf(path)
    assert np.allclose(back.F, dcf.F)
    with pytest.raises(NetworkFileError):
        NetworkParser.parse_dcf(write(tmp_path, 'empty.json', {"dcf": {}}))


def test_pole_lists():
    assert NetworkParser.parse_poles(None) is None
    poles = NetworkParser.parse_poles("-1e10, -1+2j,-1-2j")
    assert poles.dtype == complex
    assert np.allclose(poles, [-1e10, -1 + 2j, -1 - 2j])
    with pytest.raises(NetworkFileError):
        NetworkParser.parse_poles("-1,abc")


def test_coefficient_strings_highest_power_first():
    assert np.allclose(NetworkParser.parse_coeffs("1,-1").coeffs, [-1.0, 1.0])
    with pytest.raises(NetworkFileError):
        NetworkParser.parse_coeffs("1,x")


def test_scalar_string_keeps_common_factor():
    num, den = NetworkParser.parse_scalar("1,-1/1,0,-1")
    assert num.degree == 1 and den.degree == 2
    num, den = NetworkParser.parse_scalar("2")
    assert den.degree == 0
    with pytest.raises(NetworkFileError, match="分母为零"):
        NetworkParser.parse_scalar("1/0")


def test_scalar_from_file(tmp_path):
    path = write(tmp_path, 'g.json', {"kind": "ratmat", "payload": UNSTABLE.to_json()})
    num, den = NetworkParser.parse_scalar(path)
    assert RationalFunction(num, den)(0.0) == pytest.approx(-1.0)
    two = write(tmp_path, 'two.json', {"kind": "ratmat", "payload": RationalMatrix.identity(2).to_json()})
    with pytest.raises(NetworkFileError, match="1x1"):
        NetworkParser.parse_scalar(two)
