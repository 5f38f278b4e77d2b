import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from coprime import Dcf
from errors import NetworkFileError
from opamp import OpAmpParams, build_T
from polyrat import Polynomial
from ratmat import RationalMatrix, StateSpace, rm_from_ss

logger = logging.getLogger(__name__)

KINDS = ('ratmat', 'statespace', 'opamp2stage')

# 输出文件中可直接当作网络读取的键
BUNDLE_KEYS = ('T_c', 'T_hat', 'T', 'network')


@dataclass
class NetworkSpec:
    """网络描述文件：kind + payload + 元数据"""
    kind: str
    payload: dict
    name: str = ''
    description: str = ''
    network: Union[RationalMatrix, StateSpace, None] = field(default=None, repr=False)
    params: Optional[OpAmpParams] = None

    def to_json(self) -> dict:
        return {"kind": self.kind, "name": self.name, "description": self.description,
                "payload": self.payload}


def spec_document(network: Union[RationalMatrix, StateSpace], name: str = '', description: str = '') -> dict:
    """把网络包装成可重新读取的描述文件"""
    kind = 'ratmat' if isinstance(network, RationalMatrix) else 'statespace'
    return NetworkSpec(kind, network.to_json(), name, description).to_json()


class NetworkParser:
    """网络描述文件解析器"""

    @staticmethod
    def read_json(file_path):
        """
        读取JSON文件，'-' 表示标准输入

        Raises:
            NetworkFileError: 文件不存在或不是合法JSON
        """
        try:
            if file_path == '-':
                return json.load(sys.stdin)
            with open(file_path, 'r', encoding='utf-8') as f:
                return json.load(f)
        except FileNotFoundError:
            raise NetworkFileError(f"文件不存在: {file_path}")
        except (OSError, ValueError) as e:
            raise NetworkFileError(f"解析JSON文件失败: {file_path}: {e}")

    @staticmethod
    def parse_file(file_path) -> NetworkSpec:
        """
        解析网络描述文件

        Args:
            file_path: 文件路径

        Returns:
            NetworkSpec: 已校验的网络描述，network 字段为构造好的网络
        """
        data = NetworkParser.read_json(file_path)
        spec = NetworkParser.parse_dict(data)
        if not spec.name:
            spec.name = os.path.splitext(os.path.basename(str(file_path)))[0]
        logger.info("已读取网络 %s (%s)", spec.name, spec.kind)
        return spec

    @staticmethod
    def parse_dict(data) -> NetworkSpec:
        """
        解析描述文件内容；也接受命令输出（含 T_c、T_hat 等键）与裸 payload

        Raises:
            NetworkFileError: kind 未知或 payload 不符合目标类型
        """
        if not isinstance(data, dict):
            raise NetworkFileError("网络描述必须是JSON对象")
        if "kind" not in data:
            for key in BUNDLE_KEYS:
                if isinstance(data.get(key), dict):
                    return NetworkParser.parse_dict(data[key])
            if "entries" in data:
                data = {"kind": "ratmat", "payload": data}
            elif "D" in data:
                data = {"kind": "statespace", "payload": data}
            else:
                raise NetworkFileError("无法识别的网络描述: 缺少 kind 字段")
        kind = data["kind"]
        if kind not in KINDS:
            raise NetworkFileError(f"未知的网络类型: {kind}，应为 {', '.join(KINDS)}")
        payload = data.get("payload")
        if not isinstance(payload, dict):
            raise NetworkFileError("payload 必须是JSON对象")
        meta = data.get("metadata") or {}
        spec = NetworkSpec(kind=kind, payload=payload,
                           name=data.get("name") or meta.get("name") or '',
                           description=data.get("description") or meta.get("description") or '')
        try:
            if kind == 'ratmat':
                spec.network = RationalMatrix.from_json(payload)
            elif kind == 'statespace':
                spec.network = StateSpace.from_json(payload)
            else:
                spec.params = OpAmpParams.from_json(payload)
                spec.network = build_T(spec.params, bool(payload.get("regularized", True)))
        except (ValueError, TypeError, ZeroDivisionError) as e:
            raise NetworkFileError(f"{kind} payload 校验失败: {e}")
        return spec

    @staticmethod
    def parse_dcf(file_path) -> Dcf:
        """读取 factor 命令输出的双互质分解"""
        data = NetworkParser.read_json(file_path)
        if isinstance(data.get("dcf"), dict):
            data = data["dcf"]
        try:
            return Dcf.from_json(data)
        except (KeyError, ValueError, TypeError) as e:
            raise NetworkFileError(f"双互质分解文件校验失败: {file_path}: {e}")

    @staticmethod
    def parse_poles(text: Optional[str]):
        """
        解析逗号分隔的极点列表，如 "-1e10,-2e10,-1+2j,-1-2j"

        Returns:
            np.ndarray 或 None
        """
        if text is None:
            return None
        try:
            return np.array([complex(p.strip().replace(' ', '')) for p in text.split(',') if p.strip()],
                            dtype=complex)
        except ValueError as e:
            raise NetworkFileError(f"极点列表格式错误: {text!r}: {e}")

    @staticmethod
    def parse_coeffs(text: str) -> Polynomial:
        """逗号分隔的多项式系数（最高次在前）"""
        try:
            values = [float(c) for c in text.split(',') if c.strip()]
        except ValueError as e:
            raise NetworkFileError(f"系数格式错误: {text!r}: {e}")
        return Polynomial(values[::-1])

    @staticmethod
    def parse_scalar(value):
        """
        读取标量有理函数：文件路径（1x1 网络）或 "num/den" 系数串

        返回未约分的 (num, den)，保留隐藏模态以便检测。

        Example:
            "1/1,-1" 表示 1/(s-1)
        """
        if isinstance(value, str) and os.path.exists(value):
            net = NetworkParser.parse_file(value).network
            M = net if isinstance(net, RationalMatrix) else rm_from_ss(net)
            if M.shape != (1, 1):
                raise NetworkFileError(f"标量输入应为 1x1，实际为 {M.shape[0]}x{M.shape[1]}")
            return M[0, 0].num, M[0, 0].den
        text = str(value)
        num, _, den = text.partition('/')
        num = NetworkParser.parse_coeffs(num)
        den = NetworkParser.parse_coeffs(den) if den else Polynomial.one()
        if den.is_zero:
            raise NetworkFileError(f"分母为零: {text!r}")
        return num, den
