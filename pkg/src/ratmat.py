import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import control
import numpy as np
from scipy import linalg

from errors import ImproperError
from polyrat import (TOLERANCES, Polynomial, RationalFunction, as_rational, rf_is_stable, rf_is_unit,
                     stability_tol)

logger = logging.getLogger(__name__)

# 直通矩阵可逆性判据
COND_LIMIT = 1e12
# 模态分组：特征值模长相差超过此数量级即分组
GROUP_DECADES = 3.0
# 频率网格默认点数
GRID_POINTS = 61
# 广义特征值模长超过 ZERO_CUTOFF·max|极点| 视为无穷远零点
ZERO_CUTOFF = 1e6
# 归一化坐标下求增益的探测点
GAIN_SAMPLE_POINT = 0.7071 + 1.2345j
UNIT_GRID = (1e-2, 1e2)
OPAMP_GRID = (1e0, 1e16)


def _as2d(x, rows=None, cols=None) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.size == 0:
        return np.zeros((rows or 0, cols or 0))
    return np.atleast_2d(a)


def _pow10(x: float) -> float:
    if not np.isfinite(x) or x <= 0:
        return 1.0
    return 10.0 ** round(math.log10(x))


def _complex_json(values) -> list:
    return [[float(complex(v).real), float(complex(v).imag)] for v in values]


class StateSpace:
    """
    状态空间实现 (A, B, C, D)，传递矩阵 G(s) = C(sI - A)^-1 B + D

    底层为 control.StateSpace；串联、并联、堆叠与频率响应交给 python-control，
    组合运算都在实现层面完成，不经过有理函数系数。
    """

    def __init__(self, A, B, C, D):
        D = _as2d(D)
        p, m = D.shape
        A = _as2d(A)
        n = A.shape[0] if A.size else 0
        A = A.reshape(n, n) if n else np.zeros((0, 0))
        B = _as2d(B, n, m).reshape(n, m) if n else np.zeros((0, m))
        C = _as2d(C, p, n).reshape(p, n) if n else np.zeros((p, 0))
        if A.shape != (n, n) or B.shape != (n, m) or C.shape != (p, n):
            raise ValueError("状态空间矩阵维数不一致")
        self.sys = control.StateSpace(A, B, C, D)

    @classmethod
    def wrap(cls, sys: control.StateSpace) -> 'StateSpace':
        return cls(*control.ssdata(sys))

    @property
    def A(self) -> np.ndarray:
        return np.asarray(self.sys.A, dtype=float)

    @property
    def B(self) -> np.ndarray:
        return np.asarray(self.sys.B, dtype=float)

    @property
    def C(self) -> np.ndarray:
        return np.asarray(self.sys.C, dtype=float)

    @property
    def D(self) -> np.ndarray:
        return np.asarray(self.sys.D, dtype=float)

    @property
    def n(self) -> int:
        return self.sys.nstates

    @property
    def inputs(self) -> int:
        return self.sys.ninputs

    @property
    def outputs(self) -> int:
        return self.sys.noutputs

    @property
    def shape(self):
        return self.outputs, self.inputs

    @classmethod
    def static(cls, K) -> 'StateSpace':
        K = _as2d(K)
        return cls(np.zeros((0, 0)), np.zeros((0, K.shape[1])), np.zeros((K.shape[0], 0)), K)

    @classmethod
    def identity(cls, k: int) -> 'StateSpace':
        return cls.static(np.eye(k))

    @classmethod
    def zeros(cls, p: int, m: int) -> 'StateSpace':
        return cls.static(np.zeros((p, m)))

    def __repr__(self):
        return f"StateSpace(n={self.n}, outputs={self.outputs}, inputs={self.inputs})"

    # 频率响应

    def evalfr(self, s: complex) -> np.ndarray:
        return self._evaluate(np.atleast_1d(np.asarray(s, dtype=complex)))[0]

    def freqresp(self, omegas: Sequence[float]) -> np.ndarray:
        """在 s = jω 上求值，返回形状 (N, p, m) 的复数组"""
        return self._evaluate(1j * np.asarray(omegas, dtype=float).ravel())

    def _evaluate(self, s: np.ndarray) -> np.ndarray:
        if self.n == 0:
            return np.broadcast_to(self.D.astype(complex), (s.size,) + self.shape).copy()
        resp = self.sys(s, squeeze=False)
        return np.moveaxis(np.asarray(resp, dtype=complex), -1, 0)

    def poles(self) -> np.ndarray:
        if self.n == 0:
            return np.zeros(0, dtype=complex)
        return np.sort_complex(np.asarray(self.sys.poles(), dtype=complex))

    # 组合运算

    def __neg__(self):
        return StateSpace.wrap(-self.sys)

    def __add__(self, other):
        if not isinstance(other, StateSpace):
            other = StateSpace.static(np.asarray(other, dtype=float) * np.ones(self.shape))
        if other.shape != self.shape:
            raise ValueError(f"维数不匹配: {self.shape} vs {other.shape}")
        return StateSpace.wrap(control.parallel(self.sys, other.sys))

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        """串联 self·other（先经过 other）；与标量相乘则缩放输出"""
        if not isinstance(other, StateSpace):
            return StateSpace.static(float(other) * np.eye(self.outputs)) * self
        if self.inputs != other.outputs:
            raise ValueError(f"串联维数不匹配: {self.shape} · {other.shape}")
        return StateSpace.wrap(control.series(other.sys, self.sys))

    __matmul__ = __mul__

    def __rmul__(self, other):
        return self * other

    def inv(self, cond_limit: float = COND_LIMIT) -> 'StateSpace':
        """
        状态空间求逆：(A - B D^-1 C, B D^-1, -D^-1 C, D^-1)

        Raises:
            ImproperError: D 奇异（逆非真）
        """
        p, m = self.shape
        if p != m:
            raise ValueError("matrix must be square")
        if p and np.linalg.cond(self.D) > cond_limit:
            raise ImproperError("inverse is improper; regularize the network "
                                "(add small port resistances so D is invertible)")
        A, B, C, D = control.ssdata(self.sys)
        Di = np.linalg.inv(D)
        return StateSpace(A - B @ Di @ C, B @ Di, -Di @ C, Di)

    def d_invertible(self, cond_limit: float = COND_LIMIT) -> bool:
        p, m = self.shape
        return p == m and (p == 0 or np.linalg.cond(self.D) <= cond_limit)

    def perturbed(self, rng: np.random.Generator, rel_eps: float) -> 'StateSpace':
        """每个实现矩阵元素乘以 (1+δ)，δ ~ U[-rel_eps, rel_eps]"""
        def draw(M):
            return M * (1.0 + rng.uniform(-rel_eps, rel_eps, size=M.shape))
        return StateSpace(*(draw(M) for M in control.ssdata(self.sys)))

    # 最小实现

    def minimal(self, rank_tol: Optional[float] = None) -> 'StateSpace':
        """
        最小实现：去掉不可控、不可观模态

        先对 A 做对角平衡，再按特征值数量级分块对角化（实 Schur 分解 + Sylvester 方程），
        每个模态块各自以其范数为尺度做可控、可观阶梯形约化。

        Args:
            rank_tol: 秩判定相对容差，缺省取 TOLERANCES['rank_rel']

        Returns:
            StateSpace: 可控且可观的实现，传递矩阵不变
        """
        n = self.n
        if n == 0:
            return self
        if rank_tol is None:
            rank_tol = TOLERANCES['rank_rel']
        A, B, C, D = control.ssdata(self.sys)
        _, (scale, _) = linalg.matrix_balance(A, permute=False, separate=True)
        A = A * scale[None, :] / scale[:, None]
        B = B / scale[:, None]
        C = C * scale[None, :]

        blocks = []
        for Ag, Bg, Cg in _modal_groups(A, B, C):
            reduced = _reduce_group(Ag, Bg, Cg, rank_tol)
            if reduced[0].shape[0]:
                blocks.append(reduced)
        if not blocks:
            out = StateSpace.static(D)
        else:
            out = StateSpace(linalg.block_diag(*[b[0] for b in blocks]),
                             np.vstack([b[1] for b in blocks]),
                             np.hstack([b[2] for b in blocks]),
                             D)
        if out.n < n:
            logger.debug("最小实现: 从 %d 阶降至 %d 阶", n, out.n)
        return out

    def stability_report(self, rel_tol: Optional[float] = None) -> 'StabilityReport':
        """按最小实现的特征值（McMillan 极点）判定稳定性"""
        poles = self.minimal().poles()
        return StabilityReport.from_poles(poles, rel_tol)

    # 序列化

    def to_json(self) -> dict:
        A, B, C, D = control.ssdata(self.sys)
        return {"A": A.tolist(), "B": B.tolist(), "C": C.tolist(), "D": D.tolist()}

    @classmethod
    def from_json(cls, data) -> 'StateSpace':
        try:
            D = _as2d(data["D"])
            p, m = D.shape
            A = np.asarray(data.get("A") or [], dtype=float)
            n = A.shape[0] if A.size else 0
            B = np.asarray(data.get("B") or np.zeros((n, m)), dtype=float)
            C = np.asarray(data.get("C") or np.zeros((p, n)), dtype=float)
            return cls(A.reshape(n, n), B.reshape(n, m), C.reshape(p, n), D)
        except KeyError as e:
            raise ValueError(f"状态空间缺少字段: {e}")


def ss_blockdiag(*systems: StateSpace) -> StateSpace:
    return StateSpace.wrap(control.append(*[s.sys for s in systems]))


def ss_hstack(*systems: StateSpace) -> StateSpace:
    """[G1 G2 ...]：输入拼接，输出相加"""
    p = systems[0].outputs
    if any(s.outputs != p for s in systems):
        raise ValueError("hstack 要求输出维数一致")
    adder = StateSpace.static(np.hstack([np.eye(p)] * len(systems)))
    return adder * ss_blockdiag(*systems)


def ss_vstack(*systems: StateSpace) -> StateSpace:
    """[G1; G2; ...]：共用输入，输出拼接"""
    m = systems[0].inputs
    if any(s.inputs != m for s in systems):
        raise ValueError("vstack 要求输入维数一致")
    fanout = StateSpace.static(np.vstack([np.eye(m)] * len(systems)))
    return ss_blockdiag(*systems) * fanout


def _staircase(A: np.ndarray, B: np.ndarray, tol: float):
    """可控阶梯形：返回正交变换 Q 及可控子空间维数"""
    n = A.shape[0]
    Q = np.eye(n)
    nc = 0
    Bsub = B
    while nc < n and Bsub.size:
        U, S, _ = np.linalg.svd(Bsub)
        r = int(np.sum(S > tol))
        if r == 0:
            break
        Q[:, nc:] = Q[:, nc:] @ U
        At = Q.T @ A @ Q
        Bsub = At[nc + r:, nc:nc + r]
        nc += r
    return Q, nc


def _reduce_group(A, B, C, rank_tol):
    empty = (np.zeros((0, 0)), np.zeros((0, B.shape[1])), np.zeros((C.shape[0], 0)))
    nb, nc_ = np.linalg.norm(B), np.linalg.norm(C)
    if nb == 0.0 or nc_ == 0.0:
        return empty
    scale = np.linalg.norm(A, 2) or max(nb, nc_)
    Q, k = _staircase(A, B * (scale / nb), rank_tol * scale)
    if k == 0:
        return empty
    A1 = (Q.T @ A @ Q)[:k, :k]
    B1 = (Q.T @ B)[:k]
    C1 = C @ Q[:, :k]
    nc1 = np.linalg.norm(C1)
    if nc1 == 0.0:
        return empty
    scale = np.linalg.norm(A1, 2) or max(np.linalg.norm(B1), nc1)
    Q2, k2 = _staircase(A1.T, (C1 * (scale / nc1)).T, rank_tol * scale)
    if k2 == 0:
        return empty
    return (Q2.T @ A1 @ Q2)[:k2, :k2], (Q2.T @ B1)[:k2], C1 @ Q2[:, :k2]


def _modal_groups(A, B, C):
    """按特征值数量级把 (A, B, C) 分解为互不耦合的并联子系统"""
    eig = linalg.eigvals(A)
    mags = np.abs(eig)
    top = mags.max()
    if top == 0.0:
        return [(A, B, C)]
    logm = np.sort(np.log10(np.maximum(mags, top * 1e-14)))
    gaps = np.diff(logm)
    thresholds = [10.0 ** ((logm[i] + logm[i + 1]) / 2) for i in np.nonzero(gaps > GROUP_DECADES)[0]]
    groups = []
    for t in thresholds:
        T, Z, k = linalg.schur(A, output='real', sort=lambda x, y, t=t: np.hypot(x, y) < t)
        if k == 0 or k == A.shape[0]:
            continue
        Bz, Cz = Z.T @ B, C @ Z
        T11, T12, T22 = T[:k, :k], T[:k, k:], T[k:, k:]
        X = linalg.solve_sylvester(T11, -T22, -T12)
        groups.append((T11, Bz[:k] - X @ Bz[k:], Cz[:, :k]))
        A, B, C = T22, Bz[k:], Cz[:, :k] @ X + Cz[:, k:]
    groups.append((A, B, C))
    return groups


class RationalMatrix:
    """有理函数矩阵，行主序存放 RationalFunction"""

    def __init__(self, entries):
        rows = [[as_rational(e) for e in row] for row in entries]
        if not rows or not rows[0]:
            raise ValueError("有理矩阵不能为空")
        cols = len(rows[0])
        if any(len(r) != cols for r in rows):
            raise ValueError("有理矩阵各行长度不一致")
        self.entries: List[List[RationalFunction]] = rows

    @property
    def rows(self) -> int:
        return len(self.entries)

    @property
    def cols(self) -> int:
        return len(self.entries[0])

    @property
    def shape(self):
        return self.rows, self.cols

    @classmethod
    def identity(cls, k: int) -> 'RationalMatrix':
        return cls([[1.0 if i == j else 0.0 for j in range(k)] for i in range(k)])

    @classmethod
    def zeros(cls, p: int, m: int) -> 'RationalMatrix':
        return cls([[0.0] * m for _ in range(p)])

    @classmethod
    def constant(cls, K) -> 'RationalMatrix':
        K = _as2d(K)
        return cls([[float(v) for v in row] for row in K])

    @classmethod
    def diag(cls, items) -> 'RationalMatrix':
        k = len(items)
        return cls([[items[i] if i == j else 0.0 for j in range(k)] for i in range(k)])

    def __getitem__(self, ij):
        i, j = ij
        return self.entries[i][j]

    def __iter__(self):
        for i, row in enumerate(self.entries):
            for j, e in enumerate(row):
                yield (i, j), e

    def __repr__(self):
        return f"RationalMatrix({self.rows}x{self.cols})"

    def map(self, fn) -> 'RationalMatrix':
        return RationalMatrix([[fn(e) for e in row] for row in self.entries])

    @property
    def is_proper(self) -> bool:
        return all(e.is_proper for _, e in self)

    def improper_entries(self):
        return [ij for ij, e in self if not e.is_proper]

    def __add__(self, other):
        if not isinstance(other, RationalMatrix):
            other = RationalMatrix.constant(np.asarray(other, dtype=float) * np.ones(self.shape))
        if other.shape != self.shape:
            raise ValueError(f"维数不匹配: {self.shape} vs {other.shape}")
        return RationalMatrix([[a + b for a, b in zip(r1, r2)]
                               for r1, r2 in zip(self.entries, other.entries)])

    __radd__ = __add__

    def __neg__(self):
        return self.map(lambda e: -e)

    def __sub__(self, other):
        return self + (-other)

    def __matmul__(self, other):
        if self.cols != other.rows:
            raise ValueError(f"乘法维数不匹配: {self.shape} · {other.shape}")
        out = []
        for i in range(self.rows):
            row = []
            for j in range(other.cols):
                acc = RationalFunction.constant(0.0)
                for k in range(self.cols):
                    if self[i, k].is_zero or other[k, j].is_zero:
                        continue
                    acc = acc + self[i, k] * other[k, j]
                row.append(acc)
            out.append(row)
        return RationalMatrix(out)

    def __mul__(self, other):
        if isinstance(other, RationalMatrix):
            return self @ other
        return self.map(lambda e: e * other)

    def __rmul__(self, other):
        return self.map(lambda e: e * other)

    def transpose(self) -> 'RationalMatrix':
        return RationalMatrix([[self[i, j] for i in range(self.rows)] for j in range(self.cols)])

    def submatrix(self, drop_row: int, drop_col: int) -> 'RationalMatrix':
        return RationalMatrix([[e for j, e in enumerate(row) if j != drop_col]
                               for i, row in enumerate(self.entries) if i != drop_row])

    def det(self) -> RationalFunction:
        """按第一行余子式展开（仅用于小矩阵）"""
        if self.rows != self.cols:
            raise ValueError("matrix must be square")
        if self.rows == 1:
            return self[0, 0]
        if self.rows == 2:
            return self[0, 0] * self[1, 1] - self[0, 1] * self[1, 0]
        acc = RationalFunction.constant(0.0)
        for j in range(self.cols):
            if self[0, j].is_zero:
                continue
            term = self[0, j] * self.submatrix(0, j).det()
            acc = acc + term if j % 2 == 0 else acc - term
        return acc

    def formal_inverse(self) -> 'RationalMatrix':
        """伴随矩阵求逆：适用于小规模、系数量级温和的情形"""
        d = self.det()
        if d.is_zero:
            raise ZeroDivisionError("matrix is singular as a rational matrix")
        k = self.rows
        if k == 1:
            return RationalMatrix([[d.inverse()]])
        adj = [[None] * k for _ in range(k)]
        for i in range(k):
            for j in range(k):
                cof = self.submatrix(i, j).det()
                adj[j][i] = cof / d if (i + j) % 2 == 0 else -cof / d
        return RationalMatrix(adj)

    def evalfr(self, s: complex) -> np.ndarray:
        return np.array([[e(s) for e in row] for row in self.entries], dtype=complex)

    def freqresp(self, omegas: Sequence[float]) -> np.ndarray:
        omegas = np.asarray(omegas, dtype=float)
        s = 1j * omegas
        out = np.empty((omegas.size, self.rows, self.cols), dtype=complex)
        for (i, j), e in self:
            out[:, i, j] = e(s)
        return out

    def entry_poles(self) -> Dict[tuple, np.ndarray]:
        return {ij: e.poles() for ij, e in self}

    def to_json(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "entries": [[e.to_json() for e in row] for row in self.entries],
        }

    @classmethod
    def from_json(cls, data) -> 'RationalMatrix':
        try:
            entries = [[RationalFunction.from_json(e) for e in row] for row in data["entries"]]
        except KeyError as e:
            raise ValueError(f"有理矩阵缺少字段: {e}")
        M = cls(entries)
        if "rows" in data and "cols" in data and M.shape != (data["rows"], data["cols"]):
            raise ValueError(f"有理矩阵声明维数 {data['rows']}x{data['cols']} 与数据 {M.shape} 不符")
        return M


@dataclass
class StabilityReport:
    """稳定性报告：极点、判定、裕度、恒等式残差与说明"""
    poles: List[complex] = field(default_factory=list)
    is_stable: bool = True
    margin: float = math.inf
    residuals: Dict[str, float] = field(default_factory=dict)
    notes: str = ''
    extra: Dict[str, object] = field(default_factory=dict)

    @classmethod
    def from_poles(cls, poles, rel_tol: Optional[float] = None, **kw) -> 'StabilityReport':
        poles = np.asarray(poles, dtype=complex)
        tol = stability_tol(poles, rel_tol)
        margin = float(np.min(-poles.real)) if poles.size else math.inf
        return cls(poles=[complex(p) for p in poles],
                   is_stable=bool(np.all(poles.real < -tol)),
                   margin=margin, **kw)

    def add_note(self, text: str):
        self.notes = f"{self.notes}; {text}" if self.notes else text

    def to_json(self) -> dict:
        out = {
            "verdict": bool(self.is_stable),
            "poles": _complex_json(self.poles),
            "margin": self.margin if math.isfinite(self.margin) else None,
            "residuals": {k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v))
                          for k, v in self.residuals.items()},
            "notes": self.notes,
        }
        out.update(self.extra)
        return out


# 频率网格

def log_grid(lo: float, hi: float, n: int = GRID_POINTS) -> np.ndarray:
    return np.logspace(math.log10(lo), math.log10(hi), int(n))


def unit_grid(n: int = GRID_POINTS) -> np.ndarray:
    return log_grid(*UNIT_GRID, n)


def opamp_grid(n: int = GRID_POINTS) -> np.ndarray:
    return log_grid(*OPAMP_GRID, n)


def auto_grid(*systems, n: int = GRID_POINTS) -> np.ndarray:
    """根据极点模长自动选取覆盖全部动态的网格"""
    mags = []
    for sys in systems:
        if isinstance(sys, StateSpace):
            poles = sys.poles()
        else:
            poles = np.concatenate([p for p in sys.entry_poles().values()] or [np.zeros(0)])
        mags.extend(abs(p) for p in poles if abs(p) > 0)
    if not mags:
        return unit_grid(n)
    lo = min(UNIT_GRID[0], _pow10(min(mags)) / 100)
    hi = max(UNIT_GRID[1], _pow10(max(mags)) * 100)
    decades = math.log10(hi / lo)
    return log_grid(lo, hi, max(n, int(4 * decades) + 1))


def _response(sys, omegas) -> np.ndarray:
    if isinstance(sys, np.ndarray):
        return sys
    return sys.freqresp(omegas)


def grid_residual(F, G, omegas, relative: bool = True) -> float:
    """
    网格上的最大误差 sup‖F - G‖_F，可选相对于 sup‖G‖_F

    Args:
        F, G: StateSpace、RationalMatrix 或已求值的响应数组
        omegas: 频率网格
        relative: 是否相对化
    """
    RF, RG = _response(F, omegas), _response(G, omegas)
    if RF.shape != RG.shape:
        raise ValueError(f"维数不匹配: {RF.shape} vs {RG.shape}")
    err = np.max(np.linalg.norm(RF - RG, axis=(1, 2)))
    if not relative:
        return float(err)
    ref = np.max(np.linalg.norm(RG, axis=(1, 2)))
    return float(err / max(ref, 1e-300)) if ref > 0 else float(err)


def pointwise_residual(F, G, omegas) -> float:
    """逐频点相对误差的最大值，适合动态范围很大的响应"""
    RF, RG = _response(F, omegas), _response(G, omegas)
    num = np.linalg.norm(RF - RG, axis=(1, 2))
    den = np.maximum(np.linalg.norm(RG, axis=(1, 2)), 1e-300)
    return float(np.max(num / den))


# 表示之间的转换

def _siso_realization(f: RationalFunction):
    """频率归一化坐标下用 control.tf2ss 实现，再把 A、B 按 w0 还原"""
    k = int(f.den.degree)
    w0 = f.den.natural_scale()
    den = f.den.scaled(w0)
    num = f.num.scaled(w0) if not f.num.is_zero else Polynomial.zero()
    if k == 0:
        d = num.coeffs[0] / den.coeffs[0] if num.coeffs.size else 0.0
        return np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), float(d)
    num_c = np.zeros(k + 1)
    num_c[:num.coeffs.size] = num.coeffs
    A, b, c, d = control.ssdata(control.tf2ss(num_c[::-1], den.coeffs[::-1]))
    return w0 * A, w0 * b, c, float(d[0, 0])


def rm_to_ss(M: RationalMatrix, minimal: bool = True) -> StateSpace:
    """
    有理矩阵 → 状态空间实现：逐元素实现，块对角拼接后用选择矩阵路由到 (i, j)，再做最小化

    Raises:
        ImproperError: 存在非真元素
    """
    p, m = M.shape
    parts, routes = [], []
    for (i, j), f in M:
        if f.is_zero:
            continue
        if not f.is_proper:
            raise ImproperError(
                f"entry T{i + 1}{j + 1} at ({i + 1},{j + 1}) is improper (numerator degree {int(f.num.degree)} > "
                f"denominator degree {int(f.den.degree)}); regularize the network by adding "
                f"small series/parallel port resistances", entry=(i, j))
        parts.append(StateSpace(*_siso_realization(f)))
        routes.append((i, j))
    if not parts:
        return StateSpace.zeros(p, m)
    out_sel = np.zeros((p, len(parts)))
    in_sel = np.zeros((len(parts), m))
    for k, (i, j) in enumerate(routes):
        out_sel[i, k] = 1.0
        in_sel[k, j] = 1.0
    ss = StateSpace.static(out_sel) * ss_blockdiag(*parts) * StateSpace.static(in_sel)
    return ss.minimal() if minimal else ss


def _siso_zeros(A, b, c, d, poles) -> np.ndarray:
    """SISO 传输零点：D 非零时为 eig(A - bc/d)，否则取 Rosenbrock 束的有限广义特征值"""
    if d != 0.0:
        return linalg.eigvals(A - b @ c / d)
    n = A.shape[0]
    P = np.block([[A, b], [c, np.zeros((1, 1))]])
    N = linalg.block_diag(np.eye(n), np.zeros((1, 1)))
    alpha, beta = linalg.eigvals(P, N, homogeneous_eigvals=True)
    cutoff = ZERO_CUTOFF * max(1.0, float(np.max(np.abs(poles))))
    finite = [a / bb for a, bb in zip(alpha, beta) if bb != 0 and abs(a / bb) < cutoff]
    return np.asarray(finite, dtype=complex)


def _siso_transfer(A, b, c, d) -> RationalFunction:
    """最小实现 → 零极点 → 有理函数；在归一化频率下计算"""
    sub = StateSpace(A, b, c, [[d]]).minimal()
    if sub.n == 0:
        return RationalFunction.constant(sub.D[0, 0])
    eig = sub.poles()
    nz = np.abs(eig[np.abs(eig) > 0])
    w0 = _pow10(np.exp(np.mean(np.log(nz)))) if nz.size else 1.0
    As, bs, cs, ds = sub.A / w0, sub.B / w0, sub.C, float(sub.D[0, 0])
    poles = linalg.eigvals(As)
    zeros = _siso_zeros(As, bs, cs, ds, poles)
    if ds != 0.0:
        gain = ds
    else:
        s0 = GAIN_SAMPLE_POINT
        g = (cs @ np.linalg.solve(s0 * np.eye(sub.n) - As, bs.astype(complex)))[0, 0]
        gain = float(np.real(g * np.prod(s0 - poles) / np.prod(s0 - zeros)))
    num = Polynomial.from_roots(zeros, gain).unscaled(w0)
    den = Polynomial.from_roots(poles).unscaled(w0)
    return RationalFunction(num, den)


def rm_from_ss(ss: StateSpace) -> RationalMatrix:
    """状态空间 → 有理矩阵（逐元素 SISO 最小实现后求传递函数）"""
    p, m = ss.shape
    return RationalMatrix([[_siso_transfer(ss.A, ss.B[:, [j]], ss.C[[i], :], ss.D[i, j])
                            for j in range(m)] for i in range(p)])


def as_statespace(M: Union[RationalMatrix, StateSpace]) -> StateSpace:
    return M if isinstance(M, StateSpace) else rm_to_ss(M)


def rm_det(M: RationalMatrix) -> RationalFunction:
    return M.det()


def rm_inv(M: RationalMatrix, allow_improper: bool = False) -> RationalMatrix:
    """
    有理矩阵求逆（状态空间求逆后转换回有理矩阵）

    Args:
        M: 方阵
        allow_improper: D 奇异时退回伴随矩阵形式逆（结果可能非真）

    Raises:
        ImproperError: D 奇异且 allow_improper 为 False
    """
    if M.rows != M.cols:
        raise ValueError("matrix must be square")
    ss = rm_to_ss(M)
    if not ss.d_invertible():
        if not allow_improper:
            raise ImproperError("inverse is improper; regularize the network "
                                "(add small port resistances so D is invertible)")
        logger.warning("直通矩阵奇异，改用伴随矩阵求形式逆，结果可能非真")
        return M.formal_inverse()
    return rm_from_ss(ss.inv())


def rm_is_stable(M: Union[RationalMatrix, StateSpace], rel_tol: Optional[float] = None) -> StabilityReport:
    """
    判定 M 是否属于 M(𝕊)

    极点取最小实现的特征值（McMillan 极点）；逐元素极点写入 notes。
    """
    if isinstance(M, StateSpace):
        report = M.stability_report(rel_tol)
        report.add_note("poles from realization")
        return report
    verdicts = {ij: rf_is_stable(e, rel_tol) for ij, e in M}
    entries_ok = all(v.is_stable for v in verdicts.values())
    improper = [ij for ij, v in verdicts.items() if not v.proper]
    if improper:
        poles = np.concatenate([np.asarray(v.poles, dtype=complex) for v in verdicts.values()])
        report = StabilityReport.from_poles(np.unique(poles), rel_tol)
        report.is_stable = False
        report.add_note("improper entries " + ", ".join(f"({i + 1},{j + 1})" for i, j in improper))
        return report
    report = rm_to_ss(M).stability_report(rel_tol)
    bad = [ij for ij, v in verdicts.items() if not v.is_stable]
    if bad:
        report.add_note("unstable entries " + ", ".join(f"({i + 1},{j + 1})" for i, j in bad))
    if report.is_stable != entries_ok:
        report.add_note("McMillan-pole and entrywise verdicts disagree")
        report.is_stable = report.is_stable and entries_ok
    entry_text = "; ".join(f"({i + 1},{j + 1}): " + ", ".join(f"{p:.6g}" for p in v.poles)
                           for (i, j), v in verdicts.items() if v.poles)
    if entry_text:
        report.add_note("entry poles " + entry_text)
    return report


def rm_is_unimodular(M: RationalMatrix, rel_tol: Optional[float] = None) -> bool:
    """方阵 M 的元素全在 𝕊 且 det(M) 为 𝕊 中的单位"""
    if M.rows != M.cols:
        raise ValueError("matrix must be square")
    if not all(rf_is_stable(e, rel_tol).is_stable for _, e in M):
        return False
    return rf_is_unit(M.det(), rel_tol)
