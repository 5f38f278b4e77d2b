import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg
from scipy.optimize import linear_sum_assignment
from scipy.signal import place_poles

from errors import HiddenModeError, ImproperError, PlacementError, VerificationError
from polyrat import (Polynomial, RationalFunction, as_rational, common_roots, poly_roots,
                     stability_tol)
from ratmat import (RationalMatrix, StabilityReport, StateSpace, as_statespace, auto_grid,
                    grid_residual, rm_from_ss, ss_hstack, ss_vstack, _complex_json)

logger = logging.getLogger(__name__)

BEZOUT_TOL = 1e-9
IDENTITY_TOL = 1e-6
PLACEMENT_REL_TOL = 1e-6
# 默认目标极点：不稳定特征值 λ → -|Re λ| - REFLECT_SHIFT·|λ|
REFLECT_SHIFT = 0.1

DCF_BLOCKS = ('Nr', 'Dr', 'Nl', 'Dl', 'Xl', 'Yl', 'Xr', 'Yr')


@dataclass
class SisoCoprime:
    """
    单端口网络函数 G = n/d 的互质分解及 Bezout 见证 x, y（nx + dy = 1）

    n = num/(s+a)^k, d = den/(s+a)^k, x = X/(s+a)^j, y = Y/(s+a)^j，
    原始多项式一并保存，供恒等式的多项式复核使用。
    """
    n: RationalFunction
    d: RationalFunction
    x: RationalFunction
    y: RationalFunction
    num: Polynomial
    den: Polynomial
    X: Polynomial
    Y: Polynomial
    shift: float
    k: int
    j: int

    def bezout_residual(self) -> float:
        """num·X + den·Y - (s+a)^(k+j) 的相对系数残差（按 a 归一化）"""
        a = self.shift
        lhs = (self.num * self.X + self.den * self.Y).scaled(a)
        rhs = Polynomial.shift_power(a, self.k + self.j).scaled(a)
        return _coeff_residual(lhs, rhs)

    def plant(self) -> RationalFunction:
        return RationalFunction(self.num, self.den)

    def to_json(self) -> dict:
        return {
            "n": self.n.to_json(),
            "d": self.d.to_json(),
            "x": self.x.to_json(),
            "y": self.y.to_json(),
            "shift": self.shift,
            "bezout_residual": self.bezout_residual(),
        }


def _coeff_residual(lhs: Polynomial, rhs: Polynomial) -> float:
    diff = (lhs - rhs).coeffs
    ref = np.max(np.abs(rhs.coeffs)) if not rhs.is_zero else 1.0
    return float(np.max(np.abs(diff)) / ref) if diff.size else 0.0


def _plant_parts(G) -> Tuple[Polynomial, Polynomial]:
    if isinstance(G, tuple):
        f = RationalFunction(G[0], G[1], reduce=False)
    else:
        f = as_rational(G)
    return f.num, f.den


def siso_fraction(G, shift: float = 1.0) -> Tuple[RationalFunction, RationalFunction]:
    """G = n/d，n = num/(s+a)^k、d = den/(s+a)^k；不求 Bezout 见证"""
    if not shift > 0:
        raise ValueError("shift must be positive")
    f = as_rational(G)
    if not f.is_proper:
        raise ImproperError("plant is improper; regularize the network before factorization")
    Pk = Polynomial.shift_power(float(shift), int(f.den.degree))
    return RationalFunction(f.num, Pk), RationalFunction(f.den, Pk)


def siso_coprime(G: Union[RationalFunction, Tuple], shift: float = 1.0) -> SisoCoprime:
    """
    构造 𝕊 上的互质分解与 Bezout 见证

    解多项式 Bezout 方程 num·X + den·Y = (s+a)^(2k-1)，deg X, deg Y ≤ k-1
    （Sylvester 型方阵，最小二乘求解以取最小范数解）。

    Args:
        G: 真有理函数，或 (num, den) 元组（不做约分，用于检测隐藏模态）
        shift: 移位 a > 0

    Returns:
        SisoCoprime: n, d, x, y 及原始多项式

    Raises:
        HiddenModeError: 分子分母有公共根
        ImproperError: G 非真
    """
    if not shift > 0:
        raise ValueError("shift must be positive")
    num, den = _plant_parts(G)
    if num.degree > den.degree:
        raise ImproperError("plant is improper; regularize the network before factorization")
    lead = den.leading
    num, den = Polynomial(num.coeffs / lead), Polynomial(den.coeffs / lead)
    if num.is_zero:
        den = Polynomial.one()
    if num.degree >= 1 and den.degree >= 1:
        ia, _ = common_roots(poly_roots(num), poly_roots(den))
        if ia:
            raise HiddenModeError("hidden mode: fraction not coprime")

    a = float(shift)
    k = int(den.degree)
    if k == 0:
        c = num.leading if not num.is_zero else 0.0
        if c != 0.0:
            X, Y = Polynomial([1.0 / c]), Polynomial.zero()
        else:
            X, Y = Polynomial.zero(), Polynomial.one()
        return SisoCoprime(n=RationalFunction(num, 1.0), d=RationalFunction.constant(1.0),
                           x=RationalFunction(X, 1.0), y=RationalFunction(Y, 1.0),
                           num=num, den=den, X=X, Y=Y, shift=a, k=0, j=0)

    j = k - 1
    X, Y = _solve_bezout(num, den, a, j, k + j)
    Pk = Polynomial.shift_power(a, k)
    Pj = Polynomial.shift_power(a, j)
    out = SisoCoprime(n=RationalFunction(num, Pk), d=RationalFunction(den, Pk),
                      x=RationalFunction(X, Pj), y=RationalFunction(Y, Pj),
                      num=num, den=den, X=X, Y=Y, shift=a, k=k, j=j)
    res = out.bezout_residual()
    if res > BEZOUT_TOL:
        raise VerificationError(f"Bezout identity residual {res:.3e} exceeds {BEZOUT_TOL:g}")
    logger.debug("互质分解完成: k=%d, Bezout 残差 %.2e", k, res)
    return out


def _solve_bezout(num: Polynomial, den: Polynomial, a: float, j: int, deg_rhs: int):
    """在 s = a·s' 坐标下组装 Sylvester 方程并求最小范数解"""
    ns, ds = num.scaled(a), den.scaled(a)
    rhs = Polynomial.shift_power(a, deg_rhs).scaled(a).coeffs
    rows = deg_rhs + 1
    M = np.zeros((rows, 2 * (j + 1)))
    for i in range(j + 1):
        if not ns.is_zero:
            M[i:i + ns.coeffs.size, i] = ns.coeffs
        M[i:i + ds.coeffs.size, j + 1 + i] = ds.coeffs
    b = np.zeros(rows)
    b[:rhs.size] = rhs
    sol, *_ = np.linalg.lstsq(M, b, rcond=None)
    Xs, Ys = Polynomial(sol[:j + 1]), Polynomial(sol[j + 1:])
    return Xs.unscaled(a), Ys.unscaled(a)


# 多端口双互质分解

@dataclass
class Dcf:
    """
    双互质分解的八个因子（状态空间形式），满足
    [[Xl, Yl], [Dl, -Nl]]·[[Nr, Yr], [Dr, -Xr]] = I，T = Nr·Dr^-1 = Dl^-1·Nl
    """
    Nr: StateSpace
    Dr: StateSpace
    Nl: StateSpace
    Dl: StateSpace
    Xl: StateSpace
    Yl: StateSpace
    Xr: StateSpace
    Yr: StateSpace
    f_poles: np.ndarray
    l_poles: np.ndarray
    F: np.ndarray
    L: np.ndarray
    anchor_gain: float = 0.0
    network: Optional[StateSpace] = None
    _rational: Dict[str, RationalMatrix] = field(default_factory=dict, repr=False)

    def block(self, name: str) -> StateSpace:
        return getattr(self, name)

    def rational(self, name: str) -> RationalMatrix:
        """因子的有理矩阵形式（按需转换）"""
        if name not in self._rational:
            self._rational[name] = rm_from_ss(self.block(name))
        return self._rational[name]

    def left_block(self) -> StateSpace:
        return ss_vstack(ss_hstack(self.Xl, self.Yl), ss_hstack(self.Dl, -self.Nl))

    def right_block(self) -> StateSpace:
        return ss_vstack(ss_hstack(self.Nr, self.Yr), ss_hstack(self.Dr, -self.Xr))

    def replace(self, **blocks) -> 'Dcf':
        kw = {name: getattr(self, name) for name in DCF_BLOCKS}
        kw.update(blocks)
        return Dcf(f_poles=self.f_poles, l_poles=self.l_poles, F=self.F, L=self.L,
                   anchor_gain=self.anchor_gain, network=self.network, **kw)

    def to_json(self, include_rational: bool = True) -> dict:
        out = {}
        if include_rational:
            for name in DCF_BLOCKS:
                out[name] = self.rational(name).to_json()
        out["f_poles"] = _complex_json(self.f_poles)
        out["l_poles"] = _complex_json(self.l_poles)
        out["anchor_gain"] = self.anchor_gain
        out["statespace"] = {name: self.block(name).to_json() for name in DCF_BLOCKS}
        out["statespace"]["F"] = np.asarray(self.F).tolist()
        out["statespace"]["L"] = np.asarray(self.L).tolist()
        if self.network is not None:
            out["statespace"]["T"] = self.network.to_json()
        return out

    @classmethod
    def from_json(cls, data) -> 'Dcf':
        """优先读取 statespace 段；缺失时由有理矩阵重新实现"""
        def poles(key):
            return np.array([complex(*p) if isinstance(p, (list, tuple)) else complex(p)
                             for p in data.get(key, [])], dtype=complex)

        ss = data.get("statespace")
        if ss:
            blocks = {name: StateSpace.from_json(ss[name]) for name in DCF_BLOCKS}
            F = np.asarray(ss.get("F", []), dtype=float)
            L = np.asarray(ss.get("L", []), dtype=float)
            network = StateSpace.from_json(ss["T"]) if "T" in ss else None
        else:
            from ratmat import rm_to_ss
            blocks = {name: rm_to_ss(RationalMatrix.from_json(data[name])) for name in DCF_BLOCKS}
            F = L = np.zeros((0, 0))
            network = None
        return cls(f_poles=poles("f_poles"), l_poles=poles("l_poles"), F=F, L=L,
                   anchor_gain=float(data.get("anchor_gain", 0.0)), network=network, **blocks)


def default_pole_targets(A: np.ndarray, rel_tol: Optional[float] = None) -> np.ndarray:
    """不稳定特征值关于虚轴反射并左移 0.1|λ|，稳定特征值保持不变"""
    eig = linalg.eigvals(A) if A.size else np.zeros(0, dtype=complex)
    tol = stability_tol(eig, rel_tol)
    floor = max(REFLECT_SHIFT * (np.linalg.norm(A, 2) if A.size else 0.0), 1.0)
    out = []
    for lam in eig:
        if lam.real < -tol:
            out.append(lam)
            continue
        re = -abs(lam.real) - REFLECT_SHIFT * abs(lam)
        if re >= -tol:
            re = -floor
        out.append(complex(re, lam.imag))
    out = np.asarray(out, dtype=complex)
    return np.where(np.abs(out.imag) <= 1e-12 * np.abs(out), out.real + 0j, out)


def _validate_targets(poles, n: int, label: str) -> np.ndarray:
    p = np.atleast_1d(np.asarray(poles, dtype=complex))
    if p.size != n:
        raise PlacementError(f"{label} needs {n} pole targets, got {p.size}")
    tol = stability_tol(p)
    if np.any(p.real >= -tol):
        raise PlacementError(f"{label} targets must lie in the open left half-plane")
    if p.size and _match_error(np.conj(p), p) > 1e-9:
        raise PlacementError(f"{label} targets are not closed under complex conjugation")
    return p


def _match_error(actual: np.ndarray, target: np.ndarray) -> float:
    """按最优匹配计算两组复数的最大相对偏差"""
    if actual.size == 0:
        return 0.0
    scale = np.maximum(np.abs(target), 1e-300)
    cost = np.abs(actual[:, None] - target[None, :]) / scale[None, :]
    r, c = linear_sum_assignment(cost)
    return float(np.max(cost[r, c]))


def _place(A: np.ndarray, B: np.ndarray, poles: np.ndarray, label: str) -> np.ndarray:
    """
    返回 K 使 eig(A + B K) = poles

    B 先经 SVD 压缩为列满秩，并在归一化频率下调用 scipy 的鲁棒极点配置。
    """
    n = A.shape[0]
    U, S, Vt = np.linalg.svd(B, full_matrices=False)
    r = int(np.sum(S > 1e-12 * (S[0] if S.size else 0.0)))
    if r == 0:
        raise PlacementError(f"{label}: input matrix is zero, realization uncontrollable")
    Vr = Vt[:r].T
    Br = B @ Vr
    w0 = max(np.linalg.norm(A, 2), float(np.max(np.abs(poles))), 1e-300)
    beta = np.linalg.norm(Br, 2)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            res = place_poles(A / w0, Br / beta, poles / w0)
        except (ValueError, np.linalg.LinAlgError) as e:
            raise PlacementError(f"{label}: pole placement failed ({e})")
    for w in caught:
        logger.warning("极点配置警告 (%s): %s", label, w.message)
    K = -Vr @ res.gain_matrix * (w0 / beta)
    return K


def _factor_blocks(ss: StateSpace, F: np.ndarray, L: np.ndarray, kappa: float) -> Dict[str, StateSpace]:
    """
    由状态反馈 F、输出注入 L 组装八个因子

    kappa 为常数 Youla 平移 Q0 = -kappa·I 的增益（仅方阵网络），
    使 Xl、Xr 双真，从而 Q = 0 时补偿器为真有理且互连适定。
    """
    A, B, C, D = ss.A, ss.B, ss.C, ss.D
    p, m = ss.shape
    AF, CF = A + B @ F, C + D @ F
    AL, BL = A + L @ C, B + L @ D
    if kappa and p != m:
        logger.warning("非方阵网络不做常数平移")
        kappa = 0.0
    Im, Ip = np.eye(m), np.eye(p)
    FL = F + kappa * C
    LB = L + kappa * B
    return {
        'Nr': StateSpace(AF, B, CF, D),
        'Dr': StateSpace(AF, B, F, Im),
        'Nl': StateSpace(AL, BL, C, D),
        'Dl': StateSpace(AL, L, C, Ip),
        'Xl': StateSpace(AL, L, FL, kappa * np.eye(m, p)),
        'Yl': StateSpace(AL, -BL, FL, Im - kappa * D),
        'Xr': StateSpace(AF, LB, F, kappa * np.eye(m, p)),
        'Yr': StateSpace(AF, -LB, CF, Ip - kappa * D),
    }


def dcf_from_gains(T: Union[RationalMatrix, StateSpace], F: np.ndarray, L: np.ndarray,
                   anchor_gain: float = 1.0, f_poles=None, l_poles=None) -> Dcf:
    """用给定的 F、L 在 T 的实现上重建双互质分解（不重新配置极点）"""
    ss = as_statespace(T)
    blocks = _factor_blocks(ss, np.asarray(F, dtype=float).reshape(ss.inputs, ss.n),
                            np.asarray(L, dtype=float).reshape(ss.n, ss.outputs), anchor_gain)
    fp = np.asarray(f_poles if f_poles is not None else linalg.eigvals(blocks['Dr'].A), dtype=complex)
    lp = np.asarray(l_poles if l_poles is not None else linalg.eigvals(blocks['Dl'].A), dtype=complex)
    return Dcf(f_poles=fp, l_poles=lp, F=F, L=L, anchor_gain=anchor_gain, network=ss, **blocks)


def dcf_from_ss(T: Union[RationalMatrix, StateSpace], f_poles: Optional[Sequence[complex]] = None,
                l_poles: Optional[Sequence[complex]] = None, anchor_gain: float = 1.0,
                omegas=None) -> Dcf:
    """
    基于极点配置的双互质分解

    Args:
        T: 真有理网络函数矩阵或其状态空间实现
        f_poles: eig(A + BF) 的目标；None 时按默认反射规则
        l_poles: eig(A + LC) 的目标；None 时按默认反射规则
        anchor_gain: 常数平移增益 kappa（0 表示不平移）
        omegas: 复核分块恒等式所用频率网格

    Returns:
        Dcf: 八个因子及极点配置来源

    Raises:
        ImproperError: T 含非真元素
        PlacementError: 目标极点非法或配置失败
        VerificationError: 分块恒等式复核失败
    """
    ss = as_statespace(T).minimal()
    n = ss.n
    if n == 0:
        F = np.zeros((ss.inputs, 0))
        L = np.zeros((0, ss.outputs))
        fp = lp = np.zeros(0, dtype=complex)
    else:
        fp = _validate_targets(default_pole_targets(ss.A) if f_poles is None else f_poles, n, "f_poles")
        lp = _validate_targets(default_pole_targets(ss.A) if l_poles is None else l_poles, n, "l_poles")
        F = _place(ss.A, ss.B, fp, "state feedback F")
        L = _place(ss.A.T, ss.C.T, lp, "output injection L").T
        for label, M, target in (("F", ss.A + ss.B @ F, fp), ("L", ss.A + L @ ss.C, lp)):
            err = _match_error(linalg.eigvals(M), target)
            if err > PLACEMENT_REL_TOL:
                raise PlacementError(f"placement of {label} missed its targets by {err:.2e} (relative)")
    dcf = dcf_from_gains(ss, F, L, anchor_gain, fp, lp)
    grid = omegas if omegas is not None else auto_grid(ss, dcf.Dr, dcf.Dl)
    res = block_identity_residual(dcf, grid)
    if res > IDENTITY_TOL:
        raise VerificationError(f"block identity residual {res:.3e} exceeds {IDENTITY_TOL:g}")
    logger.info("双互质分解完成: 阶数 %d, 分块恒等式残差 %.2e", n, res)
    return dcf


def _responses(dcf: Dcf, omegas) -> Dict[str, np.ndarray]:
    return {name: dcf.block(name).freqresp(omegas) for name in DCF_BLOCKS}


def _shared_blocks(dcf: Dcf):
    """
    八个因子按状态空间公式共用 A_L、A_F 时，返回左右两块的共用状态实现 (A, B, C, D)；
    否则返回 None
    """
    same = np.array_equal
    Xl, Yl, Dl, Nl = dcf.Xl, dcf.Yl, dcf.Dl, dcf.Nl
    Nr, Dr, Yr, Xr = dcf.Nr, dcf.Dr, dcf.Yr, dcf.Xr
    A1, A2 = Xl.A, Nr.A
    if not all(same(b.A, A1) for b in (Yl, Dl, Nl)) or not all(same(b.A, A2) for b in (Dr, Yr, Xr)):
        return None
    if not (same(Xl.B, Dl.B) and same(Nl.B, -Yl.B) and same(Xl.C, Yl.C) and same(Dl.C, Nl.C)):
        return None
    if not (same(Nr.B, Dr.B) and same(Xr.B, -Yr.B) and same(Nr.C, Yr.C) and same(Dr.C, Xr.C)):
        return None
    left = (A1, np.hstack([Xl.B, Yl.B]), np.vstack([Xl.C, Dl.C]),
            np.block([[Xl.D, Yl.D], [Dl.D, -Nl.D]]))
    right = (A2, np.hstack([Nr.B, Yr.B]), np.vstack([Nr.C, Dr.C]),
             np.block([[Nr.D, Yr.D], [Dr.D, -Xr.D]]))
    return left, right


def _identity_defect(left, right) -> StateSpace:
    """
    左块·右块 - I 的实现，取坐标 (x_L + x_R, x_R)

    串联实现 [[A1, B1 C2], [0, A2]] 在此坐标下，恒等式成立时耦合项 A2 - A1 + B1 C2、
    输入项 B1 D2 + B2、输出项 D1 C2 - C1 与直通 D1 D2 - I 全部为零，
    残差直接由这些小量求值，不经过大数相消。
    """
    A1, B1, C1, D1 = left
    A2, B2, C2, D2 = right
    n1, n2 = A1.shape[0], A2.shape[0]
    A = np.block([[A1, A2 - A1 + B1 @ C2], [np.zeros((n2, n1)), A2]])
    B = np.vstack([B1 @ D2 + B2, B2])
    C = np.hstack([C1, D1 @ C2 - C1])
    return StateSpace(A, B, C, D1 @ D2 - np.eye(D1.shape[0]))


def identity_defect(dcf: Dcf, omegas) -> np.ndarray:
    """
    [[Xl,Yl],[Dl,-Nl]]·[[Nr,Yr],[Dr,-Xr]] - I 在 s = jω 上的值，形状 (N, m+p, m+p)

    因子共用状态矩阵时按 _identity_defect 的实现求值，否则逐块求值后相乘。
    """
    shared = _shared_blocks(dcf)
    if shared is not None:
        return _identity_defect(*shared).freqresp(omegas)
    R = _responses(dcf, omegas)
    left = np.concatenate([np.concatenate([R['Xl'], R['Yl']], axis=2),
                           np.concatenate([R['Dl'], -R['Nl']], axis=2)], axis=1)
    right = np.concatenate([np.concatenate([R['Nr'], R['Yr']], axis=2),
                            np.concatenate([R['Dr'], -R['Xr']], axis=2)], axis=1)
    prod = left @ right
    return prod - np.eye(prod.shape[1])


def block_identity_residual(dcf: Dcf, omegas) -> float:
    """sup‖[[Xl,Yl],[Dl,-Nl]]·[[Nr,Yr],[Dr,-Xr]] - I‖ 相对于 ‖I‖"""
    E = identity_defect(dcf, omegas)
    return float(np.max(np.linalg.norm(E, axis=(1, 2))) / math.sqrt(E.shape[1]))


def dcf_verify(f: Dcf, T: Union[RationalMatrix, StateSpace], omegas=None,
               tol: float = IDENTITY_TOL) -> StabilityReport:
    """
    复核双互质分解：分块恒等式、左右分式重构、八个因子属于 M(𝕊)

    失败情况写入报告，不抛出异常。
    """
    Tss = as_statespace(T)
    grid = omegas if omegas is not None else auto_grid(Tss, f.Dr, f.Dl)
    R = _responses(f, grid)
    TR = T.freqresp(grid)
    right_frac = R['Nr'] @ np.linalg.inv(R['Dr'])
    left_frac = np.linalg.solve(R['Dl'], R['Nl'])
    residuals = {
        "block_identity": block_identity_residual(f, grid),
        "right_fraction": grid_residual(right_frac, TR, grid),
        "left_fraction": grid_residual(left_frac, TR, grid),
    }
    poles = []
    notes = []
    members_ok = True
    for name in DCF_BLOCKS:
        rep = f.block(name).stability_report()
        poles.extend(rep.poles)
        if not rep.is_stable:
            members_ok = False
            notes.append(f"{name} not in M(S)")
    for name in ('Dr', 'Dl'):
        if not f.block(name).d_invertible():
            members_ok = False
            notes.append(f"{name} has a zero at infinity")
    report = StabilityReport.from_poles(np.unique(np.asarray(poles, dtype=complex)))
    report.residuals = residuals
    for key, val in residuals.items():
        if not val < tol:
            notes.append(f"{key} residual {val:.3e} exceeds {tol:g}")
    report.is_stable = members_ok and all(v < tol for v in residuals.values())
    report.residuals["members_in_MS"] = members_ok
    report.notes = "; ".join(notes)
    report.extra["f_poles"] = _complex_json(f.f_poles)
    report.extra["l_poles"] = _complex_json(f.l_poles)
    return report
