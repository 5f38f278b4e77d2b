import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Optional, Union

import numpy as np

from coprime import BEZOUT_TOL, IDENTITY_TOL, Dcf, SisoCoprime, identity_defect, siso_fraction
from errors import DegenerateError, ImproperError, InadmissibleError, VerificationError
from polyrat import (Polynomial, RationalFunction, as_rational, rf_is_stable, rf_is_unit,
                     stability_tol)
from ratmat import (COND_LIMIT, RationalMatrix, StabilityReport, StateSpace, _complex_json,
                    as_statespace, auto_grid, grid_residual, rm_from_ss, rm_is_stable, rm_to_ss)

logger = logging.getLogger(__name__)

CROSS_CHECK_TOL = 1e-5

KINDS = {
    'open_circuit': 'admittance (parallel compensation)',
    'short_circuit': 'impedance (series compensation)',
}


@dataclass
class YoulaParamScalar:
    """单端口 Youla 参数 q ∈ 𝕊"""
    q: RationalFunction

    def __post_init__(self):
        self.q = as_rational(self.q)

    def check(self, c: SisoCoprime):
        """q 稳定且 x - q·d 在无穷远处无零点，否则抛出 InadmissibleError"""
        if not rf_is_stable(self.q).is_stable:
            raise InadmissibleError("inadmissible q: q must be stable and proper")
        xi = c.x.value_at_infinity()
        qd = self.q.value_at_infinity() * c.d.value_at_infinity()
        if abs(xi - qd) <= 1e-12 * max(1.0, abs(xi), abs(qd)):
            raise InadmissibleError("inadmissible q: x - q*d has a zero at infinity")


@dataclass
class YoulaParamMatrix:
    """多端口 Youla 参数 Q ∈ M(𝕊)；None 表示 Q = 0"""
    Q: Optional[Union[RationalMatrix, StateSpace]] = None

    def realization(self, rows: int, cols: int) -> StateSpace:
        if self.Q is None:
            return StateSpace.zeros(rows, cols)
        ss = as_statespace(self.Q)
        if ss.shape != (rows, cols):
            raise InadmissibleError(f"inadmissible Q: expected {rows}x{cols}, got {ss.shape[0]}x{ss.shape[1]}")
        return ss

    def check_stable(self):
        if self.Q is None:
            return
        report = rm_is_stable(self.Q)
        if not report.is_stable:
            raise InadmissibleError(f"inadmissible Q: entries must lie in M(S) ({report.notes})")


def youla_identity_residual(c: SisoCoprime, q) -> float:
    """
    n(x - qd) + d(y + qn) = 1 的多项式复核

    清去分母 q_den·(s+a)^(2k) 后比较系数，返回相对残差。
    """
    q = as_rational(q)
    P = Polynomial.shift_power(c.shift, 1)
    lift = P ** (c.k - c.j)
    E = (c.num * (c.X * q.den * lift - q.num * c.den)
         + c.den * (c.Y * q.den * lift + q.num * c.num))
    ref = q.den * P ** (2 * c.k)
    a = c.shift
    diff = (E - ref).scaled(a).coeffs
    scale = np.max(np.abs(ref.scaled(a).coeffs))
    return float(np.max(np.abs(diff)) / scale) if diff.size else 0.0


def single_port_compensator(c: SisoCoprime, q=0.0, kind: str = 'open_circuit') -> RationalFunction:
    """
    单端口镇定补偿器 G_c = (y + q·n)(x - q·d)^-1

    kind 只标明 G_c 的物理意义：open_circuit 为并联导纳，short_circuit 为串联阻抗。

    Raises:
        InadmissibleError: q 不稳定或 x - q·d 在无穷远处有零点
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {sorted(KINDS)}")
    param = q if isinstance(q, YoulaParamScalar) else YoulaParamScalar(q)
    param.check(c)
    qf = param.q
    # 公分母 q_den·(s+a)^k 已约去
    lift = Polynomial.shift_power(c.shift, c.k - c.j) * qf.den
    Gc = RationalFunction(c.Y * lift + qf.num * c.num, c.X * lift - qf.num * c.den)
    res = youla_identity_residual(c, qf)
    if res > BEZOUT_TOL:
        raise VerificationError(f"Youla identity residual {res:.3e} exceeds {BEZOUT_TOL:g}")
    logger.info("单端口补偿器 (%s): %s", KINDS[kind], Gc)
    return Gc


def check_single_port(G, G_c, shift: float = 1.0) -> StabilityReport:
    """
    单端口互连稳定性：(G + G_c)^-1 的极点判据与 Δ = n·d_c + d·n_c 的单位判据

    两个判据同时给出；判定为二者的与，不一致时在 notes 中说明（零极点对消）。

    Raises:
        DegenerateError: G + G_c 恒为零
    """
    G, G_c = as_rational(G), as_rational(G_c)
    S = G + G_c
    if S.is_zero:
        raise DegenerateError("degenerate interconnection")
    pole = rf_is_stable(S.inverse())
    report = StabilityReport.from_poles(pole.poles)
    unit = None
    try:
        n, d = siso_fraction(G, shift)
        n_c, d_c = siso_fraction(G_c, shift)
        delta = n * d_c + d * n_c
        unit = rf_is_unit(delta)
        report.extra["delta"] = delta.to_json()
    except ImproperError as e:
        report.add_note(f"Δ not computed: {e}")
    report.is_stable = pole.is_stable and bool(unit)
    report.residuals = {
        "pole_verdict": pole.is_stable,
        "delta_unit": bool(unit),
        "verdicts_agree": unit is not None and pole.is_stable == unit,
    }
    if pole.note:
        report.add_note(pole.note)
    if unit is not None and pole.is_stable != unit:
        report.add_note("pole test and Δ-unit test disagree: hidden pole/zero cancellation")
    return report


def nmp_obstruction_distance(G, G_c) -> float:
    """G 的右半平面零点与 G_c 极点的最小相对距离（无右半平面零点时为 inf）"""
    G, G_c = as_rational(G), as_rational(G_c)
    zeros = G.zeros()
    rhp = zeros[zeros.real >= -stability_tol(zeros)]
    poles = G_c.poles()
    if rhp.size == 0 or poles.size == 0:
        return math.inf
    return float(min(np.min(np.abs(poles - z)) / max(abs(z), 1e-300) for z in rhp))


# 多端口

@dataclass
class CompensatorResult:
    """混合补偿器 T_c 及其分式 (Dcl, Ncl)、(Dcr, Ncr)"""
    realization: StateSpace
    right_realization: StateSpace
    Dcl: StateSpace
    Ncl: StateSpace
    Dcr: StateSpace
    Ncr: StateSpace
    Q: StateSpace
    dcf: Dcf
    residuals: Dict[str, float] = field(default_factory=dict)
    _T_c: Optional[RationalMatrix] = field(default=None, repr=False)

    @property
    def T_c(self) -> RationalMatrix:
        if self._T_c is None:
            self._T_c = rm_from_ss(self.realization)
        return self._T_c

    def freqresp(self, omegas):
        return self.realization.freqresp(omegas)


def _delta_defects(f: Dcf, Qs: StateSpace, omegas):
    """
    Δ_r - I 与 Δ_l - I 在网格上的值

    记分块恒等式偏差为 E，则 Δ_r - I = E11 - Q·E21，Δ_l - I = E22 + E21·Q。
    """
    E = identity_defect(f, omegas)
    m = f.Xl.outputs
    Qr = Qs.freqresp(omegas)
    E11, E21, E22 = E[:, :m, :m], E[:, m:, :m], E[:, m:, m:]
    return E11 - Qr @ E21, E22 + E21 @ Qr


def _identity_residual(defect: np.ndarray) -> float:
    return float(np.max(np.linalg.norm(defect, axis=(1, 2))) / math.sqrt(defect.shape[1]))


def hybrid_compensator(f: Dcf, Q=None, omegas=None, tol: float = IDENTITY_TOL) -> CompensatorResult:
    """
    T_c = (Xl - Q·Dl)^-1 (Yl + Q·Nl) = (Yr + Nr·Q)(Xr - Dr·Q)^-1

    两种形式在网格上比对，并复核 Δ_r = Ncl·Dr + Dcl·Nr = I、Δ_l = Nl·Dcr + Dl·Ncr = I。

    Raises:
        InadmissibleError: Q 不稳定或 det(Xl - Q·Dl)、det(Xr - Dr·Q) 在无穷远处为零
        VerificationError: 左右形式不一致或 Δ 偏离单位阵
    """
    param = Q if isinstance(Q, YoulaParamMatrix) else YoulaParamMatrix(Q)
    param.check_stable()
    m, p = f.Xl.shape
    Qs = param.realization(m, p)
    Dcl = f.Xl - Qs * f.Dl
    Ncl = f.Yl + Qs * f.Nl
    Dcr = f.Xr - f.Dr * Qs
    Ncr = f.Yr + f.Nr * Qs
    for name, block in (("Xl - Q*Dl", Dcl), ("Xr - Dr*Q", Dcr)):
        if not block.d_invertible():
            raise InadmissibleError(f"inadmissible Q: det({name}) has a zero at infinity")
    left = (Dcl.inv() * Ncl).minimal()
    right = (Ncr * Dcr.inv()).minimal()

    grid = omegas if omegas is not None else auto_grid(f.Dr, f.Dl, left)
    dr, dl = _delta_defects(f, Qs, grid)
    residuals = {
        "left_right_agreement": grid_residual(left, right, grid),
        "delta_r": _identity_residual(dr),
        "delta_l": _identity_residual(dl),
    }
    for key, val in residuals.items():
        if not val < tol:
            raise VerificationError(f"{key} residual {val:.3e} exceeds {tol:g}")
    logger.info("混合补偿器: 阶数 %d, 左右形式残差 %.2e", left.n, residuals["left_right_agreement"])
    return CompensatorResult(realization=left, right_realization=right, Dcl=Dcl, Ncl=Ncl,
                             Dcr=Dcr, Ncr=Ncr, Q=Qs, dcf=f, residuals=residuals)


@dataclass
class InterconnectionResult:
    """端口互连 T̂ = (T^-1 + T_c^-1)^-1 的实现、Δ_r、Δ_l 与稳定性报告"""
    realization: StateSpace
    report: StabilityReport
    closed_loop_poles: np.ndarray
    delta_r_ss: Optional[StateSpace] = None
    delta_l_ss: Optional[StateSpace] = None
    _T_hat: Optional[RationalMatrix] = field(default=None, repr=False)

    @property
    def T_hat(self) -> RationalMatrix:
        if self._T_hat is None:
            self._T_hat = rm_from_ss(self.realization.minimal())
        return self._T_hat

    @property
    def delta_r(self) -> Optional[RationalMatrix]:
        return rm_from_ss(self.delta_r_ss.minimal()) if self.delta_r_ss is not None else None

    @property
    def delta_l(self) -> Optional[RationalMatrix]:
        return rm_from_ss(self.delta_l_ss.minimal()) if self.delta_l_ss is not None else None


def _joint_realization(T: StateSpace, Tc: StateSpace, cond_limit: float = COND_LIMIT) -> Optional[StateSpace]:
    """
    端口约束 y = y_c、u + u_c = Û 下的联合状态实现；D + D_c 奇异时返回 None
    """
    S = T.D + Tc.D
    if S.size and np.linalg.cond(S) > cond_limit:
        return None
    W = np.linalg.inv(S)
    A, B, C, D = T.A, T.B, T.C, T.D
    Ac, Bc, Cc, Dc = Tc.A, Tc.B, Tc.C, Tc.D
    k = D.shape[0]
    Ahat = np.block([[A - B @ W @ C, B @ W @ Cc],
                     [Bc @ W @ C, Ac - Bc @ W @ Cc]])
    Bhat = np.vstack([B @ W @ Dc, Bc @ (np.eye(k) - W @ Dc)])
    Chat = np.hstack([C - D @ W @ C, D @ W @ Cc])
    return StateSpace(Ahat, Bhat, Chat, D @ W @ Dc)


def _rational_interconnect(T, T_c) -> StateSpace:
    """D + D_c 奇异时退回有理矩阵运算（仅适合小规模、系数温和的情形）"""
    logger.warning("D + D_c 奇异，改用有理矩阵运算计算互连")
    Tm = T if isinstance(T, RationalMatrix) else rm_from_ss(as_statespace(T))
    Tcm = T_c if isinstance(T_c, RationalMatrix) else rm_from_ss(as_statespace(T_c))
    try:
        hat = (Tm.formal_inverse() + Tcm.formal_inverse()).formal_inverse()
    except ZeroDivisionError:
        raise DegenerateError("degenerate interconnection: T^-1 + T_c^-1 is singular")
    if not hat.is_proper:
        raise DegenerateError("degenerate interconnection: interconnected network function is improper")
    return rm_to_ss(hat)


def interconnect(T, T_c, omegas=None) -> InterconnectionResult:
    """
    端口互连 T̂ = (T^-1 + T_c^-1)^-1 及其 BSBR 稳定性

    T_c 为 hybrid_compensator 的结果时，同时复核 Δ_r、Δ_l 以及
    T̂ = Nr·Δ_r^-1·Ncl = Ncr·Δ_l^-1·Nl（Δ = I 时 T̂ = Nr·Ncl）。

    Raises:
        ValueError: 维数不匹配
        DegenerateError: 互连不适定
    """
    comp = T_c if isinstance(T_c, CompensatorResult) else None
    Tss = as_statespace(T)
    Tcss = comp.realization if comp else as_statespace(T_c)
    if Tss.shape[0] != Tss.shape[1] or Tss.shape != Tcss.shape:
        raise ValueError(f"dimension mismatch: T is {Tss.shape}, T_c is {Tcss.shape}")
    hat = _joint_realization(Tss, Tcss)
    if hat is None:
        hat = _rational_interconnect(T, T_c if comp is None else comp.T_c)
    cl_poles = hat.poles()
    report = rm_is_stable(hat)
    report.extra["closed_loop_poles"] = _complex_json(cl_poles)
    cl_tol = stability_tol(cl_poles)
    if cl_poles.size and np.any(cl_poles.real >= -cl_tol):
        report.add_note("realization has closed-loop eigenvalues outside the open left half-plane")

    result = InterconnectionResult(realization=hat, report=report, closed_loop_poles=cl_poles)
    if comp is not None:
        _cross_check(result, comp, omegas)
    logger.info("互连完成: %s, 裕度 %.4g", "稳定" if report.is_stable else "不稳定", report.margin)
    return result


def _cross_check(result: InterconnectionResult, comp: CompensatorResult, omegas):
    f = comp.dcf
    result.delta_r_ss = comp.Ncl * f.Dr + comp.Dcl * f.Nr
    result.delta_l_ss = f.Nl * comp.Dcr + f.Dl * comp.Ncr
    grid = omegas if omegas is not None else auto_grid(f.Dr, f.Dl, result.realization)
    That = result.realization.freqresp(grid)
    dr, dl = _delta_defects(f, comp.Q, grid)
    Dr_, Dl_ = dr + np.eye(dr.shape[1]), dl + np.eye(dl.shape[1])
    Nr_, Ncl_ = f.Nr.freqresp(grid), comp.Ncl.freqresp(grid)
    Ncr_, Nl_ = comp.Ncr.freqresp(grid), f.Nl.freqresp(grid)
    res = {
        "delta_r": _identity_residual(dr),
        "delta_l": _identity_residual(dl),
        "right_form": grid_residual(That, Nr_ @ np.linalg.solve(Dr_, Ncl_), grid),
        "left_form": grid_residual(That, Ncr_ @ np.linalg.solve(Dl_, Nl_), grid),
    }
    if res["delta_r"] < IDENTITY_TOL and res["delta_l"] < IDENTITY_TOL:
        res["product_form"] = grid_residual(That, Nr_ @ Ncl_, grid)
    report = result.report
    report.residuals.update(res)
    for key in ("right_form", "left_form", "product_form"):
        if key in res and not res[key] < CROSS_CHECK_TOL:
            report.is_stable = False
            report.add_note(f"{key} cross-check residual {res[key]:.3e} exceeds {CROSS_CHECK_TOL:g}")


def robustness_sample(T, T_c, rel_eps: float, trials: int, seed: int,
                      workers: int = 1) -> StabilityReport:
    """
    邻域鲁棒性抽样：T 的最小实现各元素乘以 (1+δ)，δ ~ U[-rel_eps, rel_eps]

    扰动在主线程按种子依次生成，试验本身可并行；统计结果与执行顺序无关。

    Returns:
        StabilityReport: verdict 为全部试验稳定；extra["trials"] 含存活比例、最差裕度、退化次数
    """
    if not rel_eps >= 0:
        raise ValueError("rel_eps must be non-negative")
    if trials <= 0:
        raise ValueError("trials must be positive")
    comp = T_c if isinstance(T_c, CompensatorResult) else None
    Tcss = comp.realization if comp else as_statespace(T_c)
    nominal = interconnect(T, T_c)
    Tmin = as_statespace(T).minimal()
    rng = np.random.default_rng(seed)
    perturbed = [Tmin.perturbed(rng, rel_eps) for _ in range(trials)]

    def run(Tp: StateSpace):
        hat = _joint_realization(Tp, Tcss)
        if hat is None:
            return 'degenerate', math.nan
        eig = hat.poles()
        if eig.size == 0 or np.all(eig.real < -stability_tol(eig)):
            return 'stable', float(np.min(-eig.real)) if eig.size else math.inf
        rep = hat.stability_report()
        return ('stable' if rep.is_stable else 'unstable'), rep.margin

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, perturbed))
    else:
        outcomes = [run(Tp) for Tp in perturbed]

    stable = sum(1 for o, _ in outcomes if o == 'stable')
    degenerate = sum(1 for o, _ in outcomes if o == 'degenerate')
    margins = [m for o, m in outcomes if o != 'degenerate']
    worst = float(min(margins)) if margins else math.nan
    report = StabilityReport(poles=nominal.report.poles, is_stable=stable == trials,
                             margin=worst)
    report.residuals = {"nominal_margin": nominal.report.margin}
    report.extra["trials"] = {
        "count": trials,
        "stable": stable,
        "unstable": trials - stable - degenerate,
        "degenerate": degenerate,
        "survival": stable / trials,
        "worst_margin": worst if math.isfinite(worst) else None,
        "rel_eps": rel_eps,
        "seed": seed,
    }
    if degenerate:
        report.add_note(f"{degenerate} trials lost D-invertibility")
    logger.info("鲁棒性抽样: %d/%d 稳定, 最差裕度 %.4g", stable, trials, worst)
    return report
