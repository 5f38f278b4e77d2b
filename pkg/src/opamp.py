"""
两级运放混合矩阵 T 的构造、印刷参考数据以及完整镇定流程
"""
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from coprime import Dcf, _match_error, dcf_from_ss, dcf_verify
from polyrat import Polynomial, RationalFunction
from ratmat import RationalMatrix, StabilityReport, log_grid, opamp_grid, rm_to_ss
from stabilize import (CompensatorResult, InterconnectionResult, hybrid_compensator, interconnect,
                       robustness_sample)

logger = logging.getLogger(__name__)

# 由印刷 T11 的极点 s = -1/(C_x·r_1) = -2e14 反推
RECOVERED_C_X = 5e-14

MATCH_TOL = 0.02
PHASE_TOL_DEG = 2.0

UNSTABLE_QUADRATIC = (1.91e15, -1.338e4, 1.0)


@dataclass
class OpAmpParams:
    """小信号等效电路参数；r_1、r_2 为零表示未正则化"""
    g_m1: float
    g_m2: float
    g_1: float
    g_2: float
    C_1: float
    C_2: float
    C_gd: float
    C_x: float
    r_1: float = 0.1
    r_2: float = 0.1

    def __post_init__(self):
        for name in ('C_1', 'C_2', 'C_gd', 'C_x'):
            if not getattr(self, name) > 0:
                raise ValueError(f"capacitance {name} must be positive")
        for name in ('g_m1', 'g_m2', 'g_1', 'g_2'):
            if not getattr(self, name) > 0:
                raise ValueError(f"conductance {name} must be positive")
        for name in ('r_1', 'r_2'):
            if not getattr(self, name) >= 0:
                raise ValueError(f"resistance {name} must be non-negative")

    def to_json(self) -> dict:
        return {k: float(v) for k, v in asdict(self).items()}

    @classmethod
    def from_json(cls, data) -> 'OpAmpParams':
        names = [f.name for f in fields(cls)]
        missing = [n for n in names if n not in data and n not in ('r_1', 'r_2')]
        if missing:
            raise ValueError(f"运放参数缺少字段: {', '.join(missing)}")
        return cls(**{n: float(data[n]) for n in names if n in data})


def default_params(C_x: float, r_1: float = 0.1, r_2: float = 0.1) -> OpAmpParams:
    """
    电路参数默认值；C_x 未在参数表中给出，必须显式传入

    Args:
        C_x: 输入端电容，通常取 RECOVERED_C_X
    """
    return OpAmpParams(g_m1=1.8e-3, g_m2=4e-5, g_1=1.25e-6, g_2=3.3333e-6,
                       C_1=0.5e-12, C_2=68.48e-12, C_gd=0.05e-12, C_x=C_x, r_1=r_1, r_2=r_2)


def _d1(p: OpAmpParams) -> Polynomial:
    a2 = (p.C_1 + p.C_2) * p.C_gd + p.C_1 * p.C_2
    a1 = p.C_2 * p.g_1 + p.C_1 * p.g_2 + (p.g_m2 - p.g_m1 + p.g_1 + p.g_2) * p.C_gd
    a0 = p.g_m1 * p.g_m2 + p.g_1 * p.g_2
    return Polynomial([a0, a1, a2])


def build_T(p: OpAmpParams, regularized: bool = True) -> RationalMatrix:
    """
    两级运放的 2x2 混合矩阵

    regularized=False 时端口电阻取零，T11 分子次数高于分母（非真）。

    Raises:
        ValueError: regularized=True 但 r_1 或 r_2 为零
    """
    if regularized and not (p.r_1 > 0 and p.r_2 > 0):
        raise ValueError("regularized build requires r_1, r_2 > 0")
    r1, r2 = (p.r_1, p.r_2) if regularized else (0.0, 0.0)
    s = Polynomial.s()
    D1 = _d1(p)
    gm = Polynomial([-p.g_m2, p.C_gd])                      # sC_gd - g_m2
    out2 = Polynomial([p.g_m2 + p.g_2, p.C_2])              # sC_2 + g_m2 + g_2
    port = Polynomial([1.0, p.C_x * r1])                    # sC_x r_1 + 1
    fb = Polynomial([-1.0 + p.g_m2 * r2, -p.C_gd * r2])     # -1 + (g_m2 - sC_gd) r_2
    N2 = (Polynomial([1.0 + p.g_1 * r2, (p.C_1 + p.C_gd) * r2]) * out2
          - Polynomial([p.g_1 - p.g_m1, p.C_1]) * fb)
    sCx = s * p.C_x

    T11 = RationalFunction(sCx * (D1 + gm * p.g_m1), port * D1)
    T12 = RationalFunction(-sCx * (fb * D1 + N2 * gm), port * out2 * D1)
    T21 = RationalFunction(out2 * -p.g_m1, D1)
    T22 = RationalFunction(N2, D1)
    T = RationalMatrix([[T11, T12], [T21, T22]])
    if not regularized:
        logger.warning("未正则化的运放 T 含非真元素: %s",
                       ", ".join(f"T{i + 1}{j + 1}" for i, j in T.improper_entries()))
    return T


def _quad() -> Polynomial:
    return Polynomial(UNSTABLE_QUADRATIC)


def printed_reference_T() -> RationalMatrix:
    """正则化 T 的印刷因式形式（系数按原样保留三到四位有效数字）"""
    s = Polynomial.s()
    q = _quad()
    p14 = s + 2e14
    T11 = RationalFunction(s * (s + 2.327e6) * (s + 4.751e4) * 10.0, p14 * q, reduce=False)
    T12 = RationalFunction(s * (s + 8.25e7) * 1.326e11, p14 * q, reduce=False)
    T21 = RationalFunction((s + 6.328e5) * -3.2705e9, q, reduce=False)
    T22 = RationalFunction((s + 1.83e13) * (s - 2.545e7) * 0.1, q, reduce=False)
    return RationalMatrix([[T11, T12], [T21, T22]])


def printed_pole_targets():
    """从印刷 D_r、X_l 的分母读出的配置目标 (f_poles, l_poles)"""
    f_poles = np.array([-1e10, -2e10, -3e12], dtype=complex)
    l_poles = np.array([-1e11, -2e12, -3e13], dtype=complex)
    return f_poles, l_poles


def _rf(gain: float, num_factors, den_factors) -> RationalFunction:
    num = Polynomial([gain])
    for f in num_factors:
        num = num * f
    den = Polynomial.one()
    for f in den_factors:
        den = den * f
    return RationalFunction(num, den, reduce=False)


def printed_reference_factors() -> Dict[str, RationalMatrix]:
    """印刷的 D_r、N_r、X_l、Y_l、T_c（仅供展示与极点比对，不参与验收判定）"""
    s = Polynomial.s()
    f1, f2, f3 = s + 1e10, s + 2e10, s + 3e12
    l1, l2, l3 = s + 1e11, s + 2e12, s + 3e13
    tc = s + 4.104e7
    Dr = RationalMatrix([
        [_rf(1.0, [s + 2e14, s + 1.29e11, s + 3.87e8], [f1, f2, f3]),
         _rf(-3.15e10, [s + 1.17e14, s + 4.55e8], [f1, f2, f3])],
        [_rf(-1.68e13, [s + 8.89e9, s - 9.43e7], [f1, f2, f3]),
         _rf(1.0, [s + 9e9, s - 9.03e7], [f1, f2])],
    ])
    Nr = RationalMatrix([
        [_rf(10.0, [s + 1.28e11, s + 3.155e8, s - 0.3748], [f1, f2, f3]),
         _rf(-1.83e11, [s - 0.4025, s + 3.67e8], [f1, f2, f3])],
        [_rf(-1.68e12, [s + 3.68e8, s - 0.4025], [f1, f2, f3]),
         _rf(0.1, [s + 1.83e13, s + 1.12e10], [f1, f2])],
    ])
    Xl = RationalMatrix([
        [_rf(1.41e13, [s + 4.36e14, s + 2.19e11], [l1, l2, l3]),
         _rf(-5.48e15, [s + 2e7], [l1, l3])],
        [_rf(2.02e14, [s + 1.98e14, s + 2.09e11], [l1, l2, l3]),
         _rf(-3.28e16, [s + 1.92e7], [l1, l3])],
    ])
    Yl = RationalMatrix([
        [_rf(1.0, [s - 3.06e14, Polynomial([1.22e23, 2.76e11, 1.0])], [l1, l2, l3]),
         _rf(5.48e14, [s + 1.83e13], [l1, l3])],
        [_rf(-2e15, [Polynomial([1.11e23, 2.6e11, 1.0])], [l1, l2, l3]),
         _rf(1.0, [s + 3.28e15, s + 1.82e13], [l1, l3])],
    ])
    Tc = RationalMatrix([
        [_rf(-5.05e-14, [Polynomial([1.15e19, 1.05e9, 1.0])], [tc]),
         _rf(8.46e-15, [s + 2e12, s + 1.92e10], [tc])],
        [_rf(-3.12e-16, [s + 3.51e12, s - 2.97e12], [tc]),
         _rf(2.17e-17, [s - 4.19e15, s + 2e13], [tc])],
    ])
    return {"Dr": Dr, "Nr": Nr, "Xl": Xl, "Yl": Yl, "Tc": Tc}


def _pole_set_error(actual: np.ndarray, printed: RationalMatrix) -> float:
    """实际极点集合与印刷因子各元素分母根的并集之间的相对匹配误差"""
    target = []
    for _, e in printed:
        for p in e.poles():
            if not any(abs(p - q) <= 1e-9 * abs(q) for q in target):
                target.append(p)
    target = np.asarray(target, dtype=complex)
    if target.size != np.asarray(actual).size:
        return float('inf')
    return _match_error(np.asarray(actual, dtype=complex), target)


def reference_grid() -> np.ndarray:
    """ω = 10^3 … 10^12，每十倍频 4 点"""
    return log_grid(1e3, 1e12, 37)


def match_errors(T: RationalMatrix, ref: RationalMatrix, omegas=None) -> Dict[str, Dict[str, float]]:
    """
    逐元素比对：最大相对幅值误差与最大相位误差（度）

    Returns:
        dict: {"T11": {"magnitude": ..., "phase_deg": ...}, ...}
    """
    grid = reference_grid() if omegas is None else np.asarray(omegas, dtype=float)
    RT, RR = T.freqresp(grid), ref.freqresp(grid)
    out = {}
    for (i, j), _ in ref:
        a, b = RT[:, i, j], RR[:, i, j]
        mag = np.abs(np.abs(a) - np.abs(b)) / np.maximum(np.abs(b), 1e-300)
        phase = np.degrees(np.abs(np.angle(a / b)))
        out[f"T{i + 1}{j + 1}"] = {"magnitude": float(np.max(mag)), "phase_deg": float(np.max(phase))}
    return out


def fit_cx(params: Optional[OpAmpParams] = None, omegas=None):
    """
    以 log10 C_x 为变量，最小化 T11 与印刷参考在网格上的对数幅值误差

    Returns:
        tuple: (C_x, T11 最大相对幅值误差)
    """
    base = params or default_params(RECOVERED_C_X)
    grid = reference_grid() if omegas is None else np.asarray(omegas, dtype=float)
    ref = printed_reference_T()[0, 0](1j * grid)

    def build(cx):
        p = OpAmpParams(**{**asdict(base), "C_x": cx})
        return build_T(p, True)[0, 0](1j * grid)

    def objective(log_cx):
        val = build(10.0 ** log_cx)
        return float(np.sum((np.log(np.abs(val)) - np.log(np.abs(ref))) ** 2))

    res = minimize_scalar(objective, bounds=(-16.0, -10.0), method='bounded',
                          options={'xatol': 1e-10})
    cx = float(10.0 ** res.x)
    val = build(cx)
    err = float(np.max(np.abs(np.abs(val) - np.abs(ref)) / np.abs(ref)))
    logger.info("C_x 拟合: %.6g F, T11 最大相对误差 %.3g", cx, err)
    return cx, err


@dataclass
class OpAmpDemo:
    """完整流程的中间结果与验收表"""
    T: RationalMatrix
    dcf: Dcf
    dcf_report: StabilityReport
    compensator: CompensatorResult
    interconnection: InterconnectionResult
    robustness: Optional[StabilityReport] = None
    rows: List[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r["pass"] for r in self.rows)


def _row(check: str, value, target: str, ok: bool) -> dict:
    return {"check": check, "value": value, "target": target, "pass": bool(ok)}


def run_demo(C_x: float = RECOVERED_C_X, f_poles: Optional[Sequence[complex]] = None,
             l_poles: Optional[Sequence[complex]] = None, trials: int = 100,
             rel_eps: float = 1e-3, seed: int = 42, workers: int = 1, omegas=None) -> OpAmpDemo:
    """
    运放完整流程：构造 T → 双互质分解 → Q=0 补偿器 → 互连 → 邻域抽样

    trials 为 0 时跳过邻域抽样；omegas 缺省时取运放网格。
    """
    fp_default, lp_default = printed_pole_targets()
    fp = fp_default if f_poles is None else f_poles
    lp = lp_default if l_poles is None else l_poles
    params = default_params(C_x)
    T = build_T(params, True)
    grid = opamp_grid() if omegas is None else np.asarray(omegas, dtype=float)
    rows = []

    errs = match_errors(T, printed_reference_T())
    worst_mag = max(e["magnitude"] for e in errs.values())
    worst_phase = max(e["phase_deg"] for e in errs.values())
    rows.append(_row("T vs printed (magnitude)", worst_mag, f"< {MATCH_TOL:g}", worst_mag < MATCH_TOL))
    rows.append(_row("T vs printed (phase, deg)", worst_phase, f"< {PHASE_TOL_DEG:g}",
                     worst_phase < PHASE_TOL_DEG))

    pair = unstable_pole_pair(T)
    re = float(np.max(pair.real)) if pair.size else float('nan')
    rows.append(_row("unstable pole Re", re, "6.69e3 ± 1%", abs(re - 6.69e3) <= 0.01 * 6.69e3))

    dcf = dcf_from_ss(T, fp, lp, omegas=grid)
    dcf_report = dcf_verify(dcf, T, omegas=grid)
    rows.append(_row("DCF block identity", dcf_report.residuals["block_identity"], "< 1e-06",
                     dcf_report.residuals["block_identity"] < 1e-6))
    rows.append(_row("DCF members in M(S)", dcf_report.residuals["members_in_MS"], "True",
                     dcf_report.residuals["members_in_MS"]))
    printed = printed_reference_factors()
    dr_err = _pole_set_error(dcf.Dr.minimal().poles(), printed["Dr"])
    xl_err = _pole_set_error(dcf.Xl.minimal().poles(), printed["Xl"])
    rows.append(_row("D_r poles vs printed", dr_err, "< 1e-06", dr_err < 1e-6))
    rows.append(_row("X_l poles vs printed", xl_err, "< 1e-06", xl_err < 1e-6))

    comp = hybrid_compensator(dcf, None, omegas=grid)
    inter = interconnect(T, comp, omegas=grid)
    res = inter.report.residuals
    rows.append(_row("Delta_r = I", res["delta_r"], "< 1e-06", res["delta_r"] < 1e-6))
    rows.append(_row("Delta_l = I", res["delta_l"], "< 1e-06", res["delta_l"] < 1e-6))
    rows.append(_row("T_hat stable (margin)", inter.report.margin, "> 0", inter.report.is_stable))

    robust = None
    if trials > 0:
        robust = robustness_sample(T, comp, rel_eps, trials, seed, workers=workers)
        survival = robust.extra["trials"]["survival"]
        rows.append(_row(f"survival (eps={rel_eps:g}, n={trials})", survival, "1.0", survival == 1.0))

    demo = OpAmpDemo(T=T, dcf=dcf, dcf_report=dcf_report, compensator=comp, interconnection=inter,
                     robustness=robust, rows=rows)
    logger.info("运放流程: %s", "通过" if demo.passed else "未通过")
    return demo


def unstable_pole_pair(T: RationalMatrix) -> np.ndarray:
    """T 的右半平面极点（McMillan）"""
    poles = rm_to_ss(T).poles()
    return poles[poles.real > 0]


def opamp_spec(C_x: float = RECOVERED_C_X, regularized: bool = True) -> dict:
    """opamp2stage 网络描述文件的 payload"""
    payload = default_params(C_x).to_json()
    payload["regularized"] = regularized
    return payload
