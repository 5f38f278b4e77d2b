import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
from numpy.polynomial import polynomial as npp
from scipy import linalg

logger = logging.getLogger(__name__)

# 数值容差，启动时可按设置文件覆盖（见 set_tolerances）
#   stab_rel: tol_stab = stab_rel·(1 + max|Re p|)
#   gcd_rel: 近似公因式，分子、分母根的相对匹配距离
#   rank_rel: 最小实现中秩判定的相对阈值
TOLERANCES = {'stab_rel': 1e-9, 'gcd_rel': 1e-6, 'rank_rel': 1e-8}
# 重根聚类距离（重根的数值分裂远大于单根误差）
CLUSTER_REL_TOL = 1e-4
# 归一化坐标下可忽略的首项系数
CHOP_REL_TOL = 1e-12

Number = Union[int, float, complex, np.number]


def set_tolerances(stab_rel: Optional[float] = None, gcd_rel: Optional[float] = None,
                   rank_rel: Optional[float] = None):
    """覆盖数值容差；None 表示保持原值"""
    for key, value in (('stab_rel', stab_rel), ('gcd_rel', gcd_rel), ('rank_rel', rank_rel)):
        if value is None:
            continue
        value = float(value)
        if not 0.0 < value < 1.0:
            raise ValueError(f"{key} must lie in (0, 1), got {value!r}")
        TOLERANCES[key] = value


def stability_tol(poles: Iterable[complex], rel_tol: Optional[float] = None) -> float:
    """按极点尺度计算稳定性阈值"""
    if rel_tol is None:
        rel_tol = TOLERANCES['stab_rel']
    re = [abs(complex(p).real) for p in poles]
    return rel_tol * (1.0 + (max(re) if re else 0.0))


def _pow10(x: float) -> float:
    if not np.isfinite(x) or x <= 0:
        return 1.0
    return 10.0 ** round(math.log10(x))


class Polynomial:
    """
    实系数多项式，系数按 s 的升幂排列（coeffs[k] 为 s^k 的系数）

    零多项式的规范形式为空系数序列，次数为 -inf。
    """

    __slots__ = ('coeffs',)

    def __init__(self, coeffs: Union[Sequence[float], 'Polynomial', Number] = ()):
        if isinstance(coeffs, Polynomial):
            c = coeffs.coeffs.copy()
        else:
            c = np.atleast_1d(np.asarray(coeffs, dtype=float)).copy()
        if c.ndim != 1:
            raise ValueError("多项式系数必须是一维序列")
        if not np.all(np.isfinite(c)):
            raise ValueError("多项式系数含有非有限值")
        self.coeffs = np.trim_zeros(c, 'b')

    @classmethod
    def zero(cls) -> 'Polynomial':
        return cls(())

    @classmethod
    def one(cls) -> 'Polynomial':
        return cls([1.0])

    @classmethod
    def s(cls) -> 'Polynomial':
        return cls([0.0, 1.0])

    @classmethod
    def from_roots(cls, roots: Iterable[complex], gain: float = 1.0) -> 'Polynomial':
        """由根构造多项式；复根须成对共轭"""
        r = np.asarray(list(roots), dtype=complex)
        if r.size == 0:
            return cls([gain])
        c = npp.polyfromroots(r)
        return cls(gain * np.real(c))

    @classmethod
    def shift_power(cls, a: float, k: int) -> 'Polynomial':
        """(s + a)^k"""
        return cls.from_roots([-a] * k)

    @property
    def is_zero(self) -> bool:
        return self.coeffs.size == 0

    @property
    def degree(self) -> float:
        return float('-inf') if self.is_zero else self.coeffs.size - 1

    @property
    def leading(self) -> float:
        return 0.0 if self.is_zero else float(self.coeffs[-1])

    def __call__(self, s):
        if self.is_zero:
            return np.zeros_like(np.asarray(s, dtype=complex))
        return npp.polyval(s, self.coeffs)

    def __add__(self, other):
        other = as_polynomial(other)
        return Polynomial(npp.polyadd(self._c(), other._c()))

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(-self.coeffs)

    def __sub__(self, other):
        return self + (-as_polynomial(other))

    def __rsub__(self, other):
        return as_polynomial(other) - self

    def __mul__(self, other):
        other = as_polynomial(other)
        if self.is_zero or other.is_zero:
            return Polynomial.zero()
        return Polynomial(npp.polymul(self.coeffs, other.coeffs))

    __rmul__ = __mul__

    def __pow__(self, k: int):
        out = Polynomial.one()
        for _ in range(int(k)):
            out = out * self
        return out

    def __eq__(self, other):
        try:
            other = as_polynomial(other)
        except (TypeError, ValueError):
            return NotImplemented
        return self.coeffs.shape == other.coeffs.shape and bool(np.all(self.coeffs == other.coeffs))

    def __hash__(self):
        return hash(tuple(self.coeffs))

    def __repr__(self):
        return f"Polynomial({self.coeffs.tolist()})"

    def _c(self):
        return self.coeffs if self.coeffs.size else np.zeros(1)

    def scaled(self, w0: float) -> 'Polynomial':
        """代入 s = w0·s'，返回关于 s' 的多项式"""
        if self.is_zero:
            return Polynomial.zero()
        return Polynomial(self.coeffs * w0 ** np.arange(self.coeffs.size))

    def unscaled(self, w0: float) -> 'Polynomial':
        """scaled 的逆变换"""
        return self.scaled(1.0 / w0)

    def natural_scale(self) -> float:
        """根模长的几何平均（取10的整数次幂），用于频率归一化"""
        c = self.coeffs
        if c.size < 2:
            return 1.0
        nz = int(np.argmax(c != 0))
        c = c[nz:]
        n = c.size - 1
        if n == 0:
            return 1.0
        return _pow10(abs(c[0] / c[-1]) ** (1.0 / n))

    def chop(self, rel_tol: float = CHOP_REL_TOL, w0: Optional[float] = None) -> 'Polynomial':
        """
        丢弃数值上已消失的首项系数

        Args:
            rel_tol: 相对阈值，相对于 s = w0·s' 坐标下的最大系数
            w0: 比较所用的频率尺度；为 None 时直接比较原始系数

        Returns:
            Polynomial: 截断后的多项式
        """
        if self.is_zero:
            return self
        sc = np.abs(self.scaled(1.0 if w0 is None else w0).coeffs)
        big = sc.max()
        keep = sc.size
        while keep > 0 and sc[keep - 1] <= rel_tol * big:
            keep -= 1
        if keep == sc.size:
            return self
        return Polynomial(self.coeffs[:keep])

    def to_json(self) -> list:
        return [float(x) for x in self.coeffs]

    @classmethod
    def from_json(cls, data) -> 'Polynomial':
        return cls(data)


def as_polynomial(value) -> Polynomial:
    if isinstance(value, Polynomial):
        return value
    if isinstance(value, (int, float, np.integer, np.floating)):
        return Polynomial([float(value)])
    if isinstance(value, (list, tuple, np.ndarray)):
        return Polynomial(value)
    raise TypeError(f"无法转换为多项式: {type(value).__name__}")


def poly_roots(p: Polynomial) -> np.ndarray:
    """
    计算多项式全部复根（含重数）

    先提取 s=0 处的根，再按根尺度归一化频率，对平衡后的伴随矩阵求特征值。

    Args:
        p: 非零多项式

    Returns:
        np.ndarray: 复根数组，按实部、虚部排序；常数多项式返回空数组
    """
    p = as_polynomial(p)
    if p.is_zero:
        raise ValueError("roots of zero polynomial undefined")
    c = p.coeffs
    nz = int(np.argmax(c != 0))
    c = c[nz:]
    n = c.size - 1
    zeros = np.zeros(nz, dtype=complex)
    if n == 0:
        return zeros
    w0 = _pow10(abs(c[0] / c[-1]) ** (1.0 / n))
    cs = c * w0 ** np.arange(n + 1)
    cs = cs / cs[-1]
    if n == 1:
        roots = np.array([-cs[0]], dtype=complex)
    else:
        comp = np.zeros((n, n))
        comp[1:, :-1] = np.eye(n - 1)
        comp[:, -1] = -cs[:-1]
        balanced, _ = linalg.matrix_balance(comp)
        roots = linalg.eigvals(balanced)
    return np.sort_complex(np.concatenate([zeros, roots * w0]))


def _clusters(roots: np.ndarray, rel_tol: float) -> List[List[int]]:
    """按相对距离将根聚类（单链接）"""
    groups: List[List[int]] = []
    for i, r in enumerate(roots):
        for g in groups:
            if any(abs(r - roots[j]) <= rel_tol * max(abs(r), abs(roots[j])) for j in g):
                g.append(i)
                break
        else:
            groups.append([i])
    return groups


def common_roots(a: np.ndarray, b: np.ndarray, rel_tol: Optional[float] = None):
    """
    找出两组根中在相对容差内重合的根

    Returns:
        tuple: (a 中被匹配的下标列表, b 中被匹配的下标列表)
    """
    if a.size == 0 or b.size == 0:
        return [], []
    if rel_tol is None:
        rel_tol = TOLERANCES['gcd_rel']
    ga, gb = _clusters(a, CLUSTER_REL_TOL), _clusters(b, CLUSTER_REL_TOL)
    ia, ib = [], []
    used_b = set()
    for cluster_a in ga:
        ca = a[cluster_a].mean()
        for k, cluster_b in enumerate(gb):
            if k in used_b:
                continue
            cb = b[cluster_b].mean()
            scale = max(abs(ca), abs(cb))
            if abs(ca - cb) <= rel_tol * scale or (scale == 0.0):
                m = min(len(cluster_a), len(cluster_b))
                ia.extend(cluster_a[:m])
                ib.extend(cluster_b[:m])
                used_b.add(k)
                break
    return ia, ib


class RationalFunction:
    """
    实系数有理函数 num/den

    构造时自动规范化：截断消失的首项系数、按容差约去公因式、分母首一。
    reduce=False 时保留公因式（用于检测隐藏模态）。
    """

    __slots__ = ('num', 'den')

    def __init__(self, num=0.0, den=1.0, reduce: bool = True):
        num = as_polynomial(num)
        den = as_polynomial(den)
        if den.is_zero:
            raise ZeroDivisionError("denominator is the zero polynomial")
        w0 = den.natural_scale()
        den = den.chop(w0=w0)
        num = num.chop(w0=w0) if not num.is_zero else num
        if num.is_zero:
            self.num, self.den = Polynomial.zero(), Polynomial.one()
            return
        if reduce and num.degree >= 1 and den.degree >= 1:
            num, den = _cancel_common(num, den)
        lead = den.leading
        self.num = Polynomial(num.coeffs / lead)
        self.den = Polynomial(den.coeffs / lead)

    @classmethod
    def constant(cls, value: float) -> 'RationalFunction':
        return cls(float(value), 1.0)

    @classmethod
    def from_zpk(cls, zeros, poles, gain: float) -> 'RationalFunction':
        return cls(Polynomial.from_roots(zeros, gain), Polynomial.from_roots(poles))

    @property
    def is_zero(self) -> bool:
        return self.num.is_zero

    @property
    def is_proper(self) -> bool:
        return self.num.degree <= self.den.degree

    @property
    def is_biproper(self) -> bool:
        return not self.num.is_zero and self.num.degree == self.den.degree

    @property
    def is_constant(self) -> bool:
        return self.num.degree <= 0 and self.den.degree == 0

    @property
    def relative_degree(self) -> float:
        return self.den.degree - self.num.degree

    def poles(self) -> np.ndarray:
        return poly_roots(self.den)

    def zeros(self) -> np.ndarray:
        if self.num.is_zero:
            return np.zeros(0, dtype=complex)
        return poly_roots(self.num)

    def value_at_infinity(self) -> float:
        """真有理函数在 s→∞ 的极限（直通项）"""
        if not self.is_proper:
            raise ValueError("improper function has no finite value at infinity")
        if self.num.degree < self.den.degree:
            return 0.0
        return self.num.leading / self.den.leading

    def __call__(self, s):
        return self.num(s) / self.den(s)

    evaluate = __call__

    def inverse(self) -> 'RationalFunction':
        if self.is_zero:
            raise ZeroDivisionError("division by the zero function")
        return RationalFunction(self.den, self.num)

    def __add__(self, other):
        other = as_rational(other)
        if self.den == other.den:
            return RationalFunction(self.num + other.num, self.den)
        return RationalFunction(self.num * other.den + other.num * self.den, self.den * other.den)

    __radd__ = __add__

    def __neg__(self):
        return RationalFunction(-self.num, self.den)

    def __sub__(self, other):
        return self + (-as_rational(other))

    def __rsub__(self, other):
        return as_rational(other) - self

    def __mul__(self, other):
        other = as_rational(other)
        return RationalFunction(self.num * other.num, self.den * other.den)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_rational(other)
        if other.is_zero:
            raise ZeroDivisionError("division by the zero function")
        return RationalFunction(self.num * other.den, self.den * other.num)

    def __rtruediv__(self, other):
        return as_rational(other) / self

    def __eq__(self, other):
        try:
            other = as_rational(other)
        except TypeError:
            return NotImplemented
        return self.num == other.num and self.den == other.den

    def __hash__(self):
        return hash((self.num, self.den))

    def __repr__(self):
        return f"RationalFunction(num={self.num.coeffs.tolist()}, den={self.den.coeffs.tolist()})"

    def to_json(self) -> dict:
        return {"num": self.num.to_json(), "den": self.den.to_json()}

    @classmethod
    def from_json(cls, data) -> 'RationalFunction':
        if isinstance(data, (int, float)):
            return cls.constant(data)
        try:
            return cls(Polynomial(data["num"]), Polynomial(data["den"]))
        except KeyError as e:
            raise ValueError(f"有理函数缺少字段: {e}")


def _cancel_common(num: Polynomial, den: Polynomial):
    zn, zd = poly_roots(num), poly_roots(den)
    ia, ib = common_roots(zn, zd)
    if not ia:
        return num, den
    logger.debug("约去 %d 个公共根", len(ia))
    keep_n = np.delete(zn, ia)
    keep_d = np.delete(zd, ib)
    return (Polynomial.from_roots(keep_n, num.leading),
            Polynomial.from_roots(keep_d, den.leading))


def as_rational(value) -> RationalFunction:
    if isinstance(value, RationalFunction):
        return value
    if isinstance(value, Polynomial):
        return RationalFunction(value, 1.0)
    if isinstance(value, (int, float, np.integer, np.floating)):
        return RationalFunction.constant(float(value))
    raise TypeError(f"无法转换为有理函数: {type(value).__name__}")


_OPS = {
    'add': lambda a, b: a + b,
    'sub': lambda a, b: a - b,
    'mul': lambda a, b: a * b,
    'div': lambda a, b: a / b,
}


def rf_arith(a: RationalFunction, b: RationalFunction, op: str) -> RationalFunction:
    """有理函数四则运算，结果为规范形式"""
    try:
        fn = _OPS[op]
    except KeyError:
        raise ValueError(f"unknown operation {op!r}")
    return fn(as_rational(a), as_rational(b))


@dataclass
class StabilityVerdict:
    is_stable: bool
    poles: List[complex] = field(default_factory=list)
    margin: float = math.inf
    proper: bool = True
    note: str = ''

    def __bool__(self):
        return self.is_stable


def rf_is_stable(f: RationalFunction, rel_tol: Optional[float] = None) -> StabilityVerdict:
    """
    判断有理函数是否属于稳定真有理函数代数 𝕊

    Returns:
        StabilityVerdict: 判定结果、极点、稳定裕度 min(-Re p)
    """
    f = as_rational(f)
    poles = f.poles()
    tol = stability_tol(poles, rel_tol)
    margin = float(np.min(-poles.real)) if poles.size else math.inf
    proper = f.is_proper
    poles_ok = bool(np.all(poles.real < -tol))
    note = ''
    if poles_ok and not proper:
        note = 'stable poles, improper'
    elif not poles_ok:
        note = 'pole in closed right half-plane'
    return StabilityVerdict(proper and poles_ok, [complex(p) for p in poles], margin, proper, note)


def rf_is_unit(f: RationalFunction, rel_tol: Optional[float] = None) -> bool:
    """f 与 1/f 同属 𝕊：双真，极点与零点均在开左半平面"""
    f = as_rational(f)
    if not f.is_biproper:
        return False
    for roots in (f.poles(), f.zeros()):
        if not np.all(roots.real < -stability_tol(roots, rel_tol)):
            return False
    return True
