class PortStabError(Exception):
    """端口镇定计算的基础异常"""


class ImproperError(PortStabError, ValueError):
    """非真有理函数或逆非真"""

    def __init__(self, message, entry=None):
        super().__init__(message)
        self.entry = entry


class HiddenModeError(PortStabError, ValueError):
    """分子分母存在公共根（隐藏模态）"""


class PlacementError(PortStabError, ValueError):
    """极点配置失败：不可控/不可观、目标极点非法或数值病态"""


class InadmissibleError(PortStabError, ValueError):
    """参数 q/Q 不可容许：不稳定或在无穷远处有零点"""


class DegenerateError(PortStabError, ValueError):
    """互连退化：端口和恒为零或互连不适定"""


class VerificationError(PortStabError):
    """数值复核的后置条件不成立"""


class NetworkFileError(PortStabError):
    """网络描述文件读取或校验失败"""
