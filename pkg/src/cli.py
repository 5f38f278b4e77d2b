"""
portstab 命令行：factor | compensate | check | interconnect | perturb | opamp-demo | single-port | history

stdout 只输出 JSON（opamp-demo 与 history 输出表格）；日志走 stderr。
"""
import argparse
import json
import logging
import math
import sys
from typing import List, Optional

import numpy as np
import pandas as pd

from coprime import dcf_from_ss, dcf_verify, siso_coprime
from database import Database
from errors import (ImproperError, InadmissibleError, NetworkFileError, PlacementError,
                    PortStabError)
from network_parser import NetworkParser, spec_document
from opamp import RECOVERED_C_X, fit_cx, run_demo
from polyrat import RationalFunction
from ratmat import as_statespace, rm_is_stable
from report_export import ReportExporter
from stabilize import (KINDS, check_single_port, hybrid_compensator, interconnect,
                       robustness_sample, single_port_compensator, youla_identity_residual)
from utils import GridUtils, SettingsUtils, parse_date, setup_logging

logger = logging.getLogger(__name__)

PROG = 'portstab'

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_LOAD = 2
EXIT_IMPROPER = 3
EXIT_PLACEMENT = 4
EXIT_INADMISSIBLE = 5

# 顺序敏感：子类在前
ERROR_EXIT_CODES = (
    (NetworkFileError, EXIT_LOAD),
    (ImproperError, EXIT_IMPROPER),
    (PlacementError, EXIT_PLACEMENT),
    (InadmissibleError, EXIT_INADMISSIBLE),
    (PortStabError, EXIT_FAILED),
    (ValueError, EXIT_LOAD),
    (ZeroDivisionError, EXIT_LOAD),
)


def exit_code_for(exc: BaseException) -> int:
    for cls, code in ERROR_EXIT_CODES:
        if isinstance(exc, cls):
            return code
    raise exc


def _jsonable(obj):
    """numpy 标量/数组、复数与非有限浮点转换为标准 JSON 值"""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [_jsonable(obj.real), _jsonable(obj.imag)]
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


class Float17Encoder(json.JSONEncoder):
    """JSON 编码器：浮点数按 17 位有效数字（format(x, '.17g')）输出，非有限值写 null"""

    def iterencode(self, o, _one_shot=False):
        def floatstr(value):
            if not math.isfinite(value):
                return 'null'
            return format(value, '.17g')

        encoder = (json.encoder.py_encode_basestring_ascii if self.ensure_ascii
                   else json.encoder.py_encode_basestring)
        markers = {} if self.check_circular else None
        return json.encoder._make_iterencode(
            markers, self.default, encoder, self.indent, floatstr,
            self.key_separator, self.item_separator, self.sort_keys,
            self.skipkeys, _one_shot)(o, 0)


def dumps(payload) -> str:
    return json.dumps(_jsonable(payload), indent=2, ensure_ascii=False, cls=Float17Encoder)


def _emit(args, payload: dict):
    text = dumps(payload)
    if getattr(args, 'out', None):
        with open(args.out, 'w', encoding='utf-8') as f:
            f.write(text + '\n')
        logger.info("结果已写入 %s", args.out)
    else:
        sys.stdout.write(text + '\n')


def _record(args, command: str, input_name: str, report=None, summary: Optional[dict] = None):
    if getattr(args, 'no_history', False):
        return
    db = Database(args.db or SettingsUtils.get('history_db'))
    try:
        db.save_run(command, input_name,
                    verdict=None if report is None else report.is_stable,
                    margin=None if report is None else report.margin,
                    summary=_jsonable(summary or (report.to_json() if report else {})))
    finally:
        db.close()


def _grid(args, *systems, fallback: Optional[str] = None):
    """--grid 为 auto 时按 fallback 预设或按极点自动选取"""
    preset = getattr(args, 'grid', 'auto')
    return GridUtils.resolve(*systems, preset=fallback if preset == 'auto' else preset)


def _residual_table(residuals: dict) -> str:
    df = pd.DataFrame([{"residual": k, "value": v} for k, v in residuals.items()])
    return df.to_string(index=False)


# 子命令

def cmd_factor(args) -> int:
    spec = NetworkParser.parse_file(args.input)
    T = spec.network
    Tss = as_statespace(T)
    grid = _grid(args, Tss)
    dcf = dcf_from_ss(Tss, NetworkParser.parse_poles(args.f_poles), NetworkParser.parse_poles(args.l_poles),
                      anchor_gain=args.anchor_gain, omegas=grid)
    report = dcf_verify(dcf, Tss, omegas=grid)
    _emit(args, {"dcf": dcf.to_json(), "report": report.to_json(), "name": spec.name})
    if args.out:
        sys.stdout.write(_residual_table(report.residuals) + '\n')
    _record(args, 'factor', spec.name, report)
    return EXIT_OK if report.is_stable else EXIT_FAILED


def cmd_compensate(args) -> int:
    dcf = NetworkParser.parse_dcf(args.dcf)
    if args.network:
        T = NetworkParser.parse_file(args.network).network
    elif dcf.network is not None:
        T = dcf.network
    else:
        raise NetworkFileError("双互质分解文件不含网络实现，请用 --network 指定 T")
    Q = None if args.q_zero or not args.q else NetworkParser.parse_file(args.q).network
    grid = _grid(args, dcf.Dr, dcf.Dl)
    comp = hybrid_compensator(dcf, Q, omegas=grid)
    inter = interconnect(T, comp, omegas=grid)
    report = inter.report
    _emit(args, {
        "T_c": spec_document(comp.realization, name="T_c"),
        "T_c_entries": comp.T_c.to_json(),
        "T_hat": spec_document(inter.realization.minimal(), name="T_hat"),
        "T_hat_entries": inter.T_hat.to_json(),
        "compensator_residuals": comp.residuals,
        "report": report.to_json(),
    })
    _record(args, 'compensate', args.dcf, report)
    return EXIT_OK if report.is_stable else EXIT_FAILED


def cmd_check(args) -> int:
    spec = NetworkParser.parse_file(args.input)
    report = rm_is_stable(spec.network)
    _emit(args, {"name": spec.name, "report": report.to_json()})
    _record(args, 'check', spec.name, report)
    return EXIT_OK if report.is_stable else EXIT_FAILED


def cmd_interconnect(args) -> int:
    T = NetworkParser.parse_file(args.network).network
    Tc = NetworkParser.parse_file(args.compensator).network
    inter = interconnect(T, Tc, omegas=None)
    report = inter.report
    _emit(args, {
        "T_hat": spec_document(inter.realization.minimal(), name="T_hat"),
        "T_hat_entries": inter.T_hat.to_json(),
        "report": report.to_json(),
    })
    _record(args, 'interconnect', args.network, report)
    return EXIT_OK if report.is_stable else EXIT_FAILED


def cmd_perturb(args) -> int:
    T = NetworkParser.parse_file(args.network).network
    Tc = NetworkParser.parse_file(args.compensator).network
    report = robustness_sample(T, Tc, args.eps, args.trials, args.seed, workers=args.workers)
    _emit(args, {"report": report.to_json()})
    _record(args, 'perturb', args.network, report)
    return EXIT_OK if report.is_stable else EXIT_FAILED


def cmd_opamp_demo(args) -> int:
    cx = args.c_x if args.c_x is not None else RECOVERED_C_X
    fit = None
    if args.fit_cx:
        fit = fit_cx()
        cx = fit[0]
    demo = run_demo(C_x=cx, f_poles=NetworkParser.parse_poles(args.f_poles),
                    l_poles=NetworkParser.parse_poles(args.l_poles), trials=args.trials,
                    rel_eps=args.eps, seed=args.seed, workers=args.workers,
                    omegas=_grid(args, fallback='opamp'))
    if fit is not None:
        demo.rows.insert(0, {"check": "C_x fit (T11 max rel. error)", "value": fit[1],
                             "target": f"C_x = {fit[0]:.6g} F", "pass": fit[1] < 0.02})
    table = ReportExporter.acceptance_frame(demo.rows)
    sys.stdout.write(table.to_string(index=False) + '\n')
    if args.out:
        with open(args.out, 'w', encoding='utf-8') as f:
            f.write(dumps({
                "C_x": cx,
                "rows": demo.rows,
                "dcf": demo.dcf.to_json(include_rational=False),
                "report": demo.interconnection.report.to_json(),
                "robustness": demo.robustness.to_json() if demo.robustness else None,
            }) + '\n')
    if args.excel:
        ReportExporter.export_excel(table, args.excel, sheet_name='验收', status_column='结果')
    if args.pdf:
        passed = sum(1 for r in demo.rows if r["pass"])
        ReportExporter.export_pdf(table, args.pdf, "两级运放镇定验收",
                                  summary={"检查项": len(demo.rows), "通过": passed,
                                           "未通过": len(demo.rows) - passed})
    _record(args, 'opamp-demo', 'opamp2stage', demo.interconnection.report,
            summary={"rows": demo.rows, "passed": demo.passed})
    return EXIT_OK if demo.passed else EXIT_FAILED


def cmd_single_port(args) -> int:
    shift = args.shift if args.shift is not None else SettingsUtils.get('default_shift')
    plant = NetworkParser.parse_scalar(args.plant)
    c = siso_coprime(plant, shift)
    q = RationalFunction(*NetworkParser.parse_scalar(args.q)) if args.q else RationalFunction.constant(0.0)
    Gc = single_port_compensator(c, q, args.kind)
    report = check_single_port(RationalFunction(*plant), Gc, shift)
    _emit(args, {
        "coprime": c.to_json(),
        "G_c": Gc.to_json(),
        "kind": args.kind,
        "youla_residual": youla_identity_residual(c, q),
        "report": report.to_json(),
    })
    _record(args, 'single-port', args.plant, report)
    return EXIT_OK if report.is_stable else EXIT_FAILED


def cmd_history(args) -> int:
    since = None
    if args.since:
        since = parse_date(args.since)
        if since is None:
            raise ValueError(f"日期格式应为 YYYY-MM-DD: {args.since!r}")
    db = Database(args.db or SettingsUtils.get('history_db'))
    try:
        if args.id is not None:
            run = db.get_run(args.id)
            if run is None:
                raise ValueError(f"运行记录不存在: {args.id}")
            _emit(args, run)
            return EXIT_OK
        if args.purge:
            deleted = db.delete_runs(args.command)
            logger.info("已删除 %d 条运行记录", deleted)
            _emit(args, {"deleted": deleted, "command": args.command})
            return EXIT_OK
        records = db.export_runs(command=args.command, limit=args.limit, start_date=since)
        stats = db.get_statistics(args.command)
    finally:
        db.close()
    df = ReportExporter.history_frame(records)
    sys.stdout.write((df.drop(columns=['摘要']).to_string(index=False) if not df.empty else '无运行记录') + '\n')
    if args.export_excel:
        ReportExporter.export_excel(df, args.export_excel, sheet_name='运行记录', status_column='判定')
    if args.export_pdf:
        ReportExporter.export_pdf(df.drop(columns=['摘要']), args.export_pdf, "运行历史",
                                  summary={"总数": stats['total'], "稳定": stats['stable'],
                                           "不稳定": stats['unstable'],
                                           "稳定比例": f"{stats['stable_rate']:.2f}%"})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description="有源多端口网络的互质分解镇定补偿器")
    parser.add_argument('--log-level', default=None, help="日志级别（默认取设置文件）")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--out', help="结果写入文件（默认 stdout）")
    common.add_argument('--no-history', action='store_true', help="不写入运行历史")
    common.add_argument('--db', help="运行历史数据库路径")
    common.add_argument('--grid', choices=('auto', 'unit', 'opamp'), default='auto',
                        help="频率网格：按极点自动选取或使用设置文件中的预设区间")
    sub = parser.add_subparsers(dest='cmd', required=True)

    p = sub.add_parser('factor', parents=[common], help="双互质分解")
    p.add_argument('--in', dest='input', required=True, help="网络描述文件")
    p.add_argument('--f-poles', help="eig(A+BF) 目标，逗号分隔")
    p.add_argument('--l-poles', help="eig(A+LC) 目标，逗号分隔")
    p.add_argument('--anchor-gain', type=float, default=1.0, help="常数平移增益 kappa")
    p.set_defaults(func=cmd_factor)

    p = sub.add_parser('compensate', parents=[common], help="由分解构造补偿器并验证互连")
    p.add_argument('--dcf', required=True, help="factor 的输出文件")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument('--q-zero', action='store_true', help="Q = 0")
    group.add_argument('--q', help="Q 的网络描述文件")
    p.add_argument('--network', help="网络 T（默认取分解文件中的实现）")
    p.set_defaults(func=cmd_compensate)

    p = sub.add_parser('check', parents=[common], help="判定网络函数矩阵是否稳定")
    p.add_argument('--in', dest='input', required=True)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser('interconnect', parents=[common], help="端口互连并判定稳定性")
    p.add_argument('--network', required=True)
    p.add_argument('--compensator', required=True)
    p.set_defaults(func=cmd_interconnect)

    p = sub.add_parser('perturb', parents=[common], help="邻域鲁棒性抽样")
    p.add_argument('--network', required=True)
    p.add_argument('--compensator', required=True)
    p.add_argument('--eps', type=float, default=1e-3)
    p.add_argument('--trials', type=int, default=100)
    p.add_argument('--seed', type=int, default=42)
    p.add_argument('--workers', type=int, default=1)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser('opamp-demo', parents=[common], help="两级运放完整流程与验收表")
    p.add_argument('--c-x', type=float, default=None, help=f"C_x（默认 {RECOVERED_C_X:g} F）")
    p.add_argument('--fit-cx', action='store_true', help="先按印刷 T11 拟合 C_x")
    p.add_argument('--f-poles')
    p.add_argument('--l-poles')
    p.add_argument('--eps', type=float, default=1e-3)
    p.add_argument('--trials', type=int, default=100)
    p.add_argument('--seed', type=int, default=42)
    p.add_argument('--workers', type=int, default=1)
    p.add_argument('--excel', help="验收表导出为 Excel")
    p.add_argument('--pdf', help="验收表导出为 PDF")
    p.set_defaults(func=cmd_opamp_demo)

    p = sub.add_parser('single-port', parents=[common], help="单端口开路/短路镇定")
    p.add_argument('--plant', required=True, help="文件或 'num/den' 系数串（最高次在前）")
    p.add_argument('--q', help="Youla 参数 q，格式同 --plant")
    p.add_argument('--kind', choices=sorted(KINDS), default='open_circuit')
    p.add_argument('--shift', type=float, default=None, help="移位 a > 0")
    p.set_defaults(func=cmd_single_port)

    p = sub.add_parser('history', help="运行历史")
    p.add_argument('--limit', type=int, default=None)
    p.add_argument('--command', help="按子命令筛选")
    p.add_argument('--since', help="只显示该日期（YYYY-MM-DD）之后的记录")
    p.add_argument('--id', type=int, default=None, help="输出指定运行记录的完整 JSON")
    p.add_argument('--purge', action='store_true', help="删除运行记录（可配合 --command）")
    p.add_argument('--db', help="运行历史数据库路径")
    p.add_argument('--export-excel')
    p.add_argument('--export-pdf')
    p.set_defaults(func=cmd_history)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.log_level:
        setup_logging(args.log_level)
    try:
        SettingsUtils.apply_tolerances()
        return args.func(args)
    except (PortStabError, ValueError, ZeroDivisionError) as e:
        code = exit_code_for(e)
        logger.error("%s: %s", type(e).__name__, e)
        sys.stdout.write(json.dumps({"error": str(e), "type": type(e).__name__}, ensure_ascii=False) + '\n')
        return code
