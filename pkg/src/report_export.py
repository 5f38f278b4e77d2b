import logging
import os
from typing import List, Optional

import numpy as np
import pandas as pd
from openpyxl.styles import PatternFill
from reportlab.lib import colors
from reportlab.lib.pagesizes import A4, landscape
from reportlab.lib.styles import getSampleStyleSheet
from reportlab.pdfbase import pdfmetrics
from reportlab.pdfbase.cidfonts import UnicodeCIDFont
from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

logger = logging.getLogger(__name__)

CJK_FONT = 'STSong-Light'

PASS_FILL = PatternFill(start_color='C8E6C9', end_color='C8E6C9', fill_type='solid')
FAIL_FILL = PatternFill(start_color='FFCDD2', end_color='FFCDD2', fill_type='solid')

PASS_WORDS = ('稳定', 'True', '通过')
FAIL_WORDS = ('不稳定', 'False', '未通过')


def _ensure_parent(path):
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)


def _format_cell(value):
    if isinstance(value, (bool, np.bool_)):
        return '通过' if value else '未通过'
    if isinstance(value, (float, np.floating)):
        return f"{value:.6g}"
    return '' if value is None else str(value)


class ReportExporter:
    """把运行历史与验收表导出为 Excel 或 PDF"""

    @staticmethod
    def history_frame(records: List[dict]) -> pd.DataFrame:
        """Database.export_runs 的结果转换为表格，时间列按 UTC 格式化"""
        df = pd.DataFrame(records, columns=['运行ID', '命令', '输入', '判定', '裕度', '摘要', '时间'])
        if not df.empty:
            df['时间'] = pd.to_datetime(df['时间'], unit='s').dt.strftime('%Y-%m-%d %H:%M:%S')
        return df

    @staticmethod
    def acceptance_frame(rows: List[dict]) -> pd.DataFrame:
        """运放流程验收行转换为表格"""
        df = pd.DataFrame(rows, columns=['check', 'value', 'target', 'pass'])
        return df.rename(columns={'check': '检查项', 'value': '数值', 'target': '目标', 'pass': '结果'})

    @staticmethod
    def export_excel(df: pd.DataFrame, file_path: str, sheet_name: str = '记录',
                     status_column: Optional[str] = None):
        """
        导出为Excel

        Args:
            df: 要导出的表格
            file_path: 目标文件
            sheet_name: 工作表名
            status_column: 需要按通过/失败着色的列
        """
        _ensure_parent(file_path)
        out = df.copy()
        if '结果' in out.columns:
            out['结果'] = out['结果'].map(_format_cell)
        try:
            with pd.ExcelWriter(file_path, engine='openpyxl') as writer:
                out.to_excel(writer, index=False, sheet_name=sheet_name)
                sheet = writer.sheets[sheet_name]
                if status_column in out.columns:
                    col = list(out.columns).index(status_column) + 1
                    for row in range(2, len(out) + 2):
                        cell = sheet.cell(row=row, column=col)
                        text = str(cell.value or '')
                        if text in FAIL_WORDS:
                            cell.fill = FAIL_FILL
                        elif text in PASS_WORDS:
                            cell.fill = PASS_FILL
        except (ValueError, KeyError) as e:
            # 着色失败时回退到普通写入
            logger.warning("Excel 着色失败，按普通表格导出: %s", e)
            out.to_excel(file_path, index=False)
        logger.info("已导出 Excel: %s (%d 行)", file_path, len(out))
        return file_path

    @staticmethod
    def export_pdf(df: pd.DataFrame, file_path: str, title: str, summary: Optional[dict] = None):
        """
        导出为PDF（表格形式）

        Args:
            df: 要导出的表格
            file_path: 目标文件
            title: 标题
            summary: 可选的统计信息，显示在表格上方
        """
        _ensure_parent(file_path)
        doc = SimpleDocTemplate(file_path, pagesize=landscape(A4))
        styles = getSampleStyleSheet()
        font = 'Helvetica'
        # 注册中文字体；失败时继续使用默认字体
        try:
            pdfmetrics.registerFont(UnicodeCIDFont(CJK_FONT))
            font = CJK_FONT
            for key in ("Title", "Heading2", "Normal"):
                styles[key].fontName = CJK_FONT
        except Exception as e:
            logger.warning("中文字体注册失败: %s", e)

        elements = [Paragraph(title, styles["Title"]), Spacer(1, 20)]

        if summary:
            stats = Table([list(summary.keys()), [_format_cell(v) for v in summary.values()]])
            stats.setStyle(TableStyle([
                ('BACKGROUND', (0, 0), (-1, 0), colors.grey),
                ('TEXTCOLOR', (0, 0), (-1, 0), colors.whitesmoke),
                ('ALIGN', (0, 0), (-1, -1), 'CENTER'),
                ('BACKGROUND', (0, 1), (-1, -1), colors.beige),
                ('FONTNAME', (0, 0), (-1, -1), font),
                ('GRID', (0, 0), (-1, -1), 1, colors.black),
            ]))
            elements += [stats, Spacer(1, 20)]

        cell_style = styles["Normal"].clone('cell', fontSize=8, leading=10)
        data = [list(df.columns)]
        for row in df.itertuples(index=False):
            data.append([Paragraph(_format_cell(v), cell_style) for v in row])
        table = Table(data, repeatRows=1)
        style = [
            ('BACKGROUND', (0, 0), (-1, 0), colors.grey),
            ('TEXTCOLOR', (0, 0), (-1, 0), colors.whitesmoke),
            ('BOTTOMPADDING', (0, 0), (-1, 0), 12),
            ('FONTNAME', (0, 0), (-1, -1), font),
            ('VALIGN', (0, 0), (-1, -1), 'TOP'),
            ('GRID', (0, 0), (-1, -1), 0.5, colors.black),
        ]
        table.setStyle(TableStyle(style))
        elements.append(table)
        doc.build(elements)
        logger.info("已导出 PDF: %s (%d 行)", file_path, len(df))
        return file_path
