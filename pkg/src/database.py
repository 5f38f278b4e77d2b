import json
import logging
import math
import os
import sqlite3
from datetime import datetime
from typing import Optional

logger = logging.getLogger(__name__)


class Database:
    """运行历史数据库，封装所有与SQLite相关的操作"""

    def __init__(self, db_path='data/portstab.db'):
        """初始化数据库连接"""
        folder = os.path.dirname(db_path)
        if folder:
            os.makedirs(folder, exist_ok=True)

        self.db_path = db_path
        self.conn = None
        self.cursor = None
        self.connect()
        self.create_tables()

    def connect(self):
        """连接到数据库"""
        self.conn = sqlite3.connect(self.db_path)
        # 行工厂返回可按列名访问的结果
        self.conn.row_factory = sqlite3.Row
        self.cursor = self.conn.cursor()

    def close(self):
        """关闭数据库连接"""
        if self.conn:
            self.conn.close()
            self.conn = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def create_tables(self):
        """创建运行记录表"""
        self.cursor.execute('''
        CREATE TABLE IF NOT EXISTS runs (
            run_id INTEGER PRIMARY KEY AUTOINCREMENT,
            command TEXT NOT NULL,
            input_name TEXT,
            verdict INTEGER,
            margin REAL,
            summary_json TEXT,
            timestamp INTEGER NOT NULL
        )
        ''')
        self.conn.commit()
        self._migrate_add_input_name()

    def _migrate_add_input_name(self):
        """为早期版本的 runs 表补上 input_name 列"""
        try:
            self.cursor.execute("PRAGMA table_info(runs)")
            columns = self.cursor.fetchall()
            if not any(col['name'] == 'input_name' for col in columns):
                self.cursor.execute("ALTER TABLE runs ADD COLUMN input_name TEXT")
                self.conn.commit()
        except sqlite3.Error as e:
            logger.warning("迁移运行记录表失败: %s", e)

    def save_run(self, command, input_name='', verdict=None, margin=None, summary=None):
        """
        保存一次命令运行的结果

        Args:
            command: 子命令名（factor、compensate ...）
            input_name: 输入文件或网络名称
            verdict: 稳定性判定，None 表示该命令无判定
            margin: 稳定裕度，非有限值存为 NULL
            summary: 可 JSON 序列化的摘要

        Returns:
            int: 记录的ID
        """
        timestamp = int(datetime.now().timestamp())
        margin = float(margin) if margin is not None and math.isfinite(margin) else None
        self.cursor.execute('''
        INSERT INTO runs (command, input_name, verdict, margin, summary_json, timestamp)
        VALUES (?, ?, ?, ?, ?, ?)
        ''', (command, input_name, None if verdict is None else int(bool(verdict)), margin,
              json.dumps(summary or {}, ensure_ascii=False), timestamp))
        self.conn.commit()
        return self.cursor.lastrowid

    def get_runs(self, command=None, verdict=None, start_date=None, end_date=None,
                 limit: Optional[int] = None):
        """
        获取运行记录，支持多种筛选条件

        Args:
            command: 可选，按子命令筛选
            verdict: 可选，按判定筛选
            start_date: 可选，开始日期（时间戳）
            end_date: 可选，结束日期（时间戳）
            limit: 可选，最多返回条数

        Returns:
            list: 运行记录列表，新记录在前
        """
        query = "SELECT * FROM runs"
        conditions = []
        params = []

        if command:
            conditions.append("command = ?")
            params.append(command)

        if verdict is not None:
            conditions.append("verdict = ?")
            params.append(int(bool(verdict)))

        if start_date:
            conditions.append("timestamp >= ?")
            params.append(start_date)

        if end_date:
            conditions.append("timestamp <= ?")
            params.append(end_date)

        if conditions:
            query += " WHERE " + " AND ".join(conditions)

        query += " ORDER BY timestamp DESC, run_id DESC"
        if limit:
            query += " LIMIT ?"
            params.append(int(limit))

        self.cursor.execute(query, params)
        return [self._row_to_run(row) for row in self.cursor.fetchall()]

    @staticmethod
    def _row_to_run(row):
        run = dict(row)
        run['summary'] = json.loads(run.pop('summary_json') or '{}')
        if run['verdict'] is not None:
            run['verdict'] = bool(run['verdict'])
        return run

    def get_run(self, run_id):
        """获取指定ID的运行记录，不存在时返回 None"""
        self.cursor.execute('SELECT * FROM runs WHERE run_id = ?', (run_id,))
        row = self.cursor.fetchone()
        return self._row_to_run(row) if row else None

    def get_statistics(self, command=None):
        """
        按判定统计运行次数

        Returns:
            dict: total、stable、unstable 与稳定比例
        """
        where = " WHERE command = ?" if command else ""
        params = [command] if command else []
        self.cursor.execute(f"SELECT COUNT(*) AS total FROM runs{where}", params)
        total = self.cursor.fetchone()['total']
        stats = {'total': total}
        for label, value in (('stable', 1), ('unstable', 0)):
            cond = f"{where} AND verdict = ?" if where else " WHERE verdict = ?"
            self.cursor.execute(f"SELECT COUNT(*) AS count FROM runs{cond}", params + [value])
            stats[label] = self.cursor.fetchone()['count']
        judged = stats['stable'] + stats['unstable']
        stats['stable_rate'] = (stats['stable'] / judged) * 100 if judged else 0
        return stats

    def delete_runs(self, command=None):
        """
        删除运行记录；command 为空时清空全部

        Returns:
            int: 删除的条数
        """
        try:
            if command:
                self.cursor.execute('DELETE FROM runs WHERE command = ?', (command,))
            else:
                self.cursor.execute('DELETE FROM runs')
            deleted = self.cursor.rowcount
            self.conn.commit()
            return deleted
        except sqlite3.Error as e:
            self.conn.rollback()
            raise RuntimeError(f"删除运行记录失败: {e}")

    def export_runs(self, command=None, limit=None, start_date=None):
        """
        导出运行记录（列名为中文，供 Excel/PDF 导出）

        Returns:
            list: 字典列表
        """
        result = []
        for run in self.get_runs(command=command, start_date=start_date, limit=limit):
            result.append({
                '运行ID': run['run_id'],
                '命令': run['command'],
                '输入': run['input_name'],
                '判定': {True: '稳定', False: '不稳定', None: ''}[run['verdict']],
                '裕度': run['margin'],
                '摘要': json.dumps(run['summary'], ensure_ascii=False),
                '时间': run['timestamp'],
            })
        return result
