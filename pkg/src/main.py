import os
import sys

from cli import main as cli_main
from utils import setup_logging


def main():
    """程序入口函数"""
    # 确保数据目录存在（设置文件与运行历史）
    os.makedirs('data', exist_ok=True)
    setup_logging()
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
