import os
import sys
import subprocess

BASE_DIR = os.path.dirname(os.path.abspath(__file__))

def check_requirements():
    """检查依赖是否已安装"""
    try:
        import numpy
        import scipy
        import control
        import pandas
        import reportlab
        return True
    except ImportError:
        return False

def install_requirements():
    """安装依赖"""
    print("正在安装依赖...", file=sys.stderr)
    subprocess.check_call([sys.executable, "-m", "pip", "install", "-r", os.path.join(BASE_DIR, "requirements.txt")])
    print("依赖安装完成", file=sys.stderr)

def main():
    """主函数：参数原样传给 src/main.py"""
    # 检查依赖
    if not check_requirements():
        print("检测到缺少必要依赖，将自动安装...", file=sys.stderr)
        install_requirements()

    sys.exit(subprocess.call([sys.executable, os.path.join(BASE_DIR, "src", "main.py"), *sys.argv[1:]]))

if __name__ == "__main__":
    main()
