"""
命令行应用
多人均值-方差博弈的纳什均衡分类、求解与验证

用法:
    python app.py classify --config games/baseline.json
    python app.py verify --config baseline --profile report.json
"""

import os
import sys

# 添加项目路径
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from core.cli import main

if __name__ == "__main__":
    main()
