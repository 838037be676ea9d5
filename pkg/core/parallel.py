"""
并行与性能监控
线程池按输入顺序归并结果，保证结果与工作线程数无关
"""

import functools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def map_ordered(func: Callable[[T], R], items: Iterable[T], max_workers: int = 4) -> List[R]:
    """
    并行执行并按输入顺序返回

    Args:
        func: 纯函数
        items: 任务列表
        max_workers: 最大线程数，≤ 1 时串行执行

    Returns:
        与 items 顺序一致的结果列表
    """
    items = list(items)
    if max_workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(max_workers, len(items))) as executor:
        return list(executor.map(func, items))


def performance_monitor(func):
    """性能监控装饰器"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        start_time = time.time()
        try:
            result = func(*args, **kwargs)
            logger.debug("[性能] %s 执行时间: %.3f秒", func.__name__, time.time() - start_time)
            return result
        except Exception as e:
            logger.debug("[性能] %s 执行失败，耗时: %.3f秒，错误: %s", func.__name__, time.time() - start_time, e)
            raise
    return wrapper
