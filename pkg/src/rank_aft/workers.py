"""Thread fan-out with index-ordered results"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def resolve_threads(requested: Optional[int], config=None) -> int:
    """CLI value beats environment, environment beats config file"""
    if requested is not None:
        return max(1, int(requested))
    if config is not None:
        return config.get_threads()
    return 1


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> List[R]:
    """Apply ``fn`` to every item; results come back in input order"""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
