# src/utils/concurrency.py
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

from tqdm import tqdm

T = TypeVar('T')
R = TypeVar('R')


def map_in_order(fn: Callable[[T], R], items: Iterable[T], threads: int = 1, desc: str = "") -> List[R]:
    """
    Applies `fn` to every item, optionally on a thread pool.

    Results come back in submission order, so the output never depends on the
    number of threads.
    """
    items = list(items)
    progress = tqdm(total=len(items), desc=desc, disable=None, leave=False)
    try:
        if threads <= 1 or len(items) <= 1:
            results = []
            for item in items:
                results.append(fn(item))
                progress.update()
            return results
        with ThreadPoolExecutor(max_workers=threads) as executor:
            futures = [executor.submit(fn, item) for item in items]
            results = []
            for future in futures:
                results.append(future.result())
                progress.update()
            return results
    finally:
        progress.close()
