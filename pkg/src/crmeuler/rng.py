"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, stream_id)``; streams
with different ids are statistically independent, and a given id always
produces the same numbers.  Monte Carlo drivers assign one stream per block
of samples, so results do not depend on how blocks are spread over workers.
"""

import numpy as np

BLOCK_SIZE = 2000


def stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream_id)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def blocks(n: int, block_size: int = BLOCK_SIZE):
    """Split ``n`` samples into ``(stream_id, size)`` blocks."""
    out = []
    start = 0
    sid = 0
    while start < n:
        size = min(block_size, n - start)
        out.append((sid, size))
        start += size
        sid += 1
    return out


RERUN_OFFSET = 1 << 40


def map_blocks(func, tasks, workers: int = 1):
    """``[func(*t) for t in tasks]``, optionally over a process pool.

    Output order follows ``tasks``, so reductions over the result do not
    depend on the worker count.
    """
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [func(*t) for t in tasks]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(func, *zip(*tasks)))
