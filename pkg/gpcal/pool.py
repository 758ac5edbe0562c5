"""
Process Pool
Runs independent jobs (REML starts, cross-validation folds) across worker
processes and hands the results back in input order
"""

import os
import logging
import multiprocessing as mp
from typing import Callable, Iterable, List, Optional, TypeVar

from config import Config

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')


def determine_worker_count(requested: Optional[int] = None, job_count: Optional[int] = None) -> int:
    """
    Number of worker processes to use.

    Args:
        requested: Explicit count; Config.N_JOBS when None, all CPUs when <= 0
        job_count: Never spawn more workers than jobs

    Returns:
        Worker count >= 1
    """
    count = Config.N_JOBS if requested is None else int(requested)
    if count <= 0:
        count = os.cpu_count() or 1
    if job_count is not None:
        count = min(count, max(job_count, 1))
    return max(count, 1)


def map_ordered(func: Callable[[T], R], items: Iterable[T], n_jobs: Optional[int] = 1) -> List[R]:
    """
    Apply func to every item, in parallel when n_jobs > 1.

    func must be defined at module level so it can be pickled. The result
    list follows the order of items regardless of scheduling; the first
    exception raised by a job is re-raised here.

    Args:
        func: Job function
        items: Job arguments
        n_jobs: Worker processes (1 runs inline)

    Returns:
        List of results in input order
    """
    items = list(items)
    workers = determine_worker_count(n_jobs, len(items))

    if workers == 1:
        return [func(item) for item in items]

    logger.info(f"Running {len(items)} jobs on {workers} worker processes")
    with mp.get_context('spawn').Pool(processes=workers) as pool:
        return pool.map(func, items, chunksize=1)
