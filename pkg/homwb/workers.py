"""
Runs independent Monte Carlo / histogram blocks on worker threads.

Blocks are queued and dispatched at most `max_running_tasks` at a time;
results come back ordered by block index, so the worker count never changes
what a run produces.
"""
import asyncio
import threading
from dataclasses import dataclass, field
from functools import wraps
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from homwb.logger import logger
from homwb.types import BlockHandlerType


@dataclass
class BlockParams:
    index: int
    seed: int = 0
    start_ps: int = 0
    stop_ps: int = 0
    data: Any = None
    cancelled: threading.Event = field(default_factory=threading.Event, repr=False, compare=False)

    def rng(self) -> np.random.Generator:
        """
        Block k of a run seeded with s draws from SeedSequence(s, spawn_key=(k,)).
        """
        return np.random.default_rng(np.random.SeedSequence(entropy=self.seed, spawn_key=(self.index,)))


@dataclass
class BlockTask:
    """
    A queued block. `timeout_after` bounds the await on the worker thread,
    not the thread itself: a thread cannot be interrupted, so on timeout or
    cancellation the runner sets `params.cancelled` and a handler that wants
    to stop early checks it between steps. A handler that never checks runs
    to completion in the background and its result is discarded.
    """
    handler: BlockHandlerType
    params: BlockParams
    timeout_after: Optional[float] = None
    _attempts: int = field(default=0, init=False, repr=False)

    def increment_attempts(self):
        self._attempts += 1

    def get_attempts(self):
        return self._attempts


def create_task(handler: BlockHandlerType, params: BlockParams, **kwargs) -> BlockTask:
    return BlockTask(handler, params, **kwargs)


def cancel_if_shutting_down(return_value: Any = None) -> Any:
    def decorator(func: Callable):
        @wraps(func)
        async def wrapper(self, *args, **kwargs):
            if self._is_shutting_down:
                return return_value
            return await func(self, *args, **kwargs)

        return wrapper
    return decorator


class BlockRunner:

    def __init__(self, max_running_tasks: int = 1):
        assert isinstance(max_running_tasks, int) and not isinstance(max_running_tasks, bool), \
            "max_running_tasks must be an integer"
        assert max_running_tasks >= 1, "max_running_tasks must be minimum 1"

        self.max_running_tasks = max_running_tasks

        self._is_shutting_down = False
        self._tasks_map: Dict[int, BlockTask] = {}
        self._results: Dict[int, Any] = {}
        self._task_queue = asyncio.Queue()
        self._on_going_tasks = 0
        self._lock = asyncio.Lock()

    async def shutdown(self) -> None:
        self._is_shutting_down = True
        logger.debug("shutting down block runner")
        async with self._lock:
            while not self._task_queue.empty():
                index = await self._task_queue.get()
                logger.debug(f"dropping queued block: {index}")
                self._task_queue.task_done()

    @cancel_if_shutting_down(return_value=None)
    async def add_tasks(self, tasks: List[BlockTask]) -> None:
        async with self._lock:
            logger.debug(f"adding blocks: {len(tasks)}")
            for task in tasks:
                index = task.params.index
                assert index not in self._tasks_map and index not in self._results, f"duplicate block index {index}"
                self._tasks_map[index] = task
                await self._task_queue.put(index)

    @cancel_if_shutting_down(return_value=[])
    async def _get_tasks_to_process(self) -> List[int]:
        to_process = []
        async with self._lock:
            for _ in range(self.max_running_tasks - self._on_going_tasks):
                if self._task_queue.empty():
                    break
                index = await self._task_queue.get()
                to_process.append(index)
                self._task_queue.task_done()
                self._on_going_tasks += 1

        return to_process

    async def _run_task(self, index: int) -> None:
        task = self._tasks_map[index]
        task.increment_attempts()
        try:
            logger.debug(f"running block: {index}")
            async with asyncio.timeout(task.timeout_after):
                self._results[index] = await asyncio.to_thread(task.handler, task.params)
            logger.debug(f"finished block: {index}")
        except (TimeoutError, asyncio.CancelledError):
            task.params.cancelled.set()
            logger.debug(f"block {index} timed out or was cancelled, flagged its thread to stop")
            raise
        finally:
            del self._tasks_map[index]
            async with self._lock:
                self._on_going_tasks -= 1

    async def run_all(self) -> List[Any]:
        """
        Dispatches queued blocks until the queue drains. The first failing
        block stops dispatching; its exception propagates once the blocks
        already running have finished.
        """
        running = set()
        error: Optional[BaseException] = None
        while True:
            for index in await self._get_tasks_to_process():
                running.add(asyncio.create_task(self._run_task(index)))
            if not running:
                break
            done, running = await asyncio.wait(running, return_when=asyncio.FIRST_COMPLETED)
            for finished in done:
                if finished.exception() is not None and error is None:
                    error = finished.exception()
                    logger.debug(f"block failed, stopping dispatch: {error}")
                    await self.shutdown()

        if error is not None:
            raise error
        return [self._results[index] for index in sorted(self._results)]


def run_blocks(handler: BlockHandlerType, params: List[BlockParams], max_running_tasks: int = 1) -> List[Any]:
    """
    Synchronous entry point: runs handler over every block and returns the
    results ordered by block index.
    """
    async def _run() -> List[Any]:
        runner = BlockRunner(max_running_tasks)
        await runner.add_tasks([create_task(handler, block) for block in params])
        return await runner.run_all()

    return asyncio.run(_run())
