"""Minimal discrete-event engine: tasks with dependencies contending for resources.

A task becomes ready once all its dependencies have finished. Each resource
runs one task at a time and, when idle, starts the ready task with the
smallest ``priority`` tuple. All events sharing a timestamp are applied
before any resource picks new work, so priority rules are not undercut by
event insertion order.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Optional


@dataclass
class Segment:
    label: str
    duration: float


@dataclass
class Task:
    name: str
    resource: str
    segments: list[Segment]
    priority: tuple = ()
    deps: list["Task"] = field(default_factory=list)
    tokens: int = 0
    start: Optional[float] = None
    end: Optional[float] = None
    _waiting: int = 0
    _dependents: list["Task"] = field(default_factory=list)

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.segments)


@dataclass(frozen=True)
class Phase:
    label: str
    resource: str
    start: float
    end: float
    tokens: int = 0

    @property
    def duration(self) -> float:
        return self.end - self.start


class Engine:
    def __init__(self) -> None:
        self.now = 0.0
        self.tasks: list[Task] = []
        self.phases: list[Phase] = []
        self._events: list = []
        self._seq = itertools.count()
        self._ready: dict[str, list] = {}
        self._busy: dict[str, bool] = {}

    def add(
        self,
        name: str,
        resource: str,
        segments,
        deps=(),
        priority: tuple = (),
        tokens: int = 0,
    ) -> Task:
        segs = [s if isinstance(s, Segment) else Segment(*s) for s in segments]
        task = Task(name, resource, segs, tuple(priority), list(deps), tokens)
        task._waiting = len(task.deps)
        for d in task.deps:
            d._dependents.append(task)
        self.tasks.append(task)
        self._ready.setdefault(resource, [])
        self._busy.setdefault(resource, False)
        return task

    def _make_ready(self, task: Task) -> None:
        heapq.heappush(self._ready[task.resource], (task.priority, next(self._seq), task))

    def _dispatch(self) -> None:
        for res in sorted(self._ready):
            queue = self._ready[res]
            if self._busy[res] or not queue:
                continue
            _, _, task = heapq.heappop(queue)
            self._busy[res] = True
            task.start = self.now
            t = self.now
            for seg in task.segments:
                self.phases.append(Phase(seg.label, res, t, t + seg.duration, task.tokens))
                t += seg.duration
            heapq.heappush(self._events, (t, next(self._seq), task))

    def run(self) -> float:
        for task in self.tasks:
            if task._waiting == 0:
                self._make_ready(task)
        self._dispatch()
        while self._events:
            t = self._events[0][0]
            self.now = t
            while self._events and self._events[0][0] == t:
                _, _, task = heapq.heappop(self._events)
                task.end = t
                self._busy[task.resource] = False
                for dep in task._dependents:
                    dep._waiting -= 1
                    if dep._waiting == 0:
                        self._make_ready(dep)
            self._dispatch()
        unfinished = [t.name for t in self.tasks if t.end is None]
        if unfinished:
            raise RuntimeError(f"deadlock: tasks never ran: {unfinished[:5]}")
        return max((t.end for t in self.tasks), default=0.0)
