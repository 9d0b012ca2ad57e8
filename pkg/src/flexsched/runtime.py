"""In-process coupling: typed messages, barrier-synchronized rounds, event profiling.

A coordinator fans one immutable payload out to all agents, the agents'
computations run on a bounded thread pool, and the round returns once every
agent has reported.  Every computation is recorded as an event so the
critical path of each round can be reconstructed afterwards.
"""
from __future__ import annotations

import csv
import os
import pickle
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

COORDINATOR = "coordinator"


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PriceBroadcast:
    prices: np.ndarray
    imbalance: np.ndarray
    rho: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "prices", _frozen(self.prices))
        object.__setattr__(self, "imbalance", _frozen(self.imbalance))


@dataclass(frozen=True)
class DispatchReport:
    series: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "series", _frozen(self.series))


@dataclass(frozen=True)
class BidSubmission:
    curve: Any


@dataclass(frozen=True)
class ClearingNotice:
    hour: int
    price: float
    accepted: dict


@dataclass(frozen=True)
class Envelope:
    sender: str
    round: int
    payload: Any


class AgentFailure(RuntimeError):
    def __init__(self, agent: str, round_: int, cause: BaseException):
        super().__init__(f"agent {agent!r} failed in round {round_}: {cause!r}")
        self.agent = agent
        self.round = round_
        self.cause = cause


@dataclass(frozen=True)
class Event:
    round: int
    agent: str
    phase: str
    start: float
    end: float
    bytes_in: int = 0
    bytes_out: int = 0
    received_from: str = COORDINATOR
    received_round: int = -1

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass
class EventTrace:
    events: list[Event] = field(default_factory=list)

    def __len__(self):
        return len(self.events)

    def rounds(self) -> list[int]:
        return sorted({e.round for e in self.events})

    def in_round(self, r: int) -> list[Event]:
        return [e for e in self.events if e.round == r]

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "agent", "phase", "start", "end", "duration", "bytes_in", "bytes_out"])
            for e in self.events:
                w.writerow([e.round, e.agent, e.phase, e.start, e.end, e.duration, e.bytes_in, e.bytes_out])
        return path


def _size(obj) -> int:
    try:
        return len(pickle.dumps(obj, protocol=pickle.HIGHEST_PROTOCOL))
    except Exception:
        return 0


def default_threads() -> int:
    return os.cpu_count() or 1


class Runtime:
    """Coordinator side of the coupling; owns the worker pool and the trace."""

    def __init__(self, threads: int | None = None, measure_payloads: bool = True):
        self.threads = max(1, int(threads or default_threads()))
        self.trace = EventTrace()
        self.round = 0
        self.measure_payloads = measure_payloads
        self._pool = ThreadPoolExecutor(max_workers=self.threads) if self.threads > 1 else None
        self._t0 = time.perf_counter()

    def close(self):
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def clock(self) -> float:
        return time.perf_counter() - self._t0

    def execute_round(self, payload, agents: Sequence[str], work: Callable[[str, Envelope], Any],
                      phase: str = "work") -> dict[str, Any]:
        """Run ``work(agent, envelope)`` for every agent; results come back keyed in sorted agent-id order."""
        self.round += 1
        r = self.round
        env = Envelope(COORDINATOR, r, payload)
        size_in = _size(payload) if self.measure_payloads else 0
        order = sorted(agents)
        if len(set(order)) != len(order):
            raise ValueError("duplicate agent ids in round")

        def task(agent):
            start = self.clock()
            try:
                out = work(agent, env)
            except BaseException as exc:  # noqa: BLE001 - attributed and re-raised
                return agent, None, exc, start, self.clock()
            return agent, out, None, start, self.clock()

        if self._pool is None:
            done = [task(a) for a in order]
        else:
            done = list(self._pool.map(task, order))
        failures = [(a, exc) for a, _, exc, _, _ in done if exc is not None]
        if failures:
            agent, exc = failures[0]
            raise AgentFailure(agent, r, exc) from exc
        reports = {}
        for agent, out, _, start, end in done:
            size_out = _size(out) if self.measure_payloads else 0
            self.trace.events.append(Event(r, agent, phase, start, end, size_in, size_out, COORDINATOR, r))
            reports[agent] = out
        return reports

    @contextmanager
    def coordinator_phase(self, phase: str):
        """Times a coordinator-side step (clearing, residuals) as its own round."""
        self.round += 1
        start = self.clock()
        try:
            yield
        finally:
            self.trace.events.append(Event(self.round, COORDINATOR, phase, start, self.clock()))


def execute_round(payload, agents: Sequence[str], work: Callable[[str, Envelope], Any],
                  threads: int | None = None) -> tuple[dict[str, Any], EventTrace]:
    """One-shot round with a private pool; see :meth:`Runtime.execute_round`."""
    with Runtime(threads) as rt:
        reports = rt.execute_round(payload, agents, work)
    return reports, rt.trace


@dataclass
class RoundProfile:
    round: int
    phase: str
    agents: int
    critical_path: float
    slowest_agent: str
    slowest_time: float
    busy: float


@dataclass
class ProfileSummary:
    rounds: list[RoundProfile]
    busy: dict[str, float]
    idle: dict[str, float]

    @property
    def total_critical_path(self) -> float:
        return sum(r.critical_path for r in self.rounds)

    def phase_totals(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for r in self.rounds:
            out[r.phase] = out.get(r.phase, 0.0) + r.critical_path
        return out

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "phase", "agents", "critical_path", "slowest_agent", "slowest_time", "busy"])
            for r in self.rounds:
                w.writerow([r.round, r.phase, r.agents, r.critical_path, r.slowest_agent, r.slowest_time, r.busy])
        agg = path.with_name(path.stem + "_agents.csv")
        with open(agg, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["agent", "busy", "idle"])
            for a in sorted(self.busy):
                w.writerow([a, self.busy[a], self.idle[a]])
        return path


def profile_report(trace: EventTrace) -> ProfileSummary:
    """Per-round critical path (first start to last end), slowest agent, busy/idle split.

    An agent's idle time in a round is the round's span minus its own busy time.
    """
    if not trace.events:
        raise ValueError("empty trace")
    rounds = []
    busy: dict[str, float] = {}
    idle: dict[str, float] = {}
    for r in trace.rounds():
        ev = trace.in_round(r)
        span = max(e.end for e in ev) - min(e.start for e in ev)
        slow = max(ev, key=lambda e: (e.duration, e.agent))
        rounds.append(RoundProfile(r, ev[0].phase, len(ev), span, slow.agent, slow.duration,
                                   sum(e.duration for e in ev)))
        for e in ev:
            busy[e.agent] = busy.get(e.agent, 0.0) + e.duration
            idle[e.agent] = idle.get(e.agent, 0.0) + span - e.duration
    return ProfileSummary(rounds, busy, idle)
