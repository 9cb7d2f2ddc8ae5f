"""Head node plus workers exchanging messages, one worker per group of pairs.

Each state-action pair is owned by one worker, which keeps that pair's
constraint value up to date with O(1) work per message and draws next-state
samples from the pair's own stream. The head only ever sees constraint
values, one sample per non-productive iteration, and broadcasts the step
type. Channels are FIFO in both directions and the head waits for every
constraint value before deciding (a barrier per iteration).

Two transports run the same head logic:

``inline``
    a deterministic single-threaded scheduler that delivers each queued
    message in order;
``threads``
    one OS thread per worker connected by ``queue.Queue`` channels.

Both produce a trace bit-identical to :func:`amdp_solver.solve` with the same
seed, whatever the number of workers.
"""

from __future__ import annotations

import math
import queue
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import streams
from .amdp_solver import (
    AmdpProgram,
    AmdpSolution,
    AmdpTrace,
    DualEstimate,
    PrimalPoint,
    _Averager,
    corrected_update,
    nonproductive_move,
    nonproductive_update,
    productive_move,
    productive_update,
    schedule,
)
from .core_solver import SolverConfig
from .errors import NoProductiveStepsError, ProtocolError

# --- wire vocabulary ------------------------------------------------------------

Correction = Optional[tuple[float, tuple[tuple[int, float], ...]]]


@dataclass(frozen=True)
class CheckConstraints:
    k: int


@dataclass(frozen=True)
class ConstraintValue:
    pair: int
    c: float
    k: int


@dataclass(frozen=True)
class SampleRequest:
    pair: int


@dataclass(frozen=True)
class SampleReply:
    pair: int
    s: int


@dataclass(frozen=True)
class ProductiveStep:
    correction: Correction = None


@dataclass(frozen=True)
class NonProductiveStep:
    i: int
    s: int
    correction: Correction = None


@dataclass(frozen=True)
class Shutdown:
    pass


Message = Union[
    CheckConstraints, ConstraintValue, SampleRequest, SampleReply, ProductiveStep, NonProductiveStep, Shutdown
]

# message tag: 7 variants
TAG_BITS = 3
FLOAT_BITS = 64


def state_bits(num_states: int) -> int:
    return max(1, math.ceil(math.log2(num_states)))


def message_bits(msg: Message, num_states: int) -> int:
    """Wire size estimate: a tag plus the payload."""
    sb = state_bits(num_states)
    if isinstance(msg, ConstraintValue):
        return TAG_BITS + FLOAT_BITS
    if isinstance(msg, SampleReply):
        return TAG_BITS + sb
    if isinstance(msg, (ProductiveStep, NonProductiveStep)):
        bits = TAG_BITS + (2 * sb if isinstance(msg, NonProductiveStep) else 0)
        if msg.correction is not None:
            dv, dh = msg.correction
            bits += FLOAT_BITS + len(dh) * (sb + FLOAT_BITS)
        return bits
    return TAG_BITS


# --- worker --------------------------------------------------------------------

IDLE, CHECKED, STOPPED = "idle", "checked", "stopped"


@dataclass
class WorkerState:
    """State of one pair's node."""

    pair: int
    state: int  # the pair's MDP state
    row: np.ndarray  # empirical transition row
    cdf: np.ndarray  # true transition row, cumulative
    c: float
    eta: float
    rng: np.random.Generator
    k: int = 0
    phase: str = IDLE

    @classmethod
    def create(cls, program: AmdpProgram, pair: int, eta: float, seed: int) -> "WorkerState":
        mdp = program.mdp
        return cls(
            pair=pair,
            state=int(mdp.pair_state[pair]),
            row=program.model.rows[pair],
            cdf=streams.make_cdf(mdp.transitions[pair]),
            c=float(mdp.rewards[pair]),
            eta=eta,
            rng=streams.stream(seed, streams.TRANSITION, pair),
        )


def worker_handle(ws: WorkerState, msg: Message) -> tuple[WorkerState, Optional[Message]]:
    """Apply one message to a pair's node; returns the (mutated) state and any reply."""
    if ws.phase == STOPPED:
        raise ProtocolError(f"pair {ws.pair}: message {msg!r} after shutdown")
    if isinstance(msg, Shutdown):
        ws.phase = STOPPED
        return ws, None
    if isinstance(msg, CheckConstraints):
        if ws.phase != IDLE:
            raise ProtocolError(f"pair {ws.pair}: second constraint check in iteration {ws.k}")
        if msg.k != ws.k:
            raise ProtocolError(f"pair {ws.pair}: head at iteration {msg.k}, worker at {ws.k}")
        ws.phase = CHECKED
        return ws, ConstraintValue(ws.pair, ws.c, ws.k)
    if ws.phase != CHECKED:
        raise ProtocolError(f"pair {ws.pair}: {type(msg).__name__} before the constraint check")
    if isinstance(msg, SampleRequest):
        if msg.pair != ws.pair:
            raise ProtocolError(f"pair {ws.pair}: sample request addressed to pair {msg.pair}")
        return ws, SampleReply(ws.pair, streams.sample_categorical(ws.cdf, ws.rng))
    if isinstance(msg, ProductiveStep):
        if msg.correction is None:
            ws.c = productive_update(ws.c, ws.eta)
        else:
            ws.c = corrected_update(ws.c, ws.row, ws.state, *msg.correction)
    elif isinstance(msg, NonProductiveStep):
        if msg.correction is None:
            ws.c = nonproductive_update(ws.c, ws.eta, ws.row, ws.state, msg.i, msg.s)
        else:
            ws.c = corrected_update(ws.c, ws.row, ws.state, *msg.correction)
    else:
        raise ProtocolError(f"pair {ws.pair}: unexpected message {msg!r}")
    ws.k += 1
    ws.phase = IDLE
    return ws, None


class WorkerNode:
    """A worker owning one or more pairs; broadcasts apply to each owned pair."""

    def __init__(self, index: int, pairs: list[WorkerState]):
        self.index = index
        self.pairs = {ws.pair: ws for ws in pairs}

    def handle(self, msg: Message) -> list[Message]:
        if isinstance(msg, SampleRequest):
            targets = [self.pairs[msg.pair]] if msg.pair in self.pairs else []
            # a node that does not own the pair still has to flag the misroute
            if not targets:
                raise ProtocolError(f"worker {self.index} does not own pair {msg.pair}")
        else:
            targets = list(self.pairs.values())
        replies = []
        for ws in targets:
            _, reply = worker_handle(ws, msg)
            if reply is not None:
                replies.append(reply)
        return replies


# --- communication accounting -----------------------------------------------------


@dataclass
class CommStats:
    num_states: int
    per_iteration: list[int] = field(default_factory=list)
    total_messages: int = 0
    total_bits: int = 0
    sample_messages: int = 0
    sample_bits: int = 0
    rounds_per_iteration: list[int] = field(default_factory=list)

    def record(self, msg: Message, copies: int = 1) -> None:
        bits = message_bits(msg, self.num_states)
        self.per_iteration[-1] += copies
        self.total_messages += copies
        self.total_bits += copies * bits
        if isinstance(msg, SampleReply):
            self.sample_messages += copies
            self.sample_bits += copies * (bits - TAG_BITS)

    def new_iteration(self) -> None:
        self.per_iteration.append(0)
        self.rounds_per_iteration.append(0)

    def round(self) -> None:
        self.rounds_per_iteration[-1] += 1

    def to_json(self) -> dict:
        per = np.asarray(self.per_iteration)
        return {
            "total_messages": int(self.total_messages),
            "total_bits": int(self.total_bits),
            "sample_messages": int(self.sample_messages),
            "sample_payload_bits": int(self.sample_bits),
            "bits_per_sample": state_bits(self.num_states),
            "iterations": int(per.size),
            "max_messages_per_iteration": int(per.max()) if per.size else 0,
            "min_messages_per_iteration": int(per.min()) if per.size else 0,
            "max_rounds_per_iteration": int(max(self.rounds_per_iteration, default=0)),
        }


# --- transports -------------------------------------------------------------------


class WorkerFailure(RuntimeError):
    """A worker raised or stopped answering; the run is aborted."""


class InlineTransport:
    """Deterministic scheduler: every send is queued and delivered in order."""

    def __init__(self, nodes: list[WorkerNode]):
        self.nodes = nodes
        self.inboxes = [deque() for _ in nodes]
        self.replies: deque = deque()

    def send(self, node: int, msg: Message) -> None:
        self.inboxes[node].append(msg)

    def _pump(self) -> None:
        for node, inbox in zip(self.nodes, self.inboxes):
            while inbox:
                msg = inbox.popleft()
                try:
                    self.replies.extend(node.handle(msg))
                except ProtocolError as exc:
                    raise WorkerFailure(f"worker {node.index}: {exc}") from exc

    def receive(self, count: int) -> list[Message]:
        self._pump()
        if len(self.replies) < count:
            raise WorkerFailure(f"expected {count} replies, got {len(self.replies)}")
        return [self.replies.popleft() for _ in range(count)]

    def close(self) -> None:
        self._pump()


class _Failed:
    def __init__(self, node: int, error: BaseException):
        self.node, self.error = node, error


class ThreadTransport:
    """One thread per worker node; FIFO queues in both directions."""

    def __init__(self, nodes: list[WorkerNode], timeout: float = 30.0):
        self.nodes = nodes
        self.timeout = timeout
        self.inboxes = [queue.SimpleQueue() for _ in nodes]
        self.replies: queue.SimpleQueue = queue.SimpleQueue()
        self.threads = [
            threading.Thread(target=self._serve, args=(n, inbox), daemon=True, name=f"worker-{n.index}")
            for n, inbox in zip(nodes, self.inboxes)
        ]
        for t in self.threads:
            t.start()

    def _serve(self, node: WorkerNode, inbox: queue.SimpleQueue) -> None:
        while True:
            msg = inbox.get()
            try:
                for reply in node.handle(msg):
                    self.replies.put(reply)
            except Exception as exc:  # report and stop this actor
                self.replies.put(_Failed(node.index, exc))
                return
            if isinstance(msg, Shutdown):
                return

    def send(self, node: int, msg: Message) -> None:
        self.inboxes[node].put(msg)

    def receive(self, count: int) -> list[Message]:
        out = []
        for _ in range(count):
            try:
                item = self.replies.get(timeout=self.timeout)
            except queue.Empty:
                raise WorkerFailure(f"timed out after {self.timeout}s waiting for {count - len(out)} replies")
            if isinstance(item, _Failed):
                raise WorkerFailure(f"worker {item.node} failed: {item.error}") from item.error
            out.append(item)
        return out

    def close(self) -> None:
        for t in self.threads:
            t.join(timeout=self.timeout)


# --- head ------------------------------------------------------------------------


def assign_pairs(a_tot: int, num_workers: int) -> list[list[int]]:
    """Round-robin ownership: pair p goes to worker p mod num_workers."""
    return [list(range(w, a_tot, num_workers)) for w in range(num_workers)]


@dataclass(frozen=True, eq=False)
class ParallelResult:
    solution: AmdpSolution
    comm: CommStats

    @property
    def point(self) -> PrimalPoint:
        return self.solution.point

    @property
    def dual(self) -> DualEstimate:
        return self.solution.dual

    @property
    def trace(self) -> Optional[AmdpTrace]:
        return self.solution.trace


def run_parallel(
    program: AmdpProgram,
    cfg: SolverConfig,
    num_workers: int,
    mode: str = "threads",
    timeout: float = 30.0,
    timing: bool = False,
) -> ParallelResult:
    """Run the scheme as a head node talking to ``num_workers`` worker nodes."""
    mdp = program.mdp
    a_tot, S, N, B = mdp.a_tot, mdp.num_states, cfg.iterations, program.box_radius
    if not 1 <= num_workers <= a_tot:
        raise ValueError(f"num_workers must lie in 1..{a_tot}")
    sched = schedule(program, cfg)
    eta, threshold = sched.stepsize, sched.threshold

    owner = np.empty(a_tot, dtype=np.int64)
    nodes = []
    for w, pairs in enumerate(assign_pairs(a_tot, num_workers)):
        owner[pairs] = w
        nodes.append(WorkerNode(w, [WorkerState.create(program, p, eta, cfg.seed) for p in pairs]))
    if mode == "inline":
        transport = InlineTransport(nodes)
    elif mode == "threads":
        transport = ThreadTransport(nodes, timeout)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    def broadcast(msg: Message) -> None:
        for w in range(num_workers):
            transport.send(w, msg)
        comm.record(msg, a_tot)  # one logical message per pair
        comm.round()

    comm = CommStats(S)
    vbar, h = 0.0, np.zeros(S)
    avg = _Averager(S)
    hits = np.zeros(a_tot, dtype=np.int64)
    trace = AmdpTrace.allocate(N, timing) if cfg.record_trace else None
    values = np.empty(a_tot)
    t0 = time.perf_counter()
    try:
        for k in range(N):
            comm.new_iteration()
            broadcast(CheckConstraints(k))
            for reply in transport.receive(a_tot):
                if not isinstance(reply, ConstraintValue) or reply.k != k:
                    raise WorkerFailure(f"iteration {k}: unexpected reply {reply!r}")
                values[reply.pair] = reply.c
                comm.record(reply)
            j = int(np.argmax(values))
            top = float(values[j])
            productive = top <= threshold
            if trace is not None:
                trace.productive[k] = productive
                trace.max_constraint[k] = top
                trace.vbar[k] = vbar
                if timing:
                    trace.elapsed[k] = time.perf_counter() - t0
            if productive:
                avg.add(vbar, h)
                move = productive_move(vbar, eta)
                broadcast(ProductiveStep(move.correction))
            else:
                hits[j] += 1
                i = int(mdp.pair_state[j])
                request = SampleRequest(j)
                transport.send(int(owner[j]), request)
                comm.record(request)
                (reply,) = transport.receive(1)
                if not isinstance(reply, SampleReply) or reply.pair != j:
                    raise WorkerFailure(f"iteration {k}: expected a sample from pair {j}, got {reply!r}")
                comm.record(reply)
                comm.round()
                s = reply.s
                if trace is not None:
                    trace.chosen[k] = j
                    trace.sample[k] = s
                move = nonproductive_move(vbar, h, eta, i, s, B)
                broadcast(NonProductiveStep(i, s, move.correction))
            vbar = move.vbar
            for t, val in move.h_updates:
                h[t] = val
    finally:
        for w in range(num_workers):
            transport.send(w, Shutdown())
        transport.close()

    if avg.count == 0:
        raise NoProductiveStepsError(f"no productive step in {N} iterations", trace)
    solution = AmdpSolution(
        point=avg.mean(),
        dual=DualEstimate.from_counts(mdp, hits, avg.count),
        trace=trace,
        productive_count=avg.count,
        nonproductive_count=N - avg.count,
        last_point=PrimalPoint(vbar, h.copy()),
        epsilon_tilde=sched.epsilon_tilde,
        delta=sched.delta,
        stepsize=eta,
    )
    return ParallelResult(solution, comm)

