import time

import numpy as np
import pytest

from mirrormdp import streams
from mirrormdp.amdp_solver import AmdpProgram, solve
from mirrormdp.core_solver import SolverConfig
from mirrormdp.errors import ProtocolError
from mirrormdp.mdp_core import GenerativeModel
from mirrormdp.model_estimation import estimate_model
from mirrormdp.parallel import (
    CheckConstraints,
    ConstraintValue,
    NonProductiveStep,
    ProductiveStep,
    SampleReply,
    SampleRequest,
    Shutdown,
    ThreadTransport,
    WorkerFailure,
    WorkerNode,
    WorkerState,
    assign_pairs,
    run_parallel,
    worker_handle,
)

EPS = 0.05


@pytest.fixture
def worker(riverswim_program):
    return WorkerState.create(riverswim_program, riverswim_program.mdp.pair_index(1, "right"), 0.01, seed=0)


def test_check_is_read_only(worker):
    c, k = worker.c, worker.k
    _, reply = worker_handle(worker, CheckConstraints(0))
    assert reply == ConstraintValue(worker.pair, c, 0)
    assert worker.c == c and worker.k == k


def test_productive_step_adds_eta(worker):
    worker.c = 0.2
    worker_handle(worker, CheckConstraints(0))
    _, reply = worker_handle(worker, ProductiveStep())
    assert reply is None
    assert worker.c == pytest.approx(0.21) and worker.k == 1


def test_nonproductive_step_formula(worker):
    row = worker.row
    i, s = 3, 5  # neither is the worker's state (1)
    before = worker.c
    worker_handle(worker, CheckConstraints(0))
    worker_handle(worker, NonProductiveStep(i, s))
    assert worker.c == pytest.approx(before - 0.01 * (1 + row[s] - row[i]), abs=1e-15)


def test_sample_uses_the_pair_stream(riverswim_program, worker):
    mdp = riverswim_program.mdp
    ref = streams.stream(0, streams.TRANSITION, worker.pair)
    expected = [GenerativeModel(mdp).sample(worker.pair, ref) for _ in range(20)]
    got = []
    for k in range(20):
        worker_handle(worker, CheckConstraints(k))
        _, reply = worker_handle(worker, SampleRequest(worker.pair))
        assert isinstance(reply, SampleReply)
        got.append(reply.s)
        worker_handle(worker, NonProductiveStep(1, reply.s))
    assert got == expected


@pytest.mark.parametrize(
    "msgs",
    [
        [ProductiveStep()],
        [SampleRequest(3)],
        [CheckConstraints(0), CheckConstraints(0)],
        [CheckConstraints(1)],
        [Shutdown(), CheckConstraints(0)],
    ],
)
def test_protocol_errors(worker, msgs):
    with pytest.raises(ProtocolError):
        for m in msgs:
            worker_handle(worker, m)


def test_sample_for_another_pair(worker):
    worker_handle(worker, CheckConstraints(0))
    with pytest.raises(ProtocolError):
        worker_handle(worker, SampleRequest(worker.pair + 1))


def test_round_robin():
    assert assign_pairs(7, 3) == [[0, 3, 6], [1, 4], [2, 5]]
    assert assign_pairs(4, 4) == [[0], [1], [2], [3]]


# --- equivalence with the sequential solver -------------------------------------------


@pytest.mark.parametrize("mode", ["inline", "threads"])
@pytest.mark.parametrize("workers", [1, 2, 5, 12])
def test_identical_to_sequential(riverswim_program, mode, workers):
    cfg = SolverConfig(epsilon=EPS, iterations=2000, seed=4)
    ref = solve(riverswim_program, cfg)
    par = run_parallel(riverswim_program, cfg, workers, mode=mode)
    assert par.trace.identical(ref.trace)
    np.testing.assert_array_equal(par.point.h, ref.point.h)
    assert par.point.vbar == ref.point.vbar
    np.testing.assert_array_equal(par.dual.mu_hat, ref.dual.mu_hat)


def test_identical_with_clamping(riverswim):
    # a tiny box makes the head broadcast corrections
    model = estimate_model(GenerativeModel(riverswim), 100, seed=1)
    program = AmdpProgram(riverswim, model, 0.002)
    cfg = SolverConfig(epsilon=EPS, iterations=1500, seed=1)
    ref = solve(program, cfg)
    assert run_parallel(program, cfg, 5, mode="threads").trace.identical(ref.trace)


def test_identical_on_access_control(access_control):
    model = estimate_model(GenerativeModel(access_control), 500, seed=3)
    program = AmdpProgram(access_control, model, 51.0)
    cfg = SolverConfig(epsilon=EPS, iterations=2000, seed=3)
    ref = solve(program, cfg)
    assert run_parallel(program, cfg, 7, mode="inline").trace.identical(ref.trace)


# --- communication accounting -------------------------------------------------------


def test_comm_stats(riverswim_program):
    cfg = SolverConfig(epsilon=EPS, iterations=1500, seed=2)
    res = run_parallel(riverswim_program, cfg, 4, mode="inline")
    comm, sol, a_tot = res.comm, res.solution, riverswim_program.a_tot
    per = np.array(comm.per_iteration)
    prod = res.trace.productive
    assert np.all(per[prod] == 3 * a_tot)
    assert np.all(per[~prod] == 3 * a_tot + 2)
    assert comm.sample_messages == sol.nonproductive_count
    assert comm.sample_bits == sol.nonproductive_count * 3  # ceil(log2 6)
    rounds = np.array(comm.rounds_per_iteration)
    assert np.all(rounds[prod] == 2) and np.all(rounds[~prod] == 3)
    summary = comm.to_json()
    assert summary["total_messages"] == per.sum()
    assert summary["bits_per_sample"] == 3


def test_worker_count_bounds(riverswim_program):
    cfg = SolverConfig(epsilon=EPS, iterations=10)
    for w in (0, riverswim_program.a_tot + 1):
        with pytest.raises(ValueError):
            run_parallel(riverswim_program, cfg, w)
    with pytest.raises(ValueError):
        run_parallel(riverswim_program, cfg, 2, mode="processes")


# --- failures ------------------------------------------------------------------------


class BrokenNode:
    index = 0

    def handle(self, msg):
        raise ProtocolError("boom")


class SilentNode:
    index = 0

    def handle(self, msg):
        return []


def test_thread_worker_failure_aborts():
    t = ThreadTransport([BrokenNode()], timeout=5.0)
    t.send(0, CheckConstraints(0))
    with pytest.raises(WorkerFailure, match="boom"):
        t.receive(1)


def test_thread_timeout():
    t = ThreadTransport([SilentNode()], timeout=0.2)
    t.send(0, CheckConstraints(0))
    start = time.perf_counter()
    with pytest.raises(WorkerFailure, match="timed out"):
        t.receive(1)
    assert time.perf_counter() - start < 5.0
    t.send(0, Shutdown())
    t.close()


def test_node_rejects_foreign_sample_request(riverswim_program):
    node = WorkerNode(0, [WorkerState.create(riverswim_program, 0, 0.01, 0)])
    node.handle(CheckConstraints(0))
    with pytest.raises(ProtocolError):
        node.handle(SampleRequest(5))
