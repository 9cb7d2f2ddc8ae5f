"""Mirror descent on the average-reward LP with a sampled model.

The program is

    min  vbar   over  vbar in [0, 1], h in [-B, B]^S
    s.t. r_(i,a) - vbar + <P_(i,a), h> - h_i <= 0   for every pair (i, a)

with B = 4 * t_mix. Constraint values use the empirical rows P~, subgradients
use one fresh next-state sample from the true model. Every constraint value
is kept in a cache updated in O(1) per pair and iteration, because each step
touches vbar and at most two coordinates of h.

Coordinates of a point in the generic solver layout: index 0 is vbar, index
1 + j is h_j.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import core_solver, streams
from .core_solver import ConstrainedProblem, ProxGeometry, SolverConfig
from .errors import NoProductiveStepsError
from .mdp_core import GenerativeModel, Mdp, Policy
from .model_estimation import EmpiricalModel

LIPSCHITZ = 2.0
# accuracy split used by the parallel MDP scheme: eps~ = delta = eps / 16
ACCURACY_SPLIT = 16.0


@dataclass(frozen=True, eq=False)
class AmdpProgram:
    mdp: Mdp
    model: EmpiricalModel
    t_mix_bound: float
    approx_level: Optional[float] = None  # None: epsilon / 16 at solve time
    generative: GenerativeModel = field(init=False, repr=False)

    def __post_init__(self):
        if self.t_mix_bound <= 0:
            raise ValueError("t_mix_bound must be positive")
        if self.model.counts.shape != self.mdp.transitions.shape:
            raise ValueError("empirical model does not match the MDP layout")
        object.__setattr__(self, "generative", GenerativeModel(self.mdp))

    @property
    def R(self) -> float:
        return 2.0 * self.t_mix_bound

    @property
    def box_radius(self) -> float:
        return 2.0 * self.R

    @property
    def lipschitz(self) -> float:
        return LIPSCHITZ

    @property
    def theta_bar_sq(self) -> float:
        return (4.0 * self.R) ** 2 * self.mdp.num_states + 1.0

    @property
    def num_states(self) -> int:
        return self.mdp.num_states

    @property
    def a_tot(self) -> int:
        return self.mdp.a_tot

    def geometry(self) -> ProxGeometry:
        B = self.box_radius
        S = self.num_states
        return ProxGeometry.box([0.0] + [-B] * S, [1.0] + [B] * S)

    def delta_for(self, epsilon: float) -> float:
        return self.approx_level if self.approx_level is not None else epsilon / ACCURACY_SPLIT


@dataclass
class PrimalPoint:
    vbar: float
    h: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.vbar], self.h])

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "PrimalPoint":
        return cls(float(x[0]), np.array(x[1:], dtype=float))

    def inside(self, program: AmdpProgram) -> bool:
        return program.geometry().contains(self.as_vector())


@dataclass(frozen=True, eq=False)
class DualEstimate:
    mu_hat: np.ndarray  # per pair
    lam: np.ndarray  # per state, block sums of mu_hat

    @classmethod
    def from_counts(cls, mdp: Mdp, hits: np.ndarray, productive_count: int) -> "DualEstimate":
        if productive_count < 1:
            raise ValueError("dual estimate needs at least one productive step")
        mu = np.asarray(hits, dtype=float) / productive_count
        return cls(mu, np.add.reduceat(mu, mdp.offsets[:-1]))


# --- constraint values and subgradients -------------------------------------


def constraint_values(program: AmdpProgram, point: PrimalPoint) -> np.ndarray:
    """All approximate constraints r - vbar + <P~, h> - h_i, by direct evaluation."""
    return (
        program.mdp.rewards
        - point.vbar
        + program.model.rows @ point.h
        - point.h[program.mdp.pair_state]
    )


def constraint_value(program: AmdpProgram, pair: int, point: PrimalPoint) -> float:
    if not 0 <= pair < program.a_tot:
        raise IndexError(f"pair {pair} out of range 0..{program.a_tot - 1}")
    i = int(program.mdp.pair_state[pair])
    return float(
        program.mdp.rewards[pair] - point.vbar + program.model.rows[pair] @ point.h - point.h[i]
    )


def exact_constraint_values(mdp: Mdp, point: PrimalPoint) -> np.ndarray:
    """Constraints of the LP under the true transition rows."""
    return mdp.rewards - point.vbar + mdp.transitions @ point.h - point.h[mdp.pair_state]


def stochastic_constraint_grad(mdp_or_state: Mdp | int, pair: int, s: int) -> dict[int, float]:
    """Sparse subgradient of constraint ``pair`` given next-state sample ``s``.

    -1 on vbar and e_s - e_i on h, keyed by solver coordinate (0 is vbar,
    1 + j is h_j). ``mdp_or_state`` is the MDP or directly the pair's state.
    """
    i = int(mdp_or_state.pair_state[pair]) if isinstance(mdp_or_state, Mdp) else int(mdp_or_state)
    grad = {0: -1.0}
    if s != i:
        grad[1 + s] = 1.0
        grad[1 + i] = -1.0
    return grad


def objective_grad() -> dict[int, float]:
    return {0: 1.0}


def to_dense(grad: dict[int, float], dim: int) -> np.ndarray:
    out = np.zeros(dim)
    for j, g in grad.items():
        out[j] = g
    return out


# --- O(1) cache updates ------------------------------------------------------
#
# Written against ``rows[..., idx]`` and ``state == idx`` so that the same
# expression serves a whole matrix of pairs (sequential solver) and a single
# pair's row (one worker). Identical operation order keeps both bit-equal.


def productive_update(c, eta: float):
    return c + eta


def nonproductive_update(c, eta: float, rows, state, i: int, s: int):
    return c - eta * ((((1.0 + rows[..., s]) - rows[..., i]) + (state == i)) - (state == s))


def corrected_update(c, rows, state, dv: float, dh: Sequence[tuple[int, float]]):
    """Exact cache change for an arbitrary sparse move (used after clamping)."""
    delta = -dv
    for t, d in dh:
        delta = delta + rows[..., t] * d - (state == t) * d
    return c + delta


@dataclass
class ConstraintCache:
    """Approximate constraint values for all pairs at the current iterate."""

    values: np.ndarray
    rows: np.ndarray
    pair_state: np.ndarray
    eta: float
    k: int = 0

    @classmethod
    def initial(cls, program: AmdpProgram, eta: float) -> "ConstraintCache":
        # at (vbar, h) = (0, 0) every constraint equals its reward
        return cls(
            np.array(program.mdp.rewards, dtype=float),
            program.model.rows,
            program.mdp.pair_state,
            eta,
        )

    def max_violation(self) -> tuple[int, float]:
        j = int(np.argmax(self.values))
        return j, float(self.values[j])

    def drift(self, program: AmdpProgram, point: PrimalPoint) -> float:
        return float(np.max(np.abs(self.values - constraint_values(program, point))))


def cache_update_productive(cache: ConstraintCache) -> ConstraintCache:
    cache.values = productive_update(cache.values, cache.eta)
    cache.k += 1
    return cache


def cache_update_nonproductive(cache: ConstraintCache, i: int, s: int) -> ConstraintCache:
    cache.values = nonproductive_update(cache.values, cache.eta, cache.rows, cache.pair_state, i, s)
    cache.k += 1
    return cache


def cache_update_corrected(cache: ConstraintCache, dv: float, dh: Sequence[tuple[int, float]]) -> ConstraintCache:
    cache.values = corrected_update(cache.values, cache.rows, cache.pair_state, dv, dh)
    cache.k += 1
    return cache


# --- primal moves --------------------------------------------------------------


@dataclass(frozen=True)
class Move:
    """Result of one mirror step on (vbar, h).

    ``correction`` is None when no coordinate was clamped, in which case the
    closed-form cache updates apply. Otherwise it holds the actual change of
    vbar and of each touched h coordinate.
    """

    vbar: float
    h_updates: tuple[tuple[int, float], ...]  # (state, new value)
    correction: Optional[tuple[float, tuple[tuple[int, float], ...]]]


def productive_move(vbar: float, eta: float) -> Move:
    v_new = vbar - eta
    if v_new >= 0.0:
        return Move(v_new, (), None)
    return Move(0.0, (), (0.0 - vbar, ()))


def nonproductive_move(vbar: float, h: np.ndarray, eta: float, i: int, s: int, B: float) -> Move:
    v_raw = vbar + eta
    v_new = min(v_raw, 1.0)
    if s == i:
        clamped = v_new != v_raw
        return Move(v_new, (), (v_new - vbar, ()) if clamped else None)
    hs_raw, hi_raw = h[s] - eta, h[i] + eta
    hs_new, hi_new = max(hs_raw, -B), min(hi_raw, B)
    updates = ((s, hs_new), (i, hi_new))
    if v_new == v_raw and hs_new == hs_raw and hi_new == hi_raw:
        return Move(v_new, updates, None)
    dh = ((s, hs_new - h[s]), (i, hi_new - h[i]))
    return Move(v_new, updates, (v_new - vbar, dh))


# --- solve ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AmdpTrace:
    """Per-iteration record; ``chosen`` and ``sample`` are -1 on productive steps."""

    productive: np.ndarray
    chosen: np.ndarray
    sample: np.ndarray
    max_constraint: np.ndarray
    vbar: np.ndarray
    elapsed: Optional[np.ndarray] = None

    @classmethod
    def allocate(cls, n: int, timing: bool) -> "AmdpTrace":
        return cls(
            np.zeros(n, dtype=bool),
            np.full(n, -1, dtype=np.int64),
            np.full(n, -1, dtype=np.int64),
            np.zeros(n),
            np.zeros(n),
            np.zeros(n) if timing else None,
        )

    def same_decisions(self, other: "AmdpTrace") -> bool:
        return (
            np.array_equal(self.productive, other.productive)
            and np.array_equal(self.chosen, other.chosen)
            and np.array_equal(self.sample, other.sample)
        )

    def identical(self, other: "AmdpTrace") -> bool:
        return (
            self.same_decisions(other)
            and np.array_equal(self.max_constraint, other.max_constraint)
            and np.array_equal(self.vbar, other.vbar)
        )


@dataclass(frozen=True, eq=False)
class AmdpSolution:
    point: PrimalPoint  # average of the productive iterates
    dual: DualEstimate
    trace: Optional[AmdpTrace]
    productive_count: int
    nonproductive_count: int
    last_point: PrimalPoint
    epsilon_tilde: float
    delta: float
    stepsize: float


@dataclass(frozen=True)
class StepSchedule:
    epsilon_tilde: float
    delta: float
    stepsize: float

    @property
    def threshold(self) -> float:
        return self.epsilon_tilde + self.delta


def schedule(program: AmdpProgram, cfg: SolverConfig) -> StepSchedule:
    """eps~ = eps / 16, delta = eps / 16 unless fixed by the program, eta = eps~ / M^2."""
    eps_tilde = cfg.epsilon / ACCURACY_SPLIT
    eta = cfg.stepsize if cfg.stepsize is not None else core_solver.default_stepsize(eps_tilde, LIPSCHITZ)
    return StepSchedule(eps_tilde, program.delta_for(cfg.epsilon), eta)


class _Averager:
    def __init__(self, S: int):
        self.v_sum = 0.0
        self.h_sum = np.zeros(S)
        self.count = 0

    def add(self, vbar: float, h: np.ndarray):
        self.v_sum += vbar
        self.h_sum += h
        self.count += 1

    def mean(self) -> PrimalPoint:
        return PrimalPoint(self.v_sum / self.count, self.h_sum / self.count)


def solve(program: AmdpProgram, cfg: SolverConfig, timing: bool = False) -> AmdpSolution:
    """Sequential reference run of the parallel MDP scheme.

    Next-state samples for pair ``j`` come from stream ``(seed, TRANSITION,
    j)``; the message-passing run uses the same streams.
    """
    sched = schedule(program, cfg)
    eta, threshold = sched.stepsize, sched.threshold
    mdp = program.mdp
    S, N, B = mdp.num_states, cfg.iterations, program.box_radius
    pair_state = mdp.pair_state
    gen = program.generative
    rngs = streams.pair_streams(cfg.seed, streams.TRANSITION, mdp.a_tot)

    cache = ConstraintCache.initial(program, eta)
    vbar, h = 0.0, np.zeros(S)
    avg = _Averager(S)
    hits = np.zeros(mdp.a_tot, dtype=np.int64)
    trace = AmdpTrace.allocate(N, timing) if cfg.record_trace else None
    t0 = time.perf_counter()

    for k in range(N):
        j, top = cache.max_violation()
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
            if move.correction is None:
                cache_update_productive(cache)
            else:
                cache_update_corrected(cache, *move.correction)
        else:
            hits[j] += 1
            i = int(pair_state[j])
            s = gen.sample(j, rngs[j])
            if trace is not None:
                trace.chosen[k] = j
                trace.sample[k] = s
            move = nonproductive_move(vbar, h, eta, i, s, B)
            if move.correction is None:
                cache_update_nonproductive(cache, i, s)
            else:
                cache_update_corrected(cache, *move.correction)
        vbar = move.vbar
        for t, val in move.h_updates:
            h[t] = val

    if avg.count == 0:
        raise NoProductiveStepsError(f"no productive step in {N} iterations", trace)
    return AmdpSolution(
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


def round_policy(dual: DualEstimate, mdp: Mdp) -> Policy:
    """pi_(i,a) = mu_(i,a) / lambda_i; uniform over the state's actions when lambda_i = 0."""
    mu = np.asarray(dual.mu_hat, dtype=float)
    if np.any(mu < 0):
        raise ValueError("dual estimate must be nonnegative")
    p = np.empty(mdp.a_tot)
    for i in range(mdp.num_states):
        lo, hi = mdp.offsets[i], mdp.offsets[i + 1]
        block = mu[lo:hi]
        total = block.sum()
        p[lo:hi] = block / total if total > 0 else 1.0 / (hi - lo)
    return Policy(p)


def theoretical_iterations(program: AmdpProgram, epsilon: float, sigma: float) -> int:
    """Iteration bound of the primal-dual guarantee at the mirror-descent accuracy eps / 16.

    Half of ``sigma`` is left for preprocessing; kappa = 1 for the l2 setup.
    """
    return core_solver.theoretical_iterations_primal_dual(
        program.theta_bar_sq, LIPSCHITZ, sigma / 2.0, epsilon / ACCURACY_SPLIT, 1.0, strict=True
    )


def as_constrained_problem(program: AmdpProgram, seed: int, approx_level: float = 0.0) -> ConstrainedProblem:
    """The same program through the generic oracle interface.

    Constraint values are evaluated directly (no cache); next-state samples
    come from the same per-pair streams as :func:`solve`.
    """
    mdp, rows = program.mdp, program.model.rows
    S = mdp.num_states
    rngs = streams.pair_streams(seed, streams.TRANSITION, mdp.a_tot)
    gen = program.generative

    def obj_grad(x, rng):
        return to_dense(objective_grad(), S + 1)

    def approx_value(l, x):
        i = mdp.pair_state[l]
        return mdp.rewards[l] - x[0] + rows[l] @ x[1:] - x[1 + i]

    def con_grad(l, x, rng):
        return to_dense(stochastic_constraint_grad(mdp, l, gen.sample(l, rngs[l])), S + 1)

    def exact_objective(X):
        return np.asarray(X)[..., 0]

    def exact_constraint(l, X):
        X = np.asarray(X)
        i = mdp.pair_state[l]
        return mdp.rewards[l] - X[..., 0] + X[..., 1:] @ mdp.transitions[l] - X[..., 1 + i]

    return ConstrainedProblem(
        dim=S + 1,
        objective_grad=obj_grad,
        constraint_count=mdp.a_tot,
        constraint_approx_value=approx_value,
        constraint_grad=con_grad,
        lipschitz=LIPSCHITZ,
        approx_level=approx_level,
        exact_objective=exact_objective,
        exact_constraint=exact_constraint,
    )
