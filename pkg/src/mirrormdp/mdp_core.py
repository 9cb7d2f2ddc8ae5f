"""Tabular average-reward MDPs and exact evaluation oracles.

State-action pairs are laid out state-major: the pairs of state ``i`` occupy
rows ``offsets[i]:offsets[i + 1]`` of the transition matrix. A policy is a
block vector over the same layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import streams
from .errors import ConvergenceError, NotMixingError, StationaryDistributionError

ROW_TOL = 1e-12
DEFAULT_T_MAX = 100_000


@dataclass(frozen=True, eq=False)
class Mdp:
    """Finite MDP with per-pair transition rows and rewards in [0, 1]."""

    num_states: int
    actions: tuple[tuple[str, ...], ...]
    transitions: np.ndarray  # (A_tot, S)
    rewards: np.ndarray  # (A_tot,)
    name: str = "mdp"
    offsets: np.ndarray = field(init=False, repr=False)
    pair_state: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        actions = tuple(tuple(str(a) for a in acts) for acts in self.actions)
        P = np.array(self.transitions, dtype=float)
        r = np.array(self.rewards, dtype=float)
        S = int(self.num_states)
        if S < 1:
            raise ValueError("an MDP needs at least one state")
        if len(actions) != S:
            raise ValueError(f"expected action lists for {S} states, got {len(actions)}")
        if any(len(a) == 0 for a in actions):
            raise ValueError("every state needs at least one action")
        counts = np.array([len(a) for a in actions])
        offsets = np.concatenate([[0], np.cumsum(counts)])
        a_tot = int(offsets[-1])
        if P.shape != (a_tot, S):
            raise ValueError(f"transition matrix must be {(a_tot, S)}, got {P.shape}")
        if r.shape != (a_tot,):
            raise ValueError(f"reward vector must have length {a_tot}, got {r.shape}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > ROW_TOL):
            raise ValueError("transition rows must be nonnegative and sum to 1")
        if np.any(r < 0) or np.any(r > 1):
            raise ValueError("rewards must lie in [0, 1]")
        P.setflags(write=False)
        r.setflags(write=False)
        pair_state = np.repeat(np.arange(S), counts)
        offsets.setflags(write=False)
        pair_state.setflags(write=False)
        object.__setattr__(self, "num_states", S)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "pair_state", pair_state)

    @property
    def a_tot(self) -> int:
        return int(self.offsets[-1])

    def pairs(self, state: int) -> range:
        return range(int(self.offsets[state]), int(self.offsets[state + 1]))

    def pair_index(self, state: int, action: int | str) -> int:
        acts = self.actions[state]
        pos = acts.index(action) if isinstance(action, str) else int(action)
        if not 0 <= pos < len(acts):
            raise IndexError(f"state {state} has no action {action!r}")
        return int(self.offsets[state]) + pos

    def pair_label(self, pair: int) -> str:
        i = int(self.pair_state[pair])
        return f"{i}:{self.actions[i][pair - int(self.offsets[i])]}"

    def row(self, state: int, action: int | str) -> np.ndarray:
        return self.transitions[self.pair_index(state, action)]

    def reward(self, state: int, action: int | str) -> float:
        return float(self.rewards[self.pair_index(state, action)])


@dataclass(frozen=True, eq=False)
class Policy:
    """Stationary randomized policy stored as a block vector of length A_tot."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def validate(self, mdp: Mdp) -> None:
        p = self.probs
        if p.shape != (mdp.a_tot,):
            raise ValueError(f"policy length {p.shape} does not match A_tot={mdp.a_tot}")
        if np.any(p < 0):
            raise ValueError("policy has negative probabilities")
        sums = np.add.reduceat(p, mdp.offsets[:-1])
        if np.any(np.abs(sums - 1.0) > ROW_TOL):
            raise ValueError("each state's action distribution must sum to 1")

    def state_probs(self, mdp: Mdp, state: int) -> np.ndarray:
        return self.probs[mdp.offsets[state] : mdp.offsets[state + 1]]

    @classmethod
    def deterministic(cls, mdp: Mdp, choice: Sequence[int | str]) -> "Policy":
        """One action per state, given by position or name."""
        if len(choice) != mdp.num_states:
            raise ValueError("need one action per state")
        p = np.zeros(mdp.a_tot)
        for i, a in enumerate(choice):
            p[mdp.pair_index(i, a)] = 1.0
        return cls(p)

    @classmethod
    def uniform(cls, mdp: Mdp) -> "Policy":
        counts = np.diff(mdp.offsets)
        return cls(1.0 / counts[mdp.pair_state])

    def as_lists(self, mdp: Mdp) -> list[list[float]]:
        return [self.state_probs(mdp, i).tolist() for i in range(mdp.num_states)]


class GenerativeModel:
    """Sampler access to an MDP: draw next states for any queried pair."""

    def __init__(self, mdp: Mdp):
        self.mdp = mdp
        self._cdfs = [streams.make_cdf(row) for row in mdp.transitions]

    def sample(self, pair: int, rng: np.random.Generator) -> int:
        return streams.sample_categorical(self._cdfs[pair], rng)

    def sample_counts(self, pair: int, n: int, rng: np.random.Generator) -> np.ndarray:
        """Histogram of ``n`` independent next-state draws from ``pair``."""
        return rng.multinomial(n, self.mdp.transitions[pair])


def induced_chain(mdp: Mdp, pi: Policy) -> tuple[np.ndarray, np.ndarray]:
    """Transition matrix and reward vector of the chain a policy induces."""
    pi.validate(mdp)
    weighted = pi.probs[:, None] * mdp.transitions
    P_pi = np.add.reduceat(weighted, mdp.offsets[:-1], axis=0)
    r_pi = np.add.reduceat(pi.probs * mdp.rewards, mdp.offsets[:-1])
    return P_pi, r_pi


def _stationary_system(P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # rows of (P^T - I) are linearly dependent, so one may be swapped for the
    # normalisation row without losing rank
    n = P.shape[-1]
    A = np.swapaxes(P, -1, -2) - np.eye(n)
    A[..., -1, :] = 1.0
    b = np.zeros(P.shape[:-1])
    b[..., -1] = 1.0
    return A, b


def stationary_distribution(P: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Unique stationary distribution of a row-stochastic matrix.

    Dense direct solve, falling back to Cesaro-averaged power iteration when
    the direct answer misses ``tol``. Raises if the stationary law is not
    unique.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    A, b = _stationary_system(P)
    if np.linalg.matrix_rank(A) < n:
        raise StationaryDistributionError("chain has more than one stationary distribution")
    nu = np.linalg.solve(A, b)
    nu = np.clip(nu, 0.0, None)
    nu /= nu.sum()
    if np.abs(nu @ P - nu).sum() <= tol:
        return nu
    nu = _power_stationary(P, tol)
    if nu is None:
        raise StationaryDistributionError("stationary distribution did not reach tolerance")
    return nu


def _power_stationary(P: np.ndarray, tol: float, max_iters: int = 1_000_000) -> Optional[np.ndarray]:
    n = P.shape[0]
    x = np.full(n, 1.0 / n)
    avg = x.copy()
    for t in range(1, max_iters + 1):
        x = x @ P
        avg += (x - avg) / (t + 1)
        for cand in (x, avg):
            if np.abs(cand @ P - cand).sum() <= tol:
                return cand / cand.sum()
    return None


def policy_value(mdp: Mdp, pi: Policy) -> float:
    """Long-run average reward of ``pi``."""
    P_pi, r_pi = induced_chain(mdp, pi)
    nu = stationary_distribution(P_pi)
    return float(nu @ r_pi)


@dataclass(frozen=True)
class RviResult:
    gain: float
    bias: np.ndarray
    policy: Policy
    iterations: int
    residual: float


def bellman_residual(mdp: Mdp, gain: float, bias: np.ndarray) -> float:
    """max_i |gain + h_i - max_a (r_ia + <p_i(a), h>)|."""
    q = mdp.rewards + mdp.transitions @ bias
    Th = np.maximum.reduceat(q, mdp.offsets[:-1])
    return float(np.max(np.abs(gain + bias - Th)))


def greedy_policy(mdp: Mdp, bias: np.ndarray) -> Policy:
    q = mdp.rewards + mdp.transitions @ bias
    p = np.zeros(mdp.a_tot)
    for i in range(mdp.num_states):
        lo, hi = mdp.offsets[i], mdp.offsets[i + 1]
        p[lo + int(np.argmax(q[lo:hi]))] = 1.0
    return Policy(p)


def optimal_gain_rvi(
    mdp: Mdp,
    tol: float = 1e-8,
    max_iters: int = 1_000_000,
    ref_state: int = 0,
    damping: float = 0.5,
) -> RviResult:
    """Optimal average reward by relative value iteration.

    The update is h <- (1 - damping) h + damping T h, re-centred at
    ``ref_state``. The damping is the aperiodicity transform: it leaves the
    gain and greedy policies untouched and makes periodic chains converge.
    Stops once span(T h - h) <= tol, which bounds the Bellman residual of the
    returned (gain, bias) by tol / 2.
    """
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    P, r, starts = mdp.transitions, mdp.rewards, mdp.offsets[:-1]
    h = np.zeros(mdp.num_states)
    for it in range(1, max_iters + 1):
        Th = np.maximum.reduceat(r + P @ h, starts)
        diff = Th - h
        hi, lo = diff.max(), diff.min()
        if hi - lo <= tol:
            gain = 0.5 * (hi + lo)
            return RviResult(
                gain=float(gain),
                bias=h,
                policy=greedy_policy(mdp, h),
                iterations=it,
                residual=bellman_residual(mdp, gain, h),
            )
        h = h + damping * diff
        h -= h[ref_state]
    raise ConvergenceError(f"relative value iteration did not reach span {tol} in {max_iters} iterations")


def mixing_distances(P: np.ndarray, t_max: int, nu: Optional[np.ndarray] = None) -> np.ndarray:
    """Worst-start l1 distance to stationarity for t = 0..t_max.

    Only point-mass starts are checked; the l1 distance is convex in the start
    distribution, so its maximum over the simplex sits at a vertex.
    """
    P = np.asarray(P, dtype=float)
    if nu is None:
        nu = stationary_distribution(P)
    n = P.shape[0]
    out = np.empty(t_max + 1)
    M = np.eye(n)
    out[0] = np.abs(M - nu).sum(axis=1).max()
    for t in range(1, t_max + 1):
        M = M @ P
        out[t] = np.abs(M - nu).sum(axis=1).max()
    return out


# absorbs rounding when the worst-start distance sits exactly on 1/2
_MIX_SLACK = 1e-12


def mixing_times(P: np.ndarray, t_max: int = DEFAULT_T_MAX) -> np.ndarray:
    """Mixing time of each chain in a stack ``P`` of shape (B, n, n).

    Returns an int array with -1 where a chain does not mix within ``t_max``.
    Every chain must have a unique stationary distribution.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 3:
        raise ValueError("expected a stack of square matrices")
    B, n, _ = P.shape
    A, b = _stationary_system(P)
    ranks = np.linalg.matrix_rank(A)
    if np.any(ranks < n):
        raise StationaryDistributionError(
            f"{int(np.sum(ranks < n))} chain(s) lack a unique stationary distribution"
        )
    nu = np.linalg.solve(A, b[..., None])[..., 0]
    result = np.full(B, -1, dtype=np.int64)
    live = np.arange(B)
    M = P.copy()
    for t in range(1, t_max + 1):
        dist = np.abs(M - nu[live, None, :]).sum(axis=2).max(axis=1)
        done = dist <= 0.5 + _MIX_SLACK
        if np.any(done):
            result[live[done]] = t
            keep = ~done
            live, M = live[keep], M[keep]
            if live.size == 0:
                break
        M = M @ P[live]
    return result


def mixing_time_exact(P: np.ndarray, t_max: int = DEFAULT_T_MAX) -> Optional[int]:
    """Smallest t >= 1 whose worst-start l1 distance is at most 1/2, else None."""
    t = int(mixing_times(np.asarray(P, dtype=float)[None], t_max)[0])
    return None if t < 0 else t


POLICY_LAWS = ("weights", "dirichlet")


def random_policy(mdp: Mdp, rng: np.random.Generator, law: str = "weights") -> Policy:
    """Draw a random stationary policy.

    ``weights``: i.i.d. U(0, 1) weight per action, normalised within each
    state. ``dirichlet``: each state's distribution uniform on its simplex.
    """
    if law not in POLICY_LAWS:
        raise ValueError(f"unknown policy law {law!r}; choose from {POLICY_LAWS}")
    p = np.empty(mdp.a_tot)
    for i in range(mdp.num_states):
        lo, hi = mdp.offsets[i], mdp.offsets[i + 1]
        k = hi - lo
        if law == "dirichlet":
            p[lo:hi] = rng.dirichlet(np.ones(k))
        else:
            w = rng.random(k)
            p[lo:hi] = w / w.sum()
    return Policy(p)


def estimate_mixing_time(
    mdp: Mdp,
    num_policies: int = 1000,
    t_max: int = DEFAULT_T_MAX,
    seed: int = 0,
    law: str = "weights",
    batch: int = 256,
) -> int:
    """Largest mixing time over ``num_policies`` random policies.

    Policy ``j`` is drawn from its own stream ``(seed, j)``, so the answer
    does not depend on ``batch``.
    """
    if num_policies < 1:
        raise ValueError("num_policies must be at least 1")
    worst = 0
    for start in range(0, num_policies, batch):
        idx = range(start, min(start + batch, num_policies))
        chains = np.stack(
            [
                induced_chain(
                    mdp, random_policy(mdp, streams.stream(seed, streams.POLICY_SAMPLING, j), law)
                )[0]
                for j in idx
            ]
        )
        t = mixing_times(chains, t_max)
        if np.any(t < 0):
            bad = [j for j, tj in zip(idx, t) if tj < 0]
            raise NotMixingError(f"policies {bad} did not mix within {t_max} steps")
        worst = max(worst, int(t.max()))
    return worst
