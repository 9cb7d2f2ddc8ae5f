"""Benchmark environments: RiverSwim and the access-control queue."""

from __future__ import annotations

import numpy as np
from scipy.stats import binom

from .mdp_core import Mdp

RIVERSWIM_STATES = 6


def river_swim() -> Mdp:
    """Six-state RiverSwim.

    Swimming left always succeeds (state 0 loops onto itself and pays 0.005).
    Swimming right moves right w.p. 0.35, stays w.p. 0.6 and drifts left w.p.
    0.05; a move that would leave the river keeps the swimmer where they are.
    Swimming right in the last state pays 1.
    """
    S = RIVERSWIM_STATES
    P = np.zeros((2 * S, S))
    r = np.zeros(2 * S)
    for i in range(S):
        left, right = 2 * i, 2 * i + 1
        P[left, max(i - 1, 0)] = 1.0
        P[right, min(i + 1, S - 1)] += 0.35
        P[right, i] += 0.6
        P[right, max(i - 1, 0)] += 0.05
    r[0] = 0.005
    r[2 * (S - 1) + 1] = 1.0
    return Mdp(S, (("left", "right"),) * S, P, r, name="riverswim")


def access_control(
    num_servers: int = 10,
    free_prob: float = 0.06,
    priorities: tuple[int, ...] = (1, 2, 4, 8),
) -> Mdp:
    """Access-control queuing task with rewards scaled into [0, 1].

    State ``(f, k)`` means ``f`` free servers and a head-of-queue customer of
    priority ``priorities[k]``; it is stored at index ``f * len(priorities) +
    k``. Accepting takes a server and pays ``priority / max(priorities)``;
    rejecting pays nothing and is the only action when no server is free.
    After the decision every busy server frees independently with
    probability ``free_prob`` and the next customer's priority is uniform.
    """
    if num_servers < 1:
        raise ValueError("need at least one server")
    K = len(priorities)
    S = (num_servers + 1) * K
    top = max(priorities)
    actions, rows, rewards = [], [], []
    for f in range(num_servers + 1):
        for k, prio in enumerate(priorities):
            acts = []
            if f > 0:
                acts.append("accept")
                rows.append(_queue_row(num_servers, f - 1, free_prob, K))
                rewards.append(prio / top)
            acts.append("reject")
            rows.append(_queue_row(num_servers, f, free_prob, K))
            rewards.append(0.0)
            actions.append(tuple(acts))
    return Mdp(S, tuple(actions), np.array(rows), np.array(rewards), name="access-control")


def _queue_row(n: int, free_after: int, p: float, K: int) -> np.ndarray:
    busy = n - free_after
    freed = binom.pmf(np.arange(busy + 1), busy, p)
    freed /= freed.sum()
    row = np.zeros((n + 1, K))
    row[free_after : n + 1, :] = freed[:, None] / K
    return row.ravel()
