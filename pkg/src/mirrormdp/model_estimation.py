"""Empirical transition model built from generative-model samples."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import streams
from .mdp_core import GenerativeModel


def ceil_count(x: float) -> int:
    """Ceiling that ignores float noise around integers (e.g. log(e) != 1)."""
    r = round(x)
    if abs(x - r) <= 1e-9 * max(1.0, abs(x)):
        return int(r)
    return math.ceil(x)


def required_samples_l1(d: int, sigma_prime: float, delta_l1: float) -> int:
    """Draws that put an empirical categorical within ``delta_l1`` in l1.

    With n >= (8 d + 4 log(1/sigma')) / delta'^2 draws from a distribution on
    ``d`` outcomes, ||s - s_hat||_1 <= delta' holds w.p. at least 1 - sigma'.
    """
    if d < 1:
        raise ValueError("d must be a positive integer")
    if not 0.0 < sigma_prime < 1.0:
        raise ValueError("sigma_prime must lie in (0, 1)")
    if delta_l1 <= 0:
        raise ValueError("delta_l1 must be positive")
    return ceil_count((8 * d + 4 * math.log(1.0 / sigma_prime)) / delta_l1**2)


def required_samples_constraint(
    num_states: int,
    a_tot: int,
    sigma_prime: float,
    delta_prime: float,
    box_radius: float,
) -> int:
    """Per-pair sample count making every approximate constraint delta'-accurate.

    |<P_a - P~_a, h>| <= ||P_a - P~_a||_1 ||h||_inf, so an l1 accuracy of
    delta' / H suffices for every h in the box of radius H; a union bound over
    the A_tot pairs splits the failure probability.
    """
    if a_tot < 1 or num_states < 1:
        raise ValueError("num_states and a_tot must be positive")
    if box_radius <= 0:
        raise ValueError("box_radius must be positive")
    return required_samples_l1(num_states, sigma_prime / a_tot, delta_prime / box_radius)


@dataclass(frozen=True, eq=False)
class EmpiricalModel:
    """Per-pair next-state counts; row ``a`` of the model is counts[a] / n."""

    counts: np.ndarray  # (A_tot, S) integers
    samples_per_pair: int

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64)
        if c.ndim != 2:
            raise ValueError("counts must be a matrix")
        if np.any(c < 0) or np.any(c.sum(axis=1) != self.samples_per_pair):
            raise ValueError("each row of counts must be nonnegative and sum to samples_per_pair")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "_rows", None)

    @property
    def rows(self) -> np.ndarray:
        if self._rows is None:
            rows = self.counts / self.samples_per_pair
            rows.setflags(write=False)
            object.__setattr__(self, "_rows", rows)
        return self._rows

    def to_json(self) -> dict:
        return {"samples_per_pair": int(self.samples_per_pair), "counts": self.counts.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "EmpiricalModel":
        return cls(np.array(data["counts"], dtype=np.int64), int(data["samples_per_pair"]))

    @classmethod
    def exact(cls, transitions: np.ndarray, denominator: int = 1) -> "EmpiricalModel":
        """Wrap a matrix whose entries are multiples of 1/denominator."""
        c = np.rint(np.asarray(transitions) * denominator).astype(np.int64)
        if not np.allclose(c / denominator, transitions, atol=1e-12, rtol=0):
            raise ValueError("transitions are not multiples of 1/denominator")
        return cls(c, denominator)


def estimate_model(
    gen: GenerativeModel,
    n_per_pair: int,
    seed: int,
    workers: Optional[int] = None,
) -> EmpiricalModel:
    """Estimate every transition row from ``n_per_pair`` fresh draws.

    Pair ``j`` uses stream ``(seed, PREPROCESS, j)``; pairs are independent,
    so any evaluation order (or a thread pool) gives the same counts.
    """
    if n_per_pair < 1:
        raise ValueError("n_per_pair must be at least 1")
    a_tot = gen.mdp.a_tot

    def one(j: int) -> np.ndarray:
        return gen.sample_counts(j, n_per_pair, streams.stream(seed, streams.PREPROCESS, j))

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, range(a_tot)))
    else:
        rows = [one(j) for j in range(a_tot)]
    return EmpiricalModel(np.stack(rows), n_per_pair)
