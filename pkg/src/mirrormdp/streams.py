"""Deterministic random streams.

Every consumer of randomness gets its own counter-based Philox generator keyed
by ``(master_seed, purpose, index)``. Streams never depend on call order, so a
sequential run and a message-passing run that draw from the same keys see the
same numbers.
"""

from __future__ import annotations

import numpy as np

# purpose tags; keep stable, they are part of the reproducibility contract
SOLVER = 0
PREPROCESS = 1
TRANSITION = 2
POLICY_SAMPLING = 3
HEAD = 4


def stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    """Return the generator for ``(seed, purpose, index)``."""
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, purpose, index])
    return np.random.Generator(np.random.Philox(ss))


def pair_streams(seed: int, purpose: int, count: int) -> list[np.random.Generator]:
    return [stream(seed, purpose, j) for j in range(count)]


def make_cdf(p: np.ndarray) -> np.ndarray:
    """Cumulative sums of ``p`` with the tail pinned to exactly 1.

    Pinning from the last positive entry on means a uniform draw in [0, 1)
    can never select a trailing zero-probability outcome.
    """
    p = np.asarray(p, dtype=float)
    cdf = np.cumsum(p)
    last = int(np.flatnonzero(p > 0)[-1])
    cdf[last:] = 1.0
    return cdf


def sample_categorical(cdf: np.ndarray, rng: np.random.Generator) -> int:
    """Draw one index from a distribution given by :func:`make_cdf` output.

    Exactly one uniform is consumed per sample, so the stream position is the
    same no matter which actor performs the draw.
    """
    return int(np.searchsorted(cdf, rng.random(), side="right"))
