"""Stochastic mirror descent for problems with inexact functional constraints.

Solves min f(x) over a box Q subject to g_l(x) <= 0, l = 0..m-1, given a
stochastic subgradient oracle for f and for each g_l, plus values of g_l that
are only accurate to within ``approx_level``. Each iteration either steps on
the objective ("productive": every approximate constraint is within
``epsilon + approx_level``) or on the most violated constraint. The average of
the productive iterates is the primal answer; the normalised counts of
non-productive steps per constraint estimate the Lagrange multipliers.

Only the Euclidean prox-function on a box is implemented.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import streams
from .errors import DomainError, NoProductiveStepsError
from .model_estimation import ceil_count

# relative slack on the A3 gradient-norm check
_NORM_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class ProxGeometry:
    """Box domain with the Euclidean prox-function d(x) = ||x||^2 / 2.

    ``norm_p`` only feeds the Nemirovski constant used in iteration bounds.
    """

    lo: np.ndarray
    hi: np.ndarray
    norm_p: float = 2.0

    def __post_init__(self):
        lo = np.array(self.lo, dtype=float).ravel()
        hi = np.array(self.hi, dtype=float).ravel()
        if lo.shape != hi.shape or lo.size == 0:
            raise ValueError("lo and hi must be nonempty vectors of equal length")
        if np.any(lo > hi):
            raise ValueError("box bounds must satisfy lo <= hi")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def box(cls, lo: Sequence[float], hi: Sequence[float], norm_p: float = 2.0) -> "ProxGeometry":
        return cls(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float), norm_p)

    @property
    def dimension(self) -> int:
        return self.lo.size

    def contains(self, x: np.ndarray) -> bool:
        x = np.asarray(x)
        return x.shape == self.lo.shape and bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def prox(self, x: np.ndarray) -> float:
        return 0.5 * float(np.dot(x, x))

    def bregman(self, x: np.ndarray, y: np.ndarray) -> float:
        """V(x, y) = d(y) - d(x) - <grad d(x), y - x>."""
        return self.prox(y) - self.prox(x) - float(np.dot(x, np.asarray(y) - x))

    def center(self) -> np.ndarray:
        """argmin of d over the box: the origin clamped into it."""
        return np.clip(np.zeros_like(self.lo), self.lo, self.hi)

    def sup_prox_gap(self) -> float:
        """sup over Q of d(y) - d(center), attained at a vertex."""
        far = np.maximum(self.lo**2, self.hi**2)
        return 0.5 * float(far.sum()) - self.prox(self.center())


def mirror_step(x: np.ndarray, v: np.ndarray, geom: ProxGeometry) -> np.ndarray:
    """argmin_{y in Q} <v, y> + V(x, y); for the Euclidean box, clamp(x - v)."""
    x = np.asarray(x, dtype=float)
    if not geom.contains(x):
        raise DomainError("mirror step starting point lies outside the box")
    return np.clip(x - np.asarray(v, dtype=float), geom.lo, geom.hi)


Oracle = Callable[..., object]


@dataclass(frozen=True, eq=False)
class ConstrainedProblem:
    """Oracle bundle for min f(x) s.t. g_l(x) <= 0.

    ``objective_grad(x, rng)`` and ``constraint_grad(l, x, rng)`` return
    stochastic subgradients bounded by ``lipschitz`` in the l2 norm;
    ``constraint_approx_value(l, x)`` is within ``approx_level`` of g_l(x).
    The exact oracles are optional and only used by tests and the grid
    duality-gap check; they must broadcast over leading axes of ``x`` (a
    batch of points has shape (n, dim)).
    """

    dim: int
    objective_grad: Callable[[np.ndarray, np.random.Generator], np.ndarray]
    constraint_count: int
    constraint_approx_value: Callable[[int, np.ndarray], float]
    constraint_grad: Callable[[int, np.ndarray, np.random.Generator], np.ndarray]
    lipschitz: float
    approx_level: float = 0.0
    exact_objective: Optional[Callable[[np.ndarray], np.ndarray]] = None
    exact_constraint: Optional[Callable[[int, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.constraint_count < 0:
            raise ValueError("constraint_count must be nonnegative")
        if self.lipschitz <= 0:
            raise ValueError("lipschitz must be positive")
        if self.approx_level < 0:
            raise ValueError("approx_level must be nonnegative")


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float
    iterations: int
    stepsize: Optional[float] = None  # default epsilon / M^2
    sigma: float = 0.1
    seed: int = 0
    record_trace: bool = True

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.stepsize is not None and self.stepsize <= 0:
            raise ValueError("stepsize must be positive")
        if not 0.0 < self.sigma < 1.0:
            raise ValueError("sigma must lie in (0, 1)")

    def resolved_stepsize(self, lipschitz: float) -> float:
        return self.stepsize if self.stepsize is not None else default_stepsize(self.epsilon, lipschitz)


def default_stepsize(epsilon: float, lipschitz: float) -> float:
    return epsilon / lipschitz**2


@dataclass(frozen=True)
class TraceRecord:
    k: int
    productive: bool
    chosen_constraint: Optional[int]
    max_approx_constraint: float
    objective_value: Optional[float]
    elapsed: float  # seconds since the run started


@dataclass(frozen=True, eq=False)
class SolverOutput:
    x_hat: np.ndarray
    lambda_hat: np.ndarray
    productive_count: int
    nonproductive_count: int
    trace: tuple[TraceRecord, ...]


def run(problem: ConstrainedProblem, geom: ProxGeometry, cfg: SolverConfig) -> SolverOutput:
    """Mirror descent with productive / non-productive steps.

    Ties in the most violated constraint go to the lowest index.
    """
    if geom.dimension != problem.dim:
        raise ValueError(f"geometry has dimension {geom.dimension}, problem has {problem.dim}")
    rng = streams.stream(cfg.seed, streams.SOLVER)
    eta = cfg.resolved_stepsize(problem.lipschitz)
    threshold = cfg.epsilon + problem.approx_level
    m = problem.constraint_count
    bound = problem.lipschitz * (1 + _NORM_SLACK)

    x = geom.center()
    x_sum = np.zeros(problem.dim)
    hits = np.zeros(m, dtype=np.int64)
    n_prod = 0
    trace: list[TraceRecord] = []
    t0 = time.perf_counter()
    for k in range(cfg.iterations):
        if m:
            values = np.array([problem.constraint_approx_value(l, x) for l in range(m)])
            worst = int(np.argmax(values))
            top = float(values[worst])
        else:
            worst, top = -1, -math.inf
        productive = top <= threshold
        if cfg.record_trace:
            obj = float(problem.exact_objective(x)) if problem.exact_objective is not None else None
            trace.append(
                TraceRecord(k, productive, None if productive else worst, top, obj, time.perf_counter() - t0)
            )
        if productive:
            x_sum += x
            n_prod += 1
            grad = np.asarray(problem.objective_grad(x, rng), dtype=float)
        else:
            hits[worst] += 1
            grad = np.asarray(problem.constraint_grad(worst, x, rng), dtype=float)
        assert np.linalg.norm(grad) <= bound, "stochastic subgradient exceeds the Lipschitz bound"
        x = mirror_step(x, eta * grad, geom)

    n_nonprod = cfg.iterations - n_prod
    if n_prod == 0:
        raise NoProductiveStepsError(f"no productive step in {cfg.iterations} iterations", tuple(trace))
    return SolverOutput(
        x_hat=x_sum / n_prod,
        lambda_hat=hits / n_prod,
        productive_count=n_prod,
        nonproductive_count=n_nonprod,
        trace=tuple(trace),
    )


def estimate_duals(trace: Sequence[TraceRecord], productive_count: int, m: int) -> np.ndarray:
    """lambda_l = #{non-productive steps on constraint l} / |I|."""
    if productive_count < 1:
        raise ValueError("dual estimate needs at least one productive step")
    lam = np.zeros(m)
    for rec in trace:
        if not rec.productive:
            lam[rec.chosen_constraint] += 1
    return lam / productive_count


def theoretical_iterations_primal(theta0_sq: float, M: float, sigma: float, epsilon: float) -> int:
    """Iterations after which the primal guarantee holds w.p. 1 - sigma."""
    if not 0.0 < sigma < 1.0:
        raise ValueError("sigma must lie in (0, 1)")
    if theta0_sq < 0 or M <= 0 or epsilon <= 0:
        raise ValueError("theta0_sq must be nonnegative, M and epsilon positive")
    return ceil_count(280.0 * theta0_sq * M**2 * math.log(1.0 / sigma) / epsilon**2)


def theoretical_iterations_primal_dual(
    theta_bar_sq: float, M: float, sigma: float, epsilon: float, kappa: float, strict: bool = False
) -> int:
    """Iterations after which the duality-gap guarantee holds w.p. 1 - sigma.

    The guarantee itself needs sigma < 1/2; ``strict=True`` enforces that,
    otherwise the bound is evaluated for any sigma in (0, 1).
    """
    if strict and not 0.0 < sigma < 0.5:
        raise ValueError("the guarantee needs sigma in (0, 1/2)")
    if not 0.0 < sigma < 1.0:
        raise ValueError("sigma must lie in (0, 1)")
    if theta_bar_sq < 0 or M <= 0 or epsilon <= 0 or kappa < 0:
        raise ValueError("invalid arguments")
    return ceil_count(
        128.0 * theta_bar_sq * M**2 * (17.0 * math.log(2.0 / sigma) + 2.0 * kappa) / epsilon**2
    )


def nemirovski_kappa(p: float, d: int) -> float:
    """Upper bound on the Nemirovski constant of the dual of (R^d, l_p).

    For p in [1, 2] the power bound d^(2/p - 1) is tightened, when d >= 3,
    by the logarithmic bound 2e log d - e.
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    if d < 1:
        raise ValueError("d must be a positive integer")
    if math.isinf(p):
        return float(d)
    if p <= 2:
        power = d ** (2.0 / p - 1.0)
        if d >= 3:
            return min(power, max(1.0, 2 * math.e * math.log(d) - math.e))
        return float(power)
    return d ** (1.0 - 2.0 / p)


MAX_GRID_DIM = 3


def _grid_axes(geom: ProxGeometry, resolution: float) -> list[np.ndarray]:
    axes = []
    for lo, hi in zip(geom.lo, geom.hi):
        n = max(1, math.ceil((hi - lo) / resolution - 1e-9)) + 1 if hi > lo else 1
        axes.append(np.linspace(lo, hi, n))
    return axes


def grid_error(problem: ConstrainedProblem, geom: ProxGeometry, lambda_hat, resolution: float) -> float:
    """Bound on how far the grid minimum of the Lagrangian sits above the true one.

    Lipschitz constant of the Lagrangian times the largest distance from a
    point of the box to the grid.
    """
    spacing = [ax[1] - ax[0] if ax.size > 1 else 0.0 for ax in _grid_axes(geom, resolution)]
    half_diag = 0.5 * math.sqrt(sum(s * s for s in spacing))
    return problem.lipschitz * (1.0 + float(np.sum(lambda_hat))) * half_diag


def lagrangian_grid_min(
    problem: ConstrainedProblem, geom: ProxGeometry, lambda_hat, resolution: float
) -> float:
    """min over grid points y of f(y) + sum_l lambda_l g_l(y)."""
    if problem.exact_objective is None or (problem.constraint_count and problem.exact_constraint is None):
        raise ValueError("grid duality gap needs exact objective and constraint oracles")
    if geom.dimension > MAX_GRID_DIM:
        raise ValueError(f"grid search supports at most {MAX_GRID_DIM} dimensions")
    lam = np.asarray(lambda_hat, dtype=float)
    axes = _grid_axes(geom, resolution)
    best = math.inf
    # chunk over the first axis to bound memory
    step = max(1, 2_000_000 // max(1, math.prod(a.size for a in axes[1:])))
    for start in range(0, axes[0].size, step):
        mesh = np.meshgrid(axes[0][start : start + step], *axes[1:], indexing="ij")
        Y = np.stack([g.ravel() for g in mesh], axis=1)
        L = np.asarray(problem.exact_objective(Y), dtype=float)
        for l in range(problem.constraint_count):
            if lam[l] != 0.0:
                L = L + lam[l] * np.asarray(problem.exact_constraint(l, Y), dtype=float)
        best = min(best, float(L.min()))
    return best


def duality_gap_bruteforce(
    problem: ConstrainedProblem,
    geom: ProxGeometry,
    x_hat: np.ndarray,
    lambda_hat,
    resolution: float = 1e-3,
) -> float:
    """f(x_hat) minus the grid estimate of the dual function at lambda_hat.

    The grid minimum is never below the true minimum, so the returned gap is
    at most the true gap and at least the true gap minus :func:`grid_error`.
    """
    f_x = float(problem.exact_objective(np.asarray(x_hat, dtype=float)))
    return f_x - lagrangian_grid_min(problem, geom, lambda_hat, resolution)
