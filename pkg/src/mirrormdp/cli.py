"""Command-line driver: estimate, solve, round, evaluate, and write traces."""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np

from . import environments, io
from .amdp_solver import AmdpProgram, AmdpTrace, round_policy, solve, theoretical_iterations
from .core_solver import SolverConfig
from .errors import ConvergenceError, NoProductiveStepsError, NotMixingError, ProtocolError
from .mdp_core import GenerativeModel, Mdp, estimate_mixing_time, optimal_gain_rvi, policy_value, POLICY_LAWS
from .model_estimation import estimate_model, required_samples_constraint
from .parallel import WorkerFailure, run_parallel

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2
SEED_ENV = "MIRRORMDP_SEED"
TRACE_COLUMNS = ("iter", "productive", "chosen_pair", "vbar", "max_constraint", "elapsed_ms")

SOLVER_ERRORS = (NoProductiveStepsError, NotMixingError, ConvergenceError, ProtocolError, WorkerFailure)


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    env: str = "riverswim"
    epsilon: float = 0.05
    iterations: int = 200_000
    pre_samples: Any = 1000  # int or "auto"
    sigma: float = 0.1
    seed: int = 0
    mode: str = "sequential"
    workers: int = 1
    transport: str = "threads"
    tmix: Any = "auto"  # float or "auto"
    tmix_policies: int = 1000
    trace_csv: Optional[str] = None
    policy_json: Optional[str] = None
    summary_json: Optional[str] = None
    timing: bool = False

    def validate(self) -> None:
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if not 0 < self.sigma < 1:
            raise ConfigError("sigma must lie in (0, 1)")
        if self.iterations < 1:
            raise ConfigError("iterations must be positive")
        if self.pre_samples != "auto" and (not isinstance(self.pre_samples, int) or self.pre_samples < 1):
            raise ConfigError("pre_samples must be a positive integer or 'auto'")
        if self.tmix != "auto" and not (isinstance(self.tmix, float) and self.tmix > 0):
            raise ConfigError("tmix must be positive or 'auto'")
        if self.tmix_policies < 1:
            raise ConfigError("tmix_policies must be positive")
        if self.mode not in ("sequential", "parallel"):
            raise ConfigError("mode must be 'sequential' or 'parallel'")
        if self.mode == "parallel" and self.workers < 1:
            raise ConfigError("parallel mode needs at least one worker")
        if self.transport not in ("threads", "inline"):
            raise ConfigError("transport must be 'threads' or 'inline'")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")


# --- parsing helpers ------------------------------------------------------------


def _int_or_auto(text: Any) -> Any:
    if text == "auto":
        return "auto"
    try:
        return int(text)
    except (TypeError, ValueError):
        raise ConfigError(f"expected an integer or 'auto', got {text!r}")


def _float_or_auto(text: Any) -> Any:
    if text == "auto":
        return "auto"
    try:
        return float(text)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number or 'auto', got {text!r}")


def load_env(name: str) -> Mdp:
    if name == "riverswim":
        return environments.river_swim()
    if name == "access-control":
        return environments.access_control()
    if name.startswith("json:"):
        try:
            return io.load_mdp(name[5:])
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"cannot load MDP from {name[5:]}: {exc}")
    raise ConfigError(f"unknown environment {name!r}; use riverswim, access-control or json:<path>")


def load_config_file(path: Optional[str]) -> dict:
    if path is None:
        return {}
    import tomli

    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except (OSError, tomli.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    return {k.replace("-", "_"): v for k, v in data.items()}


_CONVERTERS = {
    "epsilon": float,
    "iterations": int,
    "pre_samples": _int_or_auto,
    "sigma": float,
    "seed": int,
    "workers": int,
    "tmix": _float_or_auto,
    "tmix_policies": int,
    "timing": bool,
}


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """Flags override the TOML file; the seed falls back to $MIRRORMDP_SEED."""
    file_cfg = load_config_file(args.config)
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(file_cfg) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    merged: dict[str, Any] = {}
    for key in known:
        flag = getattr(args, key, None)
        if flag is not None and flag is not False:
            merged[key] = flag
        elif key in file_cfg:
            merged[key] = file_cfg[key]
    if "seed" not in merged and os.environ.get(SEED_ENV):
        merged["seed"] = os.environ[SEED_ENV]
    try:
        for key, conv in _CONVERTERS.items():
            if key in merged:
                merged[key] = conv(merged[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))
    cfg = RunConfig(**merged)
    cfg.validate()
    return cfg


# --- outputs ----------------------------------------------------------------------


def write_trace_csv(path: str, trace: AmdpTrace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        elapsed = trace.elapsed
        for k in range(trace.productive.size):
            w.writerow(
                (
                    k,
                    int(trace.productive[k]),
                    int(trace.chosen[k]),
                    repr(float(trace.vbar[k])),
                    repr(float(trace.max_constraint[k])),
                    "" if elapsed is None else f"{elapsed[k] * 1e3:.3f}",
                )
            )


# --- commands ---------------------------------------------------------------------


def resolve_tmix(cfg: RunConfig, mdp: Mdp) -> float:
    if cfg.tmix != "auto":
        return float(cfg.tmix)
    return float(estimate_mixing_time(mdp, cfg.tmix_policies, seed=cfg.seed))


def cmd_solve(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    mdp = load_env(cfg.env)
    t_mix = resolve_tmix(cfg, mdp)
    H = 4.0 * t_mix  # box radius of the bias block
    if cfg.pre_samples == "auto":
        n = required_samples_constraint(mdp.num_states, mdp.a_tot, cfg.sigma / 2.0, cfg.epsilon / 16.0, H)
    else:
        n = cfg.pre_samples
    model = estimate_model(GenerativeModel(mdp), n, cfg.seed)
    program = AmdpProgram(mdp, model, t_mix)
    scfg = SolverConfig(epsilon=cfg.epsilon, iterations=cfg.iterations, sigma=cfg.sigma, seed=cfg.seed)
    comm = None
    if cfg.mode == "parallel":
        workers = min(cfg.workers, mdp.a_tot)
        result = run_parallel(program, scfg, workers, mode=cfg.transport, timing=cfg.timing)
        sol, comm = result.solution, result.comm
    else:
        sol = solve(program, scfg, timing=cfg.timing)
    pi = round_policy(sol.dual, mdp)
    v_pi = policy_value(mdp, pi)
    rvi = optimal_gain_rvi(mdp)
    summary = {
        "env": mdp.name,
        "num_states": mdp.num_states,
        "num_pairs": mdp.a_tot,
        "epsilon": cfg.epsilon,
        "sigma": cfg.sigma,
        "seed": cfg.seed,
        "mode": cfg.mode,
        "workers": cfg.workers if cfg.mode == "parallel" else None,
        "pre_samples_per_pair": int(n),
        "t_mix_bound": t_mix,
        "iterations_theoretical": int(theoretical_iterations(program, cfg.epsilon, cfg.sigma)),
        "iterations_executed": cfg.iterations,
        "productive_steps": sol.productive_count,
        "nonproductive_steps": sol.nonproductive_count,
        "vbar_hat": float(sol.point.vbar),
        "policy_value": v_pi,
        "optimal_value": rvi.gain,
        "gap": rvi.gain - v_pi,
        "comm": comm.to_json() if comm is not None else None,
    }
    if cfg.trace_csv and sol.trace is not None:
        write_trace_csv(cfg.trace_csv, sol.trace)
    if cfg.policy_json:
        io.write_json(cfg.policy_json, io.policy_to_json(pi, mdp))
    if cfg.summary_json:
        io.write_json(cfg.summary_json, summary)
    print(
        f"{mdp.name}: v*={rvi.gain:.6f} v_pi={v_pi:.6f} gap={rvi.gain - v_pi:.6f} "
        f"|I|={sol.productive_count} |J|={sol.nonproductive_count} "
        f"N={cfg.iterations} (theoretical {summary['iterations_theoretical']})",
        file=out,
    )
    return EXIT_OK


def cmd_optimal(args: argparse.Namespace, out=None) -> int:
    out = out or sys.stdout
    mdp = load_env(args.env)
    res = optimal_gain_rvi(mdp, tol=args.tol)
    print(f"{res.gain:.10f}", file=out)
    for i in range(mdp.num_states):
        j = int(np.argmax(res.policy.state_probs(mdp, i)))
        print(f"state {i}: {mdp.actions[i][j]}", file=out)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, out=None) -> int:
    out = out or sys.stdout
    mdp = load_env(args.env)
    try:
        pi = io.load_policy(args.policy, mdp)
    except (OSError, ValueError, KeyError, IndexError, TypeError) as exc:
        raise ConfigError(f"cannot load policy {args.policy}: {exc}")
    print(f"{policy_value(mdp, pi):.10f}", file=out)
    return EXIT_OK


def cmd_mixing_time(args: argparse.Namespace, out=None) -> int:
    out = out or sys.stdout
    mdp = load_env(args.env)
    seed = args.seed if args.seed is not None else int(os.environ.get(SEED_ENV, 0) or 0)
    if args.policies < 1:
        raise ConfigError("policies must be positive")
    print(estimate_mixing_time(mdp, args.policies, t_max=args.t_max, seed=seed, law=args.law), file=out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mirrormdp", description=__doc__)
    p.add_argument("--config", help="TOML file with run settings (flags take precedence)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="estimate a model, solve, round and evaluate")
    s.add_argument("--env", help="riverswim, access-control or json:<path>")
    s.add_argument("--epsilon", type=float)
    s.add_argument("--iters", dest="iterations", type=int)
    s.add_argument("--pre-samples", dest="pre_samples", help="samples per pair, or 'auto'")
    s.add_argument("--sigma", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--mode", choices=("sequential", "parallel"))
    s.add_argument("--workers", type=int)
    s.add_argument("--transport", choices=("threads", "inline"))
    s.add_argument("--tmix", help="mixing-time bound, or 'auto' to estimate it")
    s.add_argument("--tmix-policies", dest="tmix_policies", type=int)
    s.add_argument("--trace-csv", dest="trace_csv")
    s.add_argument("--policy-json", dest="policy_json")
    s.add_argument("--summary-json", dest="summary_json")
    s.add_argument("--timing", action="store_true", help="fill elapsed_ms (makes traces run-dependent)")

    o = sub.add_parser("optimal", help="optimal gain and greedy policy by relative value iteration")
    o.add_argument("--env", default="riverswim")
    o.add_argument("--tol", type=float, default=1e-8)

    e = sub.add_parser("eval", help="exact long-run reward of a policy file")
    e.add_argument("--env", default="riverswim")
    e.add_argument("--policy", required=True)

    m = sub.add_parser("mixing-time", help="largest mixing time over random policies")
    m.add_argument("--env", default="riverswim")
    m.add_argument("--policies", type=int, default=1000)
    m.add_argument("--seed", type=int)
    m.add_argument("--t-max", dest="t_max", type=int, default=100_000)
    m.add_argument("--law", choices=POLICY_LAWS, default="weights")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "solve":
            return cmd_solve(build_run_config(args))
        if args.command == "optimal":
            return cmd_optimal(args)
        if args.command == "eval":
            return cmd_eval(args)
        return cmd_mixing_time(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SOLVER_ERRORS as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
