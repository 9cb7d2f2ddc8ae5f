"""JSON formats for MDPs, policies and empirical models."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Union

import numpy as np

from .mdp_core import Mdp, Policy
from .model_estimation import EmpiricalModel

PathLike = Union[str, Path]


def mdp_to_json(mdp: Mdp) -> dict:
    return {
        "name": mdp.name,
        "num_states": mdp.num_states,
        "actions": [list(a) for a in mdp.actions],
        "transitions": mdp.transitions.tolist(),
        "rewards": mdp.rewards.tolist(),
    }


def mdp_from_json(data: dict) -> Mdp:
    """Build an MDP from a dict.

    ``actions`` is either a list of action-name lists or a list of per-state
    action counts; rows of ``transitions`` follow state order, then action
    order within a state.
    """
    S = int(data["num_states"])
    acts = data.get("actions")
    if acts is None:
        acts = [1] * S
    actions = [[str(a) for a in range(x)] if isinstance(x, int) else list(x) for x in acts]
    return Mdp(S, actions, np.array(data["transitions"], dtype=float), np.array(data["rewards"], dtype=float),
               name=str(data.get("name", "mdp")))


def policy_to_json(policy: Policy, mdp: Mdp) -> dict:
    return {
        "by_state": [
            {mdp.actions[i][a]: p for a, p in enumerate(probs)} for i, probs in enumerate(policy.as_lists(mdp))
        ],
        "probs": policy.probs.tolist(),
    }


def policy_from_json(data: dict, mdp: Mdp) -> Policy:
    """Accepts ``probs`` (flat, length A_tot) or ``by_state`` (lists or action-name maps)."""
    if "probs" in data:
        pi = Policy(np.array(data["probs"], dtype=float))
    else:
        p = np.zeros(mdp.a_tot)
        for i, entry in enumerate(data["by_state"]):
            items = entry.items() if isinstance(entry, dict) else enumerate(entry)
            for a, prob in items:
                p[mdp.pair_index(i, a)] = float(prob)
        pi = Policy(p)
    pi.validate(mdp)
    return pi


def read_json(path: PathLike) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_json(path: PathLike, data: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_mdp(path: PathLike) -> Mdp:
    return mdp_from_json(read_json(path))


def load_policy(path: PathLike, mdp: Mdp) -> Policy:
    return policy_from_json(read_json(path), mdp)


def load_model(path: PathLike) -> EmpiricalModel:
    return EmpiricalModel.from_json(read_json(path))
