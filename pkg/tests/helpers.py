"""Small scenario builders shared by the simulation-level tests."""
from __future__ import annotations

import copy
import json

import numpy as np

from mfsac.config import SCENARIO_DIR, parse_scenario


def scalar_dict(a=-1.0, b=1.0, q=1.0, r=1.0, d=0.0, gamma=0.0, c=0.0, eta=0.0, **sim):
    """Single-atom scalar scenario; ``sim`` entries override the simulation block."""
    data = {
        "name": "scalar_single",
        "dims": {"n": 1, "m": 1, "r": 1},
        "R": [[r]],
        "noise": {"D": [[d]], "Sigma": [[1.0]]},
        "coupling": {"Gamma": [[gamma]], "c": [c], "eta": [eta]},
        "theta_set": {"A": [-3.0, 3.0], "B": [0.2, 3.0], "Q": [0.1, 5.0], "q_floor": 0.1,
                      "invertible_B_margin": 0.1},
        "distribution": {"family": "categorical", "atoms": [{"A": [[a]], "B": [[b]], "Q": [[q]]}],
                         "zeta": [1.0], "delta": 0.0},
        "sim": {"N": 1, "dt": 0.01, "T": 50.0, "mode": "oracle", "seed": 1, "record_agents": 1,
                "record_every": 0.1},
    }
    data["sim"].update(sim)
    return data


def scalar_single(**kw):
    return parse_scenario(scalar_dict(**kw))


def packaged(name: str) -> dict:
    return json.loads((SCENARIO_DIR / name).read_text())


def variant(name: str, **sim):
    data = copy.deepcopy(packaged(name))
    data["sim"].update(sim)
    return parse_scenario(data, name)


def read_csv(path):
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
