"""
Counter-based random streams keyed by (master seed, purpose, agent).

Each stream is an independent Philox generator, so the order in which
agents or purposes are drawn never changes any other stream.
"""
from __future__ import annotations

import numpy as np

PURPOSES = {"theta": 1, "x0": 2, "plant": 3, "dither": 4, "obs": 5, "probe": 6, "sweep": 7}


def stream(seed: int, purpose: str, agent: int = 0) -> np.random.Generator:
    try:
        code = PURPOSES[purpose]
    except KeyError:
        raise ValueError(f"unknown stream purpose {purpose!r}") from None
    ss = np.random.SeedSequence(int(seed), spawn_key=(code, int(agent)))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, index: int) -> int:
    """Deterministic child seed, e.g. for one value of a parameter sweep."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(PURPOSES["sweep"], int(index)))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


class StreamBank:
    """One live generator per agent for a given purpose."""

    def __init__(self, seed: int, purpose: str, agents):
        self.agents = [int(a) for a in agents]
        self._gens = [stream(seed, purpose, a) for a in self.agents]

    def normal(self, steps: int, dim: int) -> np.ndarray:
        out = np.empty((len(self._gens), steps, dim))
        for row, g in enumerate(self._gens):
            out[row] = g.standard_normal((steps, dim))
        return out

    def generator(self, index: int) -> np.random.Generator:
        return self._gens[index]
