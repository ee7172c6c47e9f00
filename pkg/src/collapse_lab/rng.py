"""Seeded random streams.

Each trajectory owns a :class:`TrajectoryStreams` derived from
``(base_seed, trajectory_index)`` with a counter-based Philox generator,
so results do not depend on how trajectories are scheduled.  Index
choice and Gaussian noise come from separate child streams; a readout
consumes exactly one uniform and one standard normal, so drawing one at
a time or in blocks yields the same sequence.
"""

from __future__ import annotations

import numpy as np

_CHILDREN = ("choice", "noise", "aux_choice", "aux_noise", "select")


def _generator(seq: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seq))


class TrajectoryStreams:
    """Independent named child generators for one trajectory."""

    def __init__(self, base_seed: int, index: int = 0):
        if base_seed < 0 or index < 0:
            raise ValueError("seed and index must be non-negative")
        self.base_seed = int(base_seed)
        self.index = int(index)
        root = np.random.SeedSequence(self.base_seed, spawn_key=(self.index,))
        for name, child in zip(_CHILDREN, root.spawn(len(_CHILDREN))):
            setattr(self, name, _generator(child))

    def draw(self) -> tuple[float, float]:
        return float(self.choice.random()), float(self.noise.standard_normal())

    def draw_block(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        return self.choice.random(k), self.noise.standard_normal(k)

    def draw_aux(self) -> tuple[float, float]:
        return float(self.aux_choice.random()), float(self.aux_noise.standard_normal())

    def draw_aux_block(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        return self.aux_choice.random(k), self.aux_noise.standard_normal(k)


def substream(base_seed: int, index: int) -> TrajectoryStreams:
    return TrajectoryStreams(base_seed, index)
