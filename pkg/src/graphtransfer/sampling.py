"""Relation-loss edge sampling: the regularized ratio sampler and the fixed-m baseline.

Pairs are ``(sample, i, j)`` triples with ``i < j`` so a batch of graphs can be
sampled jointly without ever pairing nodes from different samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .graph import SpatialGraph

Pair = tuple[int, int, int]

DEFAULT_RATIO = 0.15


@dataclass
class EdgeSampleSet:
    active: list[Pair]
    background: list[Pair]
    ratio_target: float

    @property
    def achieved_ratio(self) -> float:
        return len(self.active) / len(self.background) if self.background else math.inf

    def labeled(self) -> list[tuple[Pair, int]]:
        return [(p, 1) for p in self.active] + [(p, 0) for p in self.background]

    def to_json(self) -> dict:
        return {"ratio_target": self.ratio_target,
                "n_active": len(self.active),
                "n_background": len(self.background),
                "achieved_ratio": (self.achieved_ratio if self.background else None),
                "active": [list(p) for p in self.active],
                "background": [list(p) for p in self.background]}


def enumerate_edges(graphs: Sequence[SpatialGraph]) -> tuple[list[Pair], list[Pair]]:
    active, background = [], []
    for s, g in enumerate(graphs):
        edges = {(min(a, b), max(a, b)) for a, b in g.edges}
        n = g.num_nodes
        for i in range(n):
            for j in range(i + 1, n):
                (active if (i, j) in edges else background).append((s, i, j))
    return active, background


def _exact_ratio(r: float) -> Fraction:
    # read r as the decimal the caller wrote, so 0.15 means 3/20 exactly
    return Fraction(repr(float(r)))


def _check_ratio(r: float) -> None:
    if not 0.0 < r <= 1.0:
        raise ValueError(f"ratio r must lie in (0, 1], got {r}")


def _upsample(base: list[Pair], target: int, rng: np.random.Generator) -> list[Pair]:
    order = [base[k] for k in rng.permutation(len(base))]
    return order + [order[i % len(order)] for i in range(len(order), target)]


def regularized_sample(active: Sequence[Pair], background: Sequence[Pair],
                       r: float = DEFAULT_RATIO, rng_seed: int = 0) -> EdgeSampleSet:
    """Duplicate the under-represented class until ``|A| / |B|`` reaches ``r``.

    The active list is cyclically padded to ``ceil(|B| r)`` entries when
    ``|B| r > |A|``; otherwise the background list is padded to
    ``ceil(|A| / r)`` when that exceeds ``|B|``.  At most one side grows.
    """
    _check_ratio(r)
    active, background = list(active), list(background)
    rng = np.random.default_rng(rng_seed)
    rq = _exact_ratio(r)
    na, nb = len(active), len(background)
    if na and nb * rq > na:
        active = _upsample(active, math.ceil(nb * rq), rng)
    elif nb and na / rq > nb:
        background = _upsample(background, math.ceil(na / rq), rng)
    return EdgeSampleSet(active, background, float(r))


def fixed_m_sample(active: Sequence[Pair], background: Sequence[Pair], m: int,
                   rng_seed: int = 0) -> EdgeSampleSet:
    """All active pairs plus up to ``m - |A|`` background pairs drawn without replacement."""
    active, background = list(active), list(background)
    if m < len(active):
        raise ValueError(f"m={m} is smaller than the {len(active)} active edges")
    rng = np.random.default_rng(rng_seed)
    k = min(m - len(active), len(background))
    picks = sorted(rng.choice(len(background), size=k, replace=False).tolist()) if k else []
    chosen = [background[i] for i in picks]
    ratio = len(active) / len(chosen) if chosen else 1.0
    return EdgeSampleSet(active, chosen, min(ratio, 1.0))
