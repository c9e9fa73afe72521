"""Random edit sampling and the local-search neighbourhood.

All randomness flows through an explicit RngHandle so that a seed fully
determines every edit and move sequence, on any platform. Handles are
single-owner: one search run owns one handle.
"""

from __future__ import annotations

import random

from .source_model import Edit, EditKind, Patch, SourceRoster

__all__ = ["RngHandle", "UNIFORM_WEIGHTS", "sample_edit", "neighbor"]

UNIFORM_WEIGHTS = (1.0, 1.0, 1.0)  # deletion, insertion, replacement

_KINDS = (EditKind.DELETION, EditKind.INSERTION, EditKind.REPLACEMENT)


class RngHandle:
    """Seeded random stream (Mersenne Twister, stable across platforms)."""

    def __init__(self, seed: int):
        self.seed = int(seed) & (2**64 - 1)
        self._rng = random.Random(self.seed)

    def randrange(self, n: int) -> int:
        return self._rng.randrange(n)

    def uniform(self, a: float, b: float) -> float:
        return self._rng.uniform(a, b)

    def weighted_kind(self, weights) -> EditKind:
        return self._rng.choices(_KINDS, weights=weights, k=1)[0]


def _check_weights(weights) -> None:
    if len(weights) != 3 or any(w < 0 for w in weights) or sum(weights) <= 0:
        raise ValueError("operator weights must be three non-negative reals with a positive sum")


def sample_edit(roster: SourceRoster, rng: RngHandle, weights=UNIFORM_WEIGHTS) -> Edit:
    """Draw one random edit: kind by the configured weights (uniform by
    default), target and source uniformly over the mutable lines. A
    replacement whose source equals its target is a guaranteed no-op and
    is re-drawn away; on a one-line roster only deletion and insertion can
    come out."""
    _check_weights(weights)
    points = roster.mutable_points
    if not points:
        raise ValueError("roster has no mutable lines")
    while True:
        kind = rng.weighted_kind(weights)
        if kind is EditKind.REPLACEMENT and len(points) < 2:
            continue
        target = points[rng.randrange(len(points))]
        if kind is EditKind.DELETION:
            return Edit(kind, target)
        source = points[rng.randrange(len(points))]
        if kind is EditKind.REPLACEMENT:
            while source == target:
                source = points[rng.randrange(len(points))]
        return Edit(kind, target, source)


def neighbor(patch: Patch, roster: SourceRoster, rng: RngHandle,
             weights=UNIFORM_WEIGHTS) -> Patch:
    """One local-search move, chosen uniformly among the applicable ones:
    append a fresh edit; drop one existing edit; or swap one existing edit
    for a fresh one. The input patch is never modified, and the result
    differs from it in at most one edit slot."""
    moves = 3 if patch.edits else 1
    move = rng.randrange(moves)
    if move == 0:
        return Patch(patch.edits + (sample_edit(roster, rng, weights),))
    index = rng.randrange(len(patch.edits))
    if move == 1:
        return Patch(patch.edits[:index] + patch.edits[index + 1:])
    fresh = sample_edit(roster, rng, weights)
    return Patch(patch.edits[:index] + (fresh,) + patch.edits[index + 1:])
