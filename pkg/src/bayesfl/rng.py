"""Counter-based random substreams.

Every random draw in a simulation is taken from a generator keyed by
``(master seed, purpose, *indices)``, e.g. ``(seed, NOISE, device, round)``.
Results therefore do not depend on the order in which devices or seeds are
processed, nor on how many workers process them.
"""

import enum

import numpy as np


class Stream(enum.IntEnum):
    DATA = 0
    PLACEMENT = 1
    FADING = 2
    NOISE = 3
    VOTE = 4
    INIT = 5
    BATCH = 6
    MONTE_CARLO = 7


def substream(seed, purpose, *keys):
    """Return an independent generator for ``(seed, purpose, *keys)``.

    All keys must be non-negative integers. The key count is part of the
    entropy because SeedSequence ignores trailing zeros, which would
    otherwise make ``(s, p)`` and ``(s, p, 0)`` the same stream.
    """
    entropy = [int(seed), int(purpose), len(keys), *(int(k) for k in keys)]
    if any(e < 0 for e in entropy):
        raise ValueError(f"substream keys must be non-negative, got {entropy}")
    return np.random.default_rng(np.random.SeedSequence(entropy))
