"""Deterministic, collision-free random stream derivation.

Every consumer of randomness in a run gets its own counter-based stream,
keyed by a structured tuple (stream kind, particle index, cycle, ...), so
adding realizations in one place never shifts the noise anywhere else.
The truth stream carries no filter code: paired comparisons across filters
rely on identical truths and observations.
"""

from __future__ import annotations

import numpy as np

# stream kinds
TRUTH = 0
INIT = 1
PROPAGATION = 2
RESAMPLE = 3
CONTROL = 4

FILTER_CODES = {"pf": 0, "npf": 1, "var_npf": 2}


def stream_sequence(base_seed: int, *key: int) -> np.random.SeedSequence:
    """Child sequence for a structured key; stateless and order-free."""
    return np.random.SeedSequence(
        entropy=int(base_seed), spawn_key=tuple(int(k) for k in key)
    )


def child_sequence(
    seq: np.random.SeedSequence, *key: int
) -> np.random.SeedSequence:
    """Extend a sequence's key without mutating spawn state."""
    return np.random.SeedSequence(
        entropy=seq.entropy,
        spawn_key=tuple(seq.spawn_key) + tuple(int(k) for k in key),
    )


def stream_generator(seq: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed=seq))
