"""Named random sub-streams derived from one root seed."""

from enum import IntEnum

import numpy as np


class Stream(IntEnum):
    """Independent purposes that consume randomness."""
    CORPUS = 1
    INIT = 2
    MASKING = 3
    SAMPLING = 4
    DATA_ORDER = 5
    TAGS = 6
    EVALUATION = 7
    ORACLE = 8


def stream_rng(seed: int, stream: Stream, *keys: int) -> np.random.Generator:
    """
    Build a generator for one sub-stream.

    Two calls with the same (seed, stream, keys) return generators that
    produce identical draws; any difference in the tuple gives an
    independent stream.
    """
    entropy = [int(seed), int(stream), *(int(k) for k in keys)]
    return np.random.default_rng(np.random.SeedSequence(entropy))
