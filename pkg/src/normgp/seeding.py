"""Named RNG substreams.

Every source of randomness in the package derives from one user-facing seed
plus a stream tag, so that e.g. optimizer restarts and fold shuffling stay
independent and a single ``--seed`` reproduces an entire run.
"""

import numpy as np

TRAJECTORY = 1
SUBJECTS = 2
RESTARTS = 3
FOLDS = 4


def substream(seed: int, tag: int) -> np.random.Generator:
    """Generator for the (seed, tag) substream."""
    return np.random.default_rng([int(seed), int(tag)])
