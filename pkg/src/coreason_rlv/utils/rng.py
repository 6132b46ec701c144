# Prosperity Public License 3.0

import numpy as np

# Stream tags keep independent consumers of the run seed from overlapping.
TASKS = 1
ROLLOUT = 2
ADVANTAGE = 3
BALANCE = 4
PROBE_TASKS = 5
PROBE_ROLLOUT = 6
EVAL_TASKS = 7
EVAL_ROLLOUT = 8
SUBSAMPLE = 9
SERVER = 10
PARAMS_INIT = 11


def rng_stream(seed: int, *keys: int) -> np.random.Generator:
    """
    Builds an independent generator for the stream identified by (seed, *keys).

    Every (iteration, prompt, sample) gets its own stream so results do not depend on
    the order or the number of workers that consume them.
    """
    entropy: list[int] = [int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(k) for k in keys)]
    return np.random.default_rng(np.random.SeedSequence(entropy))
