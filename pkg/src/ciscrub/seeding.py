"""Deterministic per-stage random streams derived from one 64-bit seed.

A run seed is expanded with :class:`numpy.random.SeedSequence`; every stage
draws from the child keyed by ``(stage_id, *counters)``.  Stage ids are fixed
so a stream never depends on how many numbers another stage consumed:

========  =====================================
stage id  consumer
========  =====================================
0         training (init + minibatch order)
1         input perturbations
2         tie-breaking noise
3         Gaussian-mechanism noise
4         synthetic data generation
5         random baselines / shuffles in experiments
========  =====================================

Counters (removal ordinal, filter round, call index) are appended to the key.
"""

import numpy as np

TRAIN = 0
PERTURB = 1
TIE = 2
DP_NOISE = 3
DATA = 4
BASELINE = 5

_MASK64 = (1 << 64) - 1


def check_seed(seed):
    seed = int(seed)
    if seed < 0 or seed > _MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def stream(seed, stage, *counters):
    """Return a ``Generator`` for ``stage`` (plus optional counters) of ``seed``."""
    key = (int(stage),) + tuple(int(c) for c in counters)
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(seed, stage, *counters):
    """A derived 64-bit seed, for APIs that take an integer seed."""
    key = (int(stage),) + tuple(int(c) for c in counters)
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint64)[0])
