"""Deterministic noise streams.

Replicate k, component j draws from a PCG64 generator seeded with
numpy's SeedSequence(master_seed, spawn_key=(k, j)). SeedSequence hashes
the entropy and the spawn key together, so every (master, k, j) triple
gets its own stream no matter which thread asks for it or in what order.
"""

import numbers

import numpy as np

from robust_hedge.errors import ConfigError

# component indices
NOISE = 0
PRICE_NOISE = 1
VOL_NOISE = 2

MAX_SEED = 2 ** 64


class SeedSpec:
    def __init__(self, master_seed):
        if isinstance(master_seed, bool) or not isinstance(
            master_seed, numbers.Integral
        ):
            raise ConfigError("Seed must be an integer, got {!r}".format(master_seed))
        if not 0 <= master_seed < MAX_SEED:
            raise ConfigError("Seed must fit in 64 bits, got {}".format(master_seed))
        self.master_seed = int(master_seed)

    def generator(self, replicate=0, component=NOISE):
        seq = np.random.SeedSequence(
            self.master_seed, spawn_key=(int(replicate), int(component))
        )
        return np.random.Generator(np.random.PCG64(seq))

    def increments(self, steps, replicate=0, component=NOISE):
        """Wiener increments over the given step lengths"""
        steps = np.asarray(steps, dtype=float)
        z = self.generator(replicate, component).standard_normal(len(steps))
        return np.sqrt(steps) * z

    def increments_batch(self, steps, replicates, component=NOISE):
        """One row of increments per replicate index"""
        return np.stack([self.increments(steps, k, component) for k in replicates])

    def __eq__(self, other):
        return isinstance(other, SeedSpec) and other.master_seed == self.master_seed

    def __hash__(self):
        return hash(self.master_seed)

    def __repr__(self):
        return "SeedSpec({})".format(self.master_seed)


def as_seed(seed):
    return seed if isinstance(seed, SeedSpec) else SeedSpec(seed)
