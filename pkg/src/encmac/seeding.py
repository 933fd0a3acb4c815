"""Sub-seed derivation.

Every random stream in encmac is derived from one master seed with
``numpy.random.SeedSequence(master, spawn_key=(stream, *key))``:

    stream 1  search samples      key = (output width, sample index)
    stream 2  toy datasets        key = ()
    stream 3  array-sim inputs    key = ()
    stream 4  training            key = (phase,)
    stream 5  codebook k-means    key = ()
"""

import numpy as np

SEARCH = 1
DATASET = 2
ARRAY = 3
TRAIN = 4
CODEBOOK = 5


def seed_sequence(master: int, stream: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master), spawn_key=(int(stream), *(int(k) for k in key)))


def derive_rng(master: int, stream: int, *key: int) -> np.random.Generator:
    """Return an independent generator for ``(master, stream, *key)``."""
    return np.random.default_rng(seed_sequence(master, stream, *key))


def derive_seed(master: int, stream: int, *key: int) -> int:
    """Return a 32-bit integer seed, for libraries that want a plain int."""
    return int(seed_sequence(master, stream, *key).generate_state(1)[0])
