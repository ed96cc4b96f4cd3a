"""
Seed Streams
Splittable, counter-keyed random streams so adding consumers never perturbs others
"""

import numpy as np
import torch

# Stream tags keep unrelated consumers of the same seed apart
STREAM_TUNING = 1
STREAM_DRIFT = 2
STREAM_TRIAL = 3
STREAM_SPLIT = 4
STREAM_DROPOUT = 5
STREAM_BATCHES = 6
STREAM_BOOTSTRAP = 7
STREAM_CACHE = 8
STREAM_DECODER = 9


def rng_stream(seed: int, *keys: int) -> np.random.Generator:
    """
    Independent numpy generator for (seed, keys...)

    Args:
        seed: Root seed (64-bit)
        keys: Counter path, e.g. (STREAM_TRIAL, session_seed, trial_index)

    Returns:
        np.random.Generator backed by Philox
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(sequence))


def torch_seed(seed: int, *keys: int) -> int:
    """Derive a 63-bit torch seed from a stream path"""
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(sequence.generate_state(1, dtype=np.uint64)[0]) & ((1 << 63) - 1)


def torch_generator(seed: int, *keys: int) -> torch.Generator:
    """CPU torch generator seeded from a stream path"""
    generator = torch.Generator()
    generator.manual_seed(torch_seed(seed, *keys))
    return generator
