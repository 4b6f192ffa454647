"""
Reproducible random streams

All randomness in DeepNTK flows through counter-based Philox generators so
that experiments are reproducible bit for bit from a single integer seed.
"""

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    """
    Creates a Philox generator for a seed

    Args:
        seed: Non-negative 64-bit integer seed

    Returns:
        numpy Generator backed by a Philox bit generator
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
