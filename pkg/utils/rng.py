import numpy as np

# Stream ids, one per consumer of randomness
STREAM_SAMPLING = 1
STREAM_INIT = 2
STREAM_MINIBATCH = 3
STREAM_INITIAL_CONDITION = 4
STREAM_TRACKING_RESTARTS = 5
STREAM_LANGEVIN = 6


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """
    Create a counter-based (Philox) generator for a seed and stream path

    Args:
        seed (int): Experiment seed
        *stream (int): Substream identifiers

    Returns:
        np.random.Generator: Deterministic generator for this substream
    """
    if seed < 0:
        raise ValueError(f"Seed must be nonnegative, got {seed}")
    sequence = np.random.SeedSequence([int(seed), *(int(s) for s in stream)])
    return np.random.Generator(np.random.Philox(sequence))
