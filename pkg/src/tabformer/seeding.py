"""Deterministic RNG stream derivation.

Every random choice in the package flows from one top-level seed through
named streams, so that a run is a pure function of (config, data, seed).
Stream derivations used across the package:

  folds:        stream_rng(seed, "folds")
  fold f train: shuffle/dropout generators seeded with seed + f inside run_cv
  importance:   per-feature generator seeded with seed + feature_index
  generator:    stream_rng(seed, "synth", column_index) per column
"""

import numpy as np

_STREAMS = {
    "folds": 1,
    "shuffle": 2,
    "dropout": 3,
    "init": 4,
    "synth": 5,
    "importance": 6,
    "gradcheck": 7,
    "valsplit": 8,
}


def stream_rng(seed: int, stream: str, *key: int) -> np.random.Generator:
    """Generator for a named stream under a top-level seed.

    The (seed, stream id, key...) tuple feeds a SeedSequence, so streams
    never collide and the mapping is stable across runs and platforms.
    """
    if stream not in _STREAMS:
        raise KeyError(f"unknown RNG stream {stream!r}")
    return np.random.default_rng(
        np.random.SeedSequence((int(seed), _STREAMS[stream]) + tuple(int(k) for k in key))
    )
