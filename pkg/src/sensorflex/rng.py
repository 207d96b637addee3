"""Seeded counter-based random number generation.

All randomness in the library flows through Philox (a 64-bit counter-based
generator), keyed by a user seed plus a small stream tag so that independent
consumers (weight init, per-epoch shuffles, per-chip synthesis) never share
a stream. Same (seed, stream) always yields the same values, on any platform.
"""

import numpy as np

# Stream tags. Keep these stable: changing them changes every seeded run.
STREAM_INIT = 0
STREAM_SHUFFLE = 1
STREAM_SYNTH = 2
STREAM_GRADCHECK = 3


def make_rng(seed: int, stream: int = 0, substream: int = 0) -> np.random.Generator:
    """Generator keyed by (seed, stream, substream).

    `substream` distinguishes parallel uses inside one stream, e.g. the
    epoch number for shuffles or the chip index for synthesis.
    """
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
                    np.uint64(((stream & 0xFFFFFFFF) << 32) | (substream & 0xFFFFFFFF))],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
