"""Seeded, splittable random streams for bit-exact replay.

Every randomized run derives all of its randomness from one 64-bit seed via
named Philox streams (counter-based, so independent streams never collide).
The stream map for a run is recorded in its metadata; replaying with the
same seed reproduces every draw.
"""

from __future__ import annotations

from typing import Dict, Iterable

import numpy as np

ALGORITHM = "philox4x64"

#: Stage names used by a full simulated session, in spawn order.
SESSION_STREAMS = ("transmitter", "channel", "receiver", "disclosure", "amplification")


def stream(seed: int, index: int) -> np.random.Generator:
    """Return the index-th named substream of the given seed."""
    if index < 0:
        raise ValueError("stream index must be non-negative")
    root = np.random.SeedSequence(seed)
    child = root.spawn(index + 1)[index]
    return np.random.Generator(np.random.Philox(child))


def session_streams(seed: int) -> Dict[str, np.random.Generator]:
    """Spawn the fixed per-stage streams of one session."""
    children = np.random.SeedSequence(seed).spawn(len(SESSION_STREAMS))
    return {
        name: np.random.Generator(np.random.Philox(child))
        for name, child in zip(SESSION_STREAMS, children)
    }


def replay_metadata(seed: int, streams: Iterable[str] = SESSION_STREAMS) -> Dict[str, str]:
    """Replay record for run manifests: seed, algorithm, stream map."""
    return {
        "seed": str(seed),
        "rng_algorithm": ALGORITHM,
        "rng_streams": ",".join(streams),
    }
