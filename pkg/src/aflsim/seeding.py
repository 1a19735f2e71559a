"""Named random streams derived from one master seed.

Each subsystem gets its own ``SeedSequence`` child keyed by a stable hash of
its name, so changing how one subsystem consumes randomness never shifts the
draws seen by another.
"""
import zlib

import numpy as np

STREAMS = ("env", "data", "model", "fl", "agent", "noise", "replay")


def stream_seed(master: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(master), spawn_key=(zlib.crc32(name.encode("utf-8")),))


def stream(master: int, name: str) -> np.random.Generator:
    return np.random.default_rng(stream_seed(master, name))


def streams(master: int) -> dict[str, np.random.Generator]:
    return {name: stream(master, name) for name in STREAMS}
