"""Named random substreams derived from one integer seed."""
import zlib

import numpy as np


def substream_seed(seed: int, name: str) -> list[int]:
    return [int(seed), zlib.crc32(name.encode("utf-8"))]


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name`` (e.g. "data", "init", "batching", "sampling")."""
    return np.random.default_rng(substream_seed(seed, name))
