"""Seeded, labeled random substreams.

Every random draw in the package comes from a Philox (counter-based) bit
generator keyed by ``(seed, crc32(label), *index)``.  Distinct labels give
independent streams, and block indices let disjoint ranges of a long stream
be generated in any order (or in parallel) with bitwise-identical results.
Standard normals are produced by numpy's ``Generator.standard_normal``
(ziggurat transform), which is deterministic for a fixed numpy version.
"""

import zlib

import numpy as np

_U64 = (1 << 64) - 1


def label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def substream(seed: int, label: str, *index: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, label, *index)``."""
    if seed < 0:
        raise ValueError(f"seed must be a non-negative 64-bit integer, got {seed}")
    entropy = [int(seed) & _U64, label_key(label), *(int(i) for i in index)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, label: str, *index: int) -> int:
    """A 63-bit child seed, for handing to functions that take an integer seed."""
    return int(substream(seed, label, *index).integers(0, 1 << 63))


def normal_blocks(seed: int, label: str, n: int, dim: int, block: int = 8192):
    """Yield ``(start, rows)`` pairs covering ``n`` standard-normal rows.

    Row ``s`` always comes from block ``s // block`` of the labeled stream, so
    any block can be regenerated independently of the others and of ``n``.
    """
    for b, start in enumerate(range(0, n, block)):
        stop = min(start + block, n)
        rows = substream(seed, label, b).standard_normal((block, dim))
        yield start, rows[: stop - start]


def blocked_normals(seed: int, label: str, n: int, dim: int, block: int = 8192) -> np.ndarray:
    """Draw an ``(n, dim)`` standard-normal array block by block."""
    out = np.empty((n, dim))
    for start, rows in normal_blocks(seed, label, n, dim, block):
        out[start:start + len(rows)] = rows
    return out
