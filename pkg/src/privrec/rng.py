"""Named, splittable random streams on top of numpy's counter-based Philox.

Every stochastic component of the library (projection draws, sign diagonals,
sparse masks, trial loops, weight init, shuffling, negative sampling) pulls
its randomness from a :class:`Stream` addressed by a seed plus a path of
labels.  Two streams with different paths are statistically independent, and
drawing more values from one stream never shifts the values produced by
another.  That makes every pipeline reproducible from its seed alone and lets
trials run in parallel without coordination.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

__all__ = ["Stream", "substream"]

_MASK64 = (1 << 64) - 1


def _label_words(labels: tuple) -> tuple[int, ...]:
    """Map a label path to SeedSequence spawn-key words (stable across runs)."""
    words: list[int] = []
    for label in labels:
        if isinstance(label, (int, np.integer)):
            value = int(label) & _MASK64
            words.append(value & 0xFFFFFFFF)
            words.append(value >> 32)
        elif isinstance(label, str):
            # crc32 is deterministic, unlike the salted builtin hash()
            words.append(zlib.crc32(label.encode("utf-8")))
        else:
            raise TypeError(f"stream labels must be int or str, got {type(label)!r}")
    return tuple(words)


@dataclass(frozen=True)
class Stream:
    """A named position in the seed tree; cheap to split, cheap to pass around."""

    seed: int
    path: tuple = ()

    def child(self, *labels) -> "Stream":
        """Derive an independent sub-stream named by `labels`."""
        return Stream(self.seed, self.path + labels)

    def generator(self) -> np.random.Generator:
        """Instantiate the Philox generator for this stream position."""
        ss = np.random.SeedSequence(
            entropy=int(self.seed) & _MASK64, spawn_key=_label_words(self.path)
        )
        return np.random.Generator(np.random.Philox(ss))


def substream(seed: int, *labels) -> np.random.Generator:
    """Shorthand for ``Stream(seed).child(*labels).generator()``."""
    return Stream(seed).child(*labels).generator()
