"""Seeded, labelled random streams.

Every stochastic component in the simulator draws from a stream identified by
(master_seed, stream_id). The same pair always yields the same draw sequence,
independent of evaluation order elsewhere, which is what makes whole runs
byte-reproducible and per-client work safe to reorder or parallelise.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream named by a master seed and a label.

    The label is a free-form path such as ``"client:7:round:3"``; children
    extend it. ``generator()`` always returns a fresh generator at the start
    of the stream, so a function that takes an RngStream is a pure function
    of its arguments.
    """

    master_seed: int
    stream_id: str = "root"

    def child(self, *labels: object) -> "RngStream":
        suffix = ":".join(str(label) for label in labels)
        return RngStream(self.master_seed, f"{self.stream_id}:{suffix}")

    def generator(self) -> np.random.Generator:
        digest = hashlib.sha256(
            f"{self.master_seed}/{self.stream_id}".encode()
        ).digest()
        # 4 x 64-bit words of entropy; SeedSequence + PCG64 is stable across
        # platforms and numpy versions.
        words = [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 32, 8)]
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))
