"""Counter-keyed random streams.

Every draw in a Monte Carlo experiment comes from a stream identified by
``(seed, tag, replication)``.  Streams for different replications are
disjoint blocks of a Philox counter space, so the numbers a replication sees
do not depend on how replications are chunked or scheduled across workers.
Within a stream, coefficient ``k`` always receives the ``k``-th pair of
draws, so enlarging the truncation index keeps the leading draws unchanged.
"""

from dataclasses import dataclass

import numpy as np

# Tags separate the purposes a replication draws randomness for.  Keeping the
# observation noise on its own tag means two experiments that differ only in
# whether a prior is sampled still share the full noise stream.
NOISE = 0
PRIOR = 1
AUX = 2

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RandomStream:
    """Deterministic source of standard normals for one replication."""

    seed: int
    replication: int = 0
    tag: int = NOISE

    def __post_init__(self):
        if self.seed < 0 or self.replication < 0 or self.tag < 0:
            raise ValueError("seed, replication and tag must be nonnegative")

    def generator(self) -> np.random.Generator:
        # Philox counters are 256-bit; the two high words hold (tag, replication),
        # leaving 2**128 draws per stream before any overlap is possible.
        counter = [0, 0, self.tag & _MASK64, self.replication & _MASK64]
        return np.random.Generator(np.random.Philox(key=self.seed, counter=counter))

    def with_tag(self, tag: int) -> "RandomStream":
        return RandomStream(self.seed, self.replication, tag)

    def for_replication(self, replication: int) -> "RandomStream":
        return RandomStream(self.seed, replication, self.tag)
