from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np
from scipy.spatial.distance import cdist

from ..errors import EmptyDescriptorSet

DEFAULT_RATIO = 0.7


@dataclass(frozen=True)
class Match:
    query_index: int
    train_index: int
    distance: float
    ratio: float


def match_descriptors(query, train, ratio_threshold: float = DEFAULT_RATIO) -> List[Match]:
    """Nearest-neighbour matching with the distance-ratio test.

    Ties resolve to the lowest train index.  A query whose two nearest
    neighbours are equally far (including both at distance 0) gets ratio 1.
    """
    q = np.asarray(query, dtype=np.float64)
    t = np.asarray(train, dtype=np.float64)
    if len(q) == 0 or len(t) == 0:
        raise EmptyDescriptorSet("both descriptor sets must be nonempty")
    dist = cdist(q, t)
    out = []
    if len(t) == 1:
        for qi in range(len(q)):
            out.append(Match(qi, 0, float(dist[qi, 0]), 0.0))
        return out
    order = np.argsort(dist, axis=1, kind="stable")[:, :2]
    rows = np.arange(len(q))
    d1 = dist[rows, order[:, 0]]
    d2 = dist[rows, order[:, 1]]
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(d2 > 0, d1 / d2, 1.0)
    for qi in np.nonzero(ratio < ratio_threshold)[0]:
        out.append(Match(int(qi), int(order[qi, 0]), float(d1[qi]), float(ratio[qi])))
    return out
