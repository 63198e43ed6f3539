from __future__ import annotations

import numpy as np

from metasurrogate.errors import ExhaustedError


def random_search_step(candidates, visited, rng: np.random.Generator) -> int:
    """Index of a uniformly chosen candidate not yet in ``visited``."""
    n = len(candidates)
    seen = set(int(i) for i in visited)
    free = [i for i in range(n) if i not in seen]
    if not free:
        raise ExhaustedError(f"all {n} candidates already visited")
    return free[int(rng.integers(len(free)))]
