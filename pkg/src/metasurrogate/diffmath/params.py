from __future__ import annotations

import hashlib

import numpy as np


class ParamSet(dict):
    """Named float64 arrays, iterated in lexicographic name order."""

    def __init__(self, items=(), **kwargs):
        merged = dict(items, **kwargs)
        super().__init__(
            (name, np.asarray(merged[name], dtype=np.float64)) for name in sorted(merged)
        )

    def __setitem__(self, key, value):
        raise TypeError("ParamSet is immutable; build a new one")

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self.items()})

    def subset(self, prefix: str) -> "ParamSet":
        return ParamSet({k: v for k, v in self.items() if k.startswith(prefix)})

    def num_values(self) -> int:
        return int(sum(v.size for v in self.values()))

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, value in self.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(value, dtype="<f8").tobytes())
        return h.hexdigest()
