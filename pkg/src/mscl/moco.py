"""Momentum key encoders and FIFO memory banks."""

import numpy as np


class MemoryBank:
    """Fixed-capacity ring buffer of unit-norm key embeddings."""

    def __init__(self, capacity, dim):
        if capacity < 1 or dim < 1:
            raise ValueError(f"bank needs positive capacity and dim, got {capacity}, {dim}")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self.vectors = np.zeros((self.capacity, self.dim))
        self.cursor = 0
        self.fill = 0

    def __len__(self):
        return self.fill

    def enqueue(self, keys):
        keys = np.atleast_2d(np.asarray(keys, dtype=np.float64))
        n = keys.shape[0]
        if keys.shape[1] != self.dim:
            raise ValueError(f"key dim {keys.shape[1]} != bank dim {self.dim}")
        if n > self.capacity:
            raise ValueError(f"batch of {n} keys exceeds bank capacity {self.capacity}")
        norms = np.linalg.norm(keys, axis=1, keepdims=True)
        if np.any(norms == 0) or not np.all(np.isfinite(norms)):
            raise ValueError("cannot enqueue a zero or non-finite key")
        keys = keys / norms
        slots = (self.cursor + np.arange(n)) % self.capacity
        self.vectors[slots] = keys
        self.cursor = int((self.cursor + n) % self.capacity)
        self.fill = min(self.capacity, self.fill + n)

    def negatives(self):
        """Copy of the filled entries (all of them once the bank is warm)."""
        if self.fill == 0:
            raise ValueError("memory bank is empty; enqueue keys before computing the loss")
        return self.vectors[: self.fill].copy()

    def state(self):
        return {"vectors": self.vectors.copy(), "cursor": self.cursor, "fill": self.fill}

    def load_state(self, vectors, cursor, fill):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.shape != self.vectors.shape:
            raise ValueError(f"bank state shape {vectors.shape} != {self.vectors.shape}")
        self.vectors = vectors.copy()
        self.cursor = int(cursor)
        self.fill = int(fill)


def ema_update(key_params, query_params, momentum):
    """In place ``key <- m * key + (1 - m) * query`` for every named array."""
    if not 0.0 <= momentum <= 1.0:
        raise ValueError(f"EMA momentum must lie in [0, 1], got {momentum}")
    if set(key_params) != set(query_params):
        raise ValueError("key and query parameter names differ")
    for name, k in key_params.items():
        q = query_params[name]
        if k.shape != q.shape:
            raise ValueError(f"{name}: key shape {k.shape} != query shape {q.shape}")
        if momentum == 1.0:
            continue
        if momentum == 0.0:
            k[...] = q
        else:
            k *= momentum
            k += (1.0 - momentum) * q
    return key_params
