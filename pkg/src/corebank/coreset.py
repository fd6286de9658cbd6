"""Fixed-capacity memory bank with greedy max-min updates.

The bank holds at most `capacity` float32 embeddings. A batch is folded in
by repeatedly taking its element farthest from the bank (max over the batch
of the nearest-bank distance) and, once the bank is full, trading it against
the closest pair already stored: the new element is admitted only while its
distance to the bank strictly exceeds the smallest pairwise distance inside
the bank, and admission evicts one member of that closest pair. The loop
therefore raises the bank's minimum pairwise distance monotonically and
stops on its own.

Nearest-neighbor distances are cached on both sides (bank-to-bank and
batch-to-bank) so one pass costs O(n + m) distance rows instead of a full
recompute per iteration. All ties resolve to the lowest index, which keeps
update sequences reproducible across runs.
"""

import time
from dataclasses import dataclass

import numpy as np

from .distance import nearest, pairwise_distances
from .tensor_io import EmbeddingBatch, MemoryBankSnapshot
from .validation import as_float_matrix

# Hard stop for the update loop. The spec'd behaviour terminates on its own
# (each replacement strictly raises the bank's min pair), this only protects
# against a numerics bug turning the loop infinite.
_LOOP_GUARD_FACTOR = 20


@dataclass
class UpdateStats:
    """Counters for one update() call.

    iterations counts loop passes including the final one that decides to
    stop, so it is always >= 1. final_min_pair is +inf while the bank holds
    fewer than two elements.
    """

    inserted: int
    evicted: int
    iterations: int
    wall_time: float
    final_min_pair: float


class MemoryBank:
    """Pre-allocated coreset buffer plus nearest-neighbor caches.

    nn_dist[i] / nn_idx[i] give the distance to and index of the nearest
    *other* stored element (lowest index on ties). The minimum pairwise
    distance of the bank is then nn_dist.min(), read off the cache in O(m).
    """

    def __init__(self, capacity: int, dim: int | None = None):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self._dim = None if dim is None else int(dim)
        self._elements = None
        if self._dim is not None:
            self._elements = np.empty((self.capacity, self._dim), dtype=np.float32)
        self._m = 0
        self._nn_dist = np.full(self.capacity, np.inf, dtype=np.float32)
        self._nn_idx = np.full(self.capacity, -1, dtype=np.int64)
        self.provenance: list[tuple[str, str]] = []

    def __len__(self) -> int:
        return self._m

    @property
    def size(self) -> int:
        return self._m

    @property
    def dim(self) -> int | None:
        return self._dim

    @property
    def elements(self) -> np.ndarray:
        """View of the stored embeddings, shape (size, dim). Do not mutate."""
        if self._elements is None:
            raise ValueError("bank is empty and has no dimensionality yet")
        return self._elements[: self._m]

    @property
    def nn_dist(self) -> np.ndarray:
        return self._nn_dist[: self._m]

    @property
    def nn_idx(self) -> np.ndarray:
        return self._nn_idx[: self._m]

    def min_pair(self) -> tuple[float, int, int] | None:
        """Smallest pairwise distance in the bank and the pair achieving it.

        Read from the nearest-neighbor cache. Returns (distance, i, j) with
        i < j, the lexicographically smallest such pair on ties, or None
        while the bank holds fewer than two elements.
        """
        m = self._m
        if m < 2:
            return None
        dists = self._nn_dist[:m]
        d = dists.min()
        best = None
        for i in np.where(dists == d)[0]:
            j = int(self._nn_idx[i])
            pair = (int(i), j) if i < j else (j, int(i))
            if best is None or pair < best:
                best = pair
        return float(d), best[0], best[1]

    # -- internal cache maintenance -------------------------------------

    def _insert(self, x: np.ndarray) -> None:
        if self._elements is None:
            self._dim = x.shape[0]
            self._elements = np.empty((self.capacity, self._dim), dtype=np.float32)
        m = self._m
        if m > 0:
            d_new = pairwise_distances(x[None, :], self.elements)[0]
            closer = d_new < self._nn_dist[:m]
            self._nn_dist[:m][closer] = d_new[closer]
            self._nn_idx[:m][closer] = m
            self._nn_dist[m] = d_new.min()
            self._nn_idx[m] = int(np.argmin(d_new))
        else:
            self._nn_dist[0] = np.inf
            self._nn_idx[0] = -1
        self._elements[m] = x
        self._m = m + 1

    def _evict(self, e: int) -> None:
        m = self._m
        self._elements[e : m - 1] = self._elements[e + 1 : m]
        self._nn_dist[e : m - 1] = self._nn_dist[e + 1 : m]
        self._nn_idx[e : m - 1] = self._nn_idx[e + 1 : m]
        del self.provenance[e]
        self._m = m - 1
        m = self._m
        if m == 0:
            return
        nn_idx = self._nn_idx[:m]
        stale = nn_idx == e  # lost their neighbor, need a rescan
        nn_idx[nn_idx > e] -= 1
        if m == 1:
            self._nn_dist[0] = np.inf
            self._nn_idx[0] = -1
            return
        rows = np.where(stale)[0]
        if rows.size:
            block = pairwise_distances(self._elements[rows], self.elements)
            block[np.arange(rows.size), rows] = np.inf  # not its own neighbor
            j = np.argmin(block, axis=1)
            self._nn_idx[rows] = j
            self._nn_dist[rows] = block[np.arange(rows.size), j]

    # -- update ----------------------------------------------------------

    def update(self, batch, provenance: tuple[str, str] | None = None) -> UpdateStats:
        """Fold a batch of embeddings into the bank.

        batch is an EmbeddingBatch or a float (n, D) array. Elements taken
        from an EmbeddingBatch carry its (task_id, source_id) as provenance;
        the explicit argument overrides. Returns UpdateStats.
        """
        if isinstance(batch, EmbeddingBatch):
            X = batch.embeddings
            if provenance is None:
                provenance = (batch.task_id, batch.source_id)
        else:
            X = as_float_matrix(batch, "batch")
        if provenance is None:
            provenance = ("", "")
        if self._dim is not None and X.shape[1] != self._dim:
            raise ValueError(
                f"batch has dim {X.shape[1]}, bank expects {self._dim}"
            )
        t0 = time.perf_counter()
        n = X.shape[0]
        # Batch-side cache: nearest bank distance per remaining batch row.
        if self._m > 0:
            b_dist, b_idx = nearest(X, self.elements)
        else:
            b_dist = np.full(n, np.inf, dtype=np.float32)
            b_idx = np.full(n, -1, dtype=np.int64)
        inserted = evicted = iterations = 0
        guard = _LOOP_GUARD_FACTOR * (n + self.capacity) + 100
        prev_pair = None
        while True:
            iterations += 1
            if iterations > guard:
                raise RuntimeError("update loop failed to terminate")
            i_star = int(np.argmax(b_dist))  # lowest index on ties
            d_star = float(b_dist[i_star])
            if self._m < self.capacity:
                # Fill phase: an empty bank admits the first element as is,
                # after that only elements at strictly positive distance
                # (repeats of stored points are at exactly 0 and never
                # picked again).
                if self._m > 0 and not d_star > 0.0:
                    break
            else:
                mp = self.min_pair()
                # each replacement trades the closest pair for a farther
                # element, so the bank's min pair must never shrink
                if mp is not None:
                    if prev_pair is not None and mp[0] < prev_pair:
                        raise RuntimeError(
                            f"min pair decreased during update: {prev_pair} -> {mp[0]}"
                        )
                    prev_pair = mp[0]
                if mp is None or not d_star > mp[0]:
                    break
                e = mp[1]  # evict the lower-index member of the closest pair
                self._evict(e)
                evicted += 1
                stale = b_idx == e
                b_idx[b_idx > e] -= 1
                rows = np.where(stale)[0]
                if rows.size:
                    b_dist[rows], b_idx[rows] = nearest(X[rows], self.elements)
            new_idx = self._m
            self._insert(X[i_star])
            self.provenance.append(provenance)
            inserted += 1
            d_x = pairwise_distances(X, X[i_star][None, :])[:, 0]
            closer = d_x < b_dist
            b_dist[closer] = d_x[closer]
            b_idx[closer] = new_idx
        mp = self.min_pair()
        return UpdateStats(
            inserted=inserted,
            evicted=evicted,
            iterations=iterations,
            wall_time=time.perf_counter() - t0,
            final_min_pair=np.inf if mp is None else mp[0],
        )

    # -- construction / persistence --------------------------------------

    @classmethod
    def from_elements(cls, elements, capacity: int | None = None,
                      provenance=None) -> "MemoryBank":
        """Build a bank holding the given rows, caches computed from scratch."""
        E = as_float_matrix(elements, "elements")
        m = E.shape[0]
        if capacity is None:
            capacity = m
        if m > capacity:
            raise ValueError(f"{m} elements exceed capacity {capacity}")
        bank = cls(capacity, dim=E.shape[1])
        bank._elements[:m] = E
        bank._m = m
        if provenance is None:
            provenance = [("", "")] * m
        if len(provenance) != m:
            raise ValueError("provenance length must match element count")
        bank.provenance = [tuple(p) for p in provenance]
        bank._rebuild_nn()
        return bank

    def _rebuild_nn(self) -> None:
        m = self._m
        if m < 2:
            if m == 1:
                self._nn_dist[0] = np.inf
                self._nn_idx[0] = -1
            return
        block_rows = 1024
        for start in range(0, m, block_rows):
            stop = min(start + block_rows, m)
            block = pairwise_distances(self._elements[start:stop], self.elements)
            block[np.arange(stop - start), np.arange(start, stop)] = np.inf
            j = np.argmin(block, axis=1)
            self._nn_idx[start:stop] = j
            self._nn_dist[start:stop] = block[np.arange(stop - start), j]

    def to_snapshot(self) -> MemoryBankSnapshot:
        emb = (np.empty((0, 0), dtype=np.float32) if self._elements is None
               else self.elements.copy())
        return MemoryBankSnapshot(
            embeddings=emb,
            capacity=self.capacity,
            provenance=list(self.provenance),
        )

    @classmethod
    def from_snapshot(cls, snap: MemoryBankSnapshot) -> "MemoryBank":
        if snap.embeddings.shape[0] == 0:
            dim = snap.embeddings.shape[1] or None
            return cls(snap.capacity, dim=dim)
        return cls.from_elements(snap.embeddings, snap.capacity, snap.provenance)

    def task_counts(self) -> dict[str, int]:
        """How many stored elements came from each task, insertion-ordered."""
        counts: dict[str, int] = {}
        for task_id, _ in self.provenance:
            counts[task_id] = counts.get(task_id, 0) + 1
        return counts


def _bank_from_indices(P, idx, capacity, provenance) -> MemoryBank:
    if provenance is not None:
        provenance = [provenance[i] for i in idx]
    return MemoryBank.from_elements(P[idx], capacity, provenance)


def greedy_kcenter(pool, k: int, seed_index: int = 0, provenance=None,
                   capacity: int | None = None) -> MemoryBank:
    """Bank of k pool elements chosen by farthest-point traversal.

    Starts from seed_index, then repeatedly adds the pool element farthest
    from the chosen set (lowest index on ties). provenance, when given, is
    the per-pool-row (task_id, source_id) list and is carried over.
    """
    P = as_float_matrix(pool, "pool")
    n = P.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if not 0 <= seed_index < n:
        raise ValueError(f"seed_index out of range: {seed_index}")
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = seed_index
    min_dist = pairwise_distances(P, P[seed_index][None, :])[:, 0]
    for t in range(1, k):
        nxt = int(np.argmax(min_dist))
        chosen[t] = nxt
        d = pairwise_distances(P, P[nxt][None, :])[:, 0]
        np.minimum(min_dist, d, out=min_dist)
    return _bank_from_indices(P, chosen, capacity or k, provenance)


def random_sample(pool, k: int, rng_seed: int, provenance=None,
                  capacity: int | None = None) -> MemoryBank:
    """Bank of k pool rows drawn without replacement, in sampled order.

    Uses numpy's default_rng (PCG64) seeded with rng_seed, so the draw is
    reproducible for a given numpy version.
    """
    P = as_float_matrix(pool, "pool")
    n = P.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(rng_seed)
    idx = rng.choice(n, size=k, replace=False).astype(np.int64)
    return _bank_from_indices(P, idx, capacity or k, provenance)


def covering_radius(elements, pool) -> float:
    """max over pool rows of the distance to the nearest given element."""
    if isinstance(elements, MemoryBank):
        elements = elements.elements
    d, _ = nearest(pool, elements)
    return float(d.max())


def export_coreset(bank: MemoryBank) -> tuple[MemoryBankSnapshot, dict[str, int]]:
    """Snapshot of the bank plus the per-task element histogram."""
    return bank.to_snapshot(), bank.task_counts()
