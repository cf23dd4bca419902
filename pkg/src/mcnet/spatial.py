"""Exact k-nearest-neighbor search: a brute-force oracle and a uniform-grid index.

Both paths rank candidates by the key ``(distance, id)``, computing distances
with the same arithmetic, so their results agree bit for bit. When a query
is itself one of the base points (``query_ids``), it is placed first among
the zero-distance candidates; this keeps ``indices[i, 0] == i`` even in the
presence of duplicate points.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass(frozen=True, eq=False)
class NeighborIndex:
    indices: np.ndarray  # [M, K] int
    distances: np.ndarray  # [M, K] float, ascending per row

    @property
    def k(self):
        return self.indices.shape[1]

    def __len__(self):
        return self.indices.shape[0]


def _sq_dist(q, b):
    # Explicit per-axis sum so every code path rounds identically.
    dx = q[:, None, 0] - b[None, :, 0]
    dy = q[:, None, 1] - b[None, :, 1]
    dz = q[:, None, 2] - b[None, :, 2]
    return dx * dx + dy * dy + dz * dz


def _smallest_k(key, k):
    """Column positions of the k smallest entries per row, ordered by (key, column).

    A partition finds each row's k-th key; every entry at or below it (ties
    included) is then sorted exactly, which is far cheaper than sorting the
    whole row.
    """
    m, n = key.shape
    if k >= n:
        return np.argsort(key, axis=1, kind="stable")[:, :k]
    kth = np.partition(key, k - 1, axis=1)[:, k - 1]
    rows, cols = np.nonzero(key <= kth[:, None])
    order = np.lexsort((cols, key[rows, cols], rows))
    rows, cols = rows[order], cols[order]
    counts = np.bincount(rows, minlength=m)
    rank = np.arange(rows.size) - np.repeat(np.cumsum(counts) - counts, counts)
    keep = rank < k
    return cols[keep].reshape(m, k)


def _select(sq, cand_ids, k, self_ids):
    """Pick the k best candidates per row by (distance, id); candidates sorted by id."""
    key = sq
    if self_ids is not None:
        key = sq.copy()
        key[cand_ids[None, :] == self_ids[:, None]] = -1.0
    order = _smallest_k(key, k)
    ids = cand_ids[order]
    dist = np.sqrt(np.take_along_axis(sq, order, axis=1))
    return ids, dist


def _check(query, base, k):
    query = np.asarray(query, dtype=np.float64).reshape(-1, 3)
    base = np.asarray(base, dtype=np.float64).reshape(-1, 3)
    if k < 1 or k > base.shape[0]:
        raise ContractError(f"k = {k} must lie in [1, {base.shape[0]}] (number of base points)")
    return query, base


def knn_bruteforce(query_positions, base_positions, k, query_ids=None, chunk=512):
    """Exact KNN by exhaustive distance computation (the reference answer)."""
    query, base = _check(query_positions, base_positions, k)
    m = query.shape[0]
    indices = np.empty((m, k), dtype=np.int64)
    distances = np.empty((m, k))
    cand = np.arange(base.shape[0])
    qids = None if query_ids is None else np.asarray(query_ids, dtype=np.int64)
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        sq = _sq_dist(query[lo:hi], base)
        ids, dist = _select(sq, cand, k, None if qids is None else qids[lo:hi])
        indices[lo:hi] = ids
        distances[lo:hi] = dist
    return NeighborIndex(indices, distances)


def default_cell_size(positions):
    positions = np.asarray(positions, dtype=np.float64)
    diag = float(np.linalg.norm(positions.max(axis=0) - positions.min(axis=0)))
    n = positions.shape[0]
    size = diag / np.cbrt(n)
    return size if size > 0 else 1.0


class UniformGrid:
    """Base points bucketed into cubic cells of side ``cell_size``.

    Points are stored sorted by cell key so that each occupied cell is a
    contiguous run ``sorted_ids[start : start + count]``.
    """

    def __init__(self, base_positions, cell_size):
        if not cell_size > 0:
            raise ContractError(f"cell_size must be positive, got {cell_size}")
        self.base = np.asarray(base_positions, dtype=np.float64)
        self.cell_size = float(cell_size)
        self.origin = self.base.min(axis=0)
        cells = self.cell_of(self.base)
        self.dims = cells.max(axis=0) + 1
        keys = self._key(cells)
        order = np.argsort(keys, kind="stable")
        self.sorted_ids = order
        self.cell_keys, self.cell_start, self.cell_count = np.unique(
            keys[order], return_index=True, return_counts=True
        )

    def cell_of(self, pts):
        return np.floor((pts - self.origin) / self.cell_size).astype(np.int64)

    def _key(self, cells):
        return (cells[..., 0] * self.dims[1] + cells[..., 1]) * self.dims[2] + cells[..., 2]

    def block_runs(self, qcells, ring):
        """Occupied cells within ``ring`` of each query cell, as (start, count) runs."""
        r = np.arange(-ring, ring + 1)
        offsets = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
        nb = qcells[:, None, :] + offsets[None, :, :]
        inside = np.all((nb >= 0) & (nb < self.dims), axis=-1)
        keys = np.where(inside, self._key(nb), -1)
        pos = np.minimum(np.searchsorted(self.cell_keys, keys), len(self.cell_keys) - 1)
        found = inside & (self.cell_keys[pos] == keys)
        counts = np.where(found, self.cell_count[pos], 0)
        starts = self.cell_start[pos]
        return starts, counts

    def gather(self, starts, counts):
        """Padded, id-sorted candidate ids per row; padding is ``len(base)``."""
        m, n_off = counts.shape
        total = counts.sum(axis=1)
        cand = np.full((m, max(int(total.max()), 1)), self.base.shape[0], dtype=np.int64)
        flat_counts = counts.ravel()
        nz = np.flatnonzero(flat_counts)
        if nz.size:
            run_len = flat_counts[nz]
            run_start = starts.ravel()[nz]
            rows = np.repeat(nz // n_off, run_len)
            # Position of every element inside its run, then inside its row.
            within_run = np.arange(run_len.sum()) - np.repeat(np.cumsum(run_len) - run_len, run_len)
            row_offset = np.cumsum(counts, axis=1) - counts
            cols = np.repeat(row_offset.ravel()[nz], run_len) + within_run
            cand[rows, cols] = self.sorted_ids[np.repeat(run_start, run_len) + within_run]
        cand.sort(axis=1)
        return cand


def knn_grid(query_positions, base_positions, k, cell_size=None, query_ids=None, chunk=128):
    """Exact KNN accelerated by a uniform grid; identical output to brute force.

    Every query first searches the 3x3x3 block of cells around its own cell.
    A row is final once its k-th distance is strictly below the block radius
    (no point outside the block can beat or tie it) or the block holds every
    base point; the remaining rows retry with the ring grown by one. Rows are
    processed in chunks of similar candidate count to limit padding.
    """
    query, base = _check(query_positions, base_positions, k)
    if cell_size is None:
        cell_size = default_cell_size(base)
    grid = UniformGrid(base, cell_size)
    n = base.shape[0]
    m = query.shape[0]
    indices = np.empty((m, k), dtype=np.int64)
    distances = np.empty((m, k))
    qids = None if query_ids is None else np.asarray(query_ids, dtype=np.int64)
    qcells = grid.cell_of(query)
    padded = np.vstack([base, np.full((1, 3), np.inf)])
    todo = np.arange(m)
    ring = 1
    while todo.size:
        starts, counts = grid.block_runs(qcells[todo], ring)
        total = counts.sum(axis=1)
        retry = [todo[total < k]]
        ready = np.flatnonzero(total >= k)
        ready = ready[np.argsort(total[ready], kind="stable")]
        for lo in range(0, ready.size, chunk):
            sel = ready[lo:lo + chunk]
            rows = todo[sel]
            c = grid.gather(starts[sel], counts[sel])
            diff = query[rows][:, None, :] - padded[c]
            sq = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
            key = sq if qids is None else np.where(c == qids[rows][:, None], -1.0, sq)
            order = _smallest_k(key, k)
            ids = np.take_along_axis(c, order, axis=1)
            dist = np.sqrt(np.take_along_axis(sq, order, axis=1))
            # Margin guards against round-off in the cell assignment.
            done = (total[sel] == n) | (dist[:, -1] < (ring - 1e-6) * grid.cell_size)
            indices[rows[done]] = ids[done]
            distances[rows[done]] = dist[done]
            retry.append(rows[~done])
        todo = np.sort(np.concatenate(retry))
        ring += 1
    return NeighborIndex(indices, distances)


# Below this size brute force beats building a grid.
BRUTE_FORCE_LIMIT = 320
# Finer cells than the default pay off for the clumpy clouds seen in training.
AUTO_CELL_FACTOR = 0.5


def _search(method, n, cell_size):
    if method not in ("grid", "brute", "auto"):
        raise ValueError(f"unknown knn method {method!r}")
    if method == "brute" or (method == "auto" and n <= BRUTE_FORCE_LIMIT):
        return lambda q, b, k, ids=None: knn_bruteforce(q, b, k, query_ids=ids)
    if method == "auto" and cell_size is None:
        return lambda q, b, k, ids=None: knn_grid(
            q, b, k, AUTO_CELL_FACTOR * default_cell_size(b), query_ids=ids
        )
    return lambda q, b, k, ids=None: knn_grid(q, b, k, cell_size, query_ids=ids)


def knn_self(positions, k, method="grid", cell_size=None):
    """Neighbors of every point within its own cloud; self is neighbor 0.

    ``method`` is ``"grid"``, ``"brute"`` or ``"auto"`` (picks by size); all
    three return identical results.
    """
    positions = np.asarray(positions, dtype=np.float64)
    ids = np.arange(positions.shape[0])
    return _search(method, positions.shape[0], cell_size)(positions, positions, k, ids)


def subsample_index(positions, sampled_ids, method="grid"):
    """Map every point to the position (in ``sampled_ids``) of its nearest sampled point.

    Sampled points map to themselves; other ties go to the lowest sampled slot.
    """
    positions = np.asarray(positions, dtype=np.float64)
    sampled_ids = np.asarray(sampled_ids, dtype=np.int64)
    if sampled_ids.size == 0:
        raise ContractError("subsample_index needs at least one sampled point")
    if len(np.unique(sampled_ids)) != sampled_ids.size:
        raise ContractError("sampled ids must be distinct")
    if sampled_ids.min() < 0 or sampled_ids.max() >= positions.shape[0]:
        raise ContractError("sampled ids must index into the point set")
    coarse = positions[sampled_ids]
    search = _search(method, coarse.shape[0], None)
    mapping = search(positions, coarse, 1).indices[:, 0].copy()
    mapping[sampled_ids] = np.arange(sampled_ids.size)
    return mapping
