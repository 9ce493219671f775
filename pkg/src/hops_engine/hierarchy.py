"""Truncated multi-index space of the hierarchy and precomputed coupling
coefficients.

A multi-index holds one non-negative integer per (bath, BCF-term) pair.  The
basis keeps every index with total order at most ``k_max`` (simplex
truncation), ordered by level and lexicographically within a level, so that
level blocks are contiguous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

from .bath import ExponentialBCF


class BasisSizeError(RuntimeError):
    """Raised when the truncated basis would exceed the configured bound."""


@dataclass(frozen=True)
class MultiIndex:
    """Per-bath occupation vectors, one entry per BCF expansion term."""

    entries: tuple[tuple[int, ...], ...]

    @property
    def order(self) -> int:
        return sum(sum(k) for k in self.entries)

    def flat(self) -> tuple[int, ...]:
        return tuple(x for k in self.entries for x in k)

    @classmethod
    def from_flat(cls, flat, term_counts) -> "MultiIndex":
        parts, pos = [], 0
        for m in term_counts:
            parts.append(tuple(int(x) for x in flat[pos : pos + m]))
            pos += m
        return cls(tuple(parts))


def basis_size(term_counts, k_max: int) -> int:
    """Number of multi-indices with total order <= k_max."""
    m_total = int(sum(term_counts))
    return math.comb(k_max + m_total, m_total)


def _enumerate_level(m_total: int, level: int) -> np.ndarray:
    """All compositions of ``level`` into ``m_total`` parts, lexicographically."""
    if level == 0:
        return np.zeros((1, m_total), dtype=np.int64)
    rows = []
    # multisets of slot positions; counts per slot give the composition
    for combo in combinations_with_replacement(range(m_total), level):
        row = np.zeros(m_total, dtype=np.int64)
        for c in combo:
            row[c] += 1
        rows.append(row)
    arr = np.array(rows)
    order = np.lexsort(arr.T[::-1])
    return arr[order]


@dataclass
class HierarchyBasis:
    """Enumerated simplex-truncated index set with neighbor lookup tables.

    ``up[i, m]`` / ``down[i, m]`` hold the ordinal of the index obtained by
    raising / lowering slot ``m`` of index ``i``, or ``-1`` where the
    truncation (or non-negativity) removes the neighbor.  Ordinal 0 is the
    zero index.
    """

    term_counts: tuple[int, ...]
    k_max: int
    indices: np.ndarray
    up: np.ndarray
    down: np.ndarray
    _position: dict = field(repr=False)

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def m_total(self) -> int:
        return int(sum(self.term_counts))

    def ordinal(self, index: MultiIndex) -> int:
        return self._position[index.flat()]

    def multi_index(self, ordinal: int) -> MultiIndex:
        return MultiIndex.from_flat(self.indices[ordinal], self.term_counts)

    def slot(self, bath: int, term: int) -> int:
        if not (0 <= bath < len(self.term_counts)):
            raise IndexError(f"bath {bath} out of range")
        if not (0 <= term < self.term_counts[bath]):
            raise IndexError(f"term {term} out of range for bath {bath}")
        return int(sum(self.term_counts[:bath])) + term

    def first_level_ordinals(self) -> np.ndarray:
        """Ordinals of the level-1 states, one per (bath, term) slot in slot order."""
        return self.up[0, :].copy()

    def level_ordinals(self, level: int) -> np.ndarray:
        mask = self.indices.sum(axis=1) == level
        return np.nonzero(mask)[0]


def build_basis(term_counts, k_max: int, max_size: int = 2_000_000) -> HierarchyBasis:
    """Enumerate the simplex-truncated basis with graded lexicographic order.

    Raises :class:`BasisSizeError` with the computed size if it exceeds
    ``max_size``.
    """
    term_counts = tuple(int(m) for m in term_counts)
    if any(m < 1 for m in term_counts):
        raise ValueError("every bath needs at least one BCF term")
    if k_max < 0:
        raise ValueError("k_max must be non-negative")
    size = basis_size(term_counts, k_max)
    if size > max_size:
        raise BasisSizeError(
            f"hierarchy basis would hold {size} indices (bound {max_size})"
        )
    m_total = int(sum(term_counts))
    blocks = [_enumerate_level(m_total, l) for l in range(k_max + 1)]
    indices = np.concatenate(blocks, axis=0)
    position = {tuple(int(x) for x in row): i for i, row in enumerate(indices)}

    up = np.full((size, m_total), -1, dtype=np.int64)
    down = np.full((size, m_total), -1, dtype=np.int64)
    for i, row in enumerate(indices):
        for m in range(m_total):
            raised = tuple(
                int(x) + 1 if j == m else int(x) for j, x in enumerate(row)
            )
            j = position.get(raised)
            if j is not None:
                up[i, m] = j
                down[j, m] = i
    return HierarchyBasis(term_counts, int(k_max), indices, up, down, position)


def neighbors(
    basis: HierarchyBasis, ordinal: int, bath: int, term: int
) -> tuple[int | None, int | None]:
    """Ordinals of ``k + e_{bath,term}`` and ``k - e_{bath,term}``.

    ``None`` marks states outside the truncated set, which couple as zero.
    """
    if not (0 <= ordinal < len(basis)):
        raise IndexError(f"ordinal {ordinal} out of range")
    m = basis.slot(bath, term)
    u = int(basis.up[ordinal, m])
    d = int(basis.down[ordinal, m])
    return (u if u >= 0 else None, d if d >= 0 else None)


@dataclass
class HopsCoefficients:
    """Flattened per-slot expansion data plus per-index damping.

    ``sqrt_G`` uses the principal branch throughout; only consistency of the
    branch matters for the physics.  ``damping[i] = sum_m k[i, m] * W[m]``.
    """

    bath_of_slot: np.ndarray
    G: np.ndarray
    W: np.ndarray
    sqrt_G: np.ndarray
    damping: np.ndarray
    num_baths: int

    @classmethod
    def from_bcfs(
        cls, bcfs: list[ExponentialBCF], basis: HierarchyBasis
    ) -> "HopsCoefficients":
        if tuple(b.num_terms for b in bcfs) != basis.term_counts:
            raise ValueError("BCF term counts do not match the basis")
        G = np.concatenate([b.G for b in bcfs])
        W = np.concatenate([b.W for b in bcfs])
        bath_of_slot = np.concatenate(
            [np.full(b.num_terms, n, dtype=np.int64) for n, b in enumerate(bcfs)]
        )
        damping = basis.indices @ W
        return cls(bath_of_slot, G, W, np.sqrt(G), damping, num_baths=len(bcfs))

    def slots_of_bath(self, bath: int) -> np.ndarray:
        return np.nonzero(self.bath_of_slot == bath)[0]


def coupling_edges(basis: HierarchyBasis, coeffs: HopsCoefficients):
    """Flat edge lists for the hierarchy couplings.

    For every pair ``(i, j = i + e_m)`` inside the basis the same prefactor
    ``sqrt(G_m * (k_i[m] + 1))`` multiplies both directions: the raising
    contribution ``L psi_i`` to state ``j`` and the lowering contribution
    ``L^dag psi_j`` to state ``i``.  Returns ``(lo, hi, slot, coef)`` arrays.
    """
    size, m_total = basis.indices.shape
    lo, hi, slot, coef = [], [], [], []
    for m in range(m_total):
        src = np.nonzero(basis.up[:, m] >= 0)[0]
        dst = basis.up[src, m]
        c = coeffs.sqrt_G[m] * np.sqrt(basis.indices[src, m] + 1.0)
        lo.append(src)
        hi.append(dst)
        slot.append(np.full(len(src), m, dtype=np.int64))
        coef.append(c)
    return (
        np.concatenate(lo),
        np.concatenate(hi),
        np.concatenate(slot),
        np.concatenate(coef).astype(np.complex128),
    )
