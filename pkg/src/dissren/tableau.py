"""Diagram and tableau bookkeeping for the cancellation of b-insertions.

A diagram is a list of l+1 row lengths; between consecutive rows sits one
A'A pair.  A tableau fills each block with 0 (an ib insertion) or 1 (a
collapsed contraction b delta).  Signed tableau sums vanish for every
non-empty diagram, which is what leaves only normally ordered terms.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from itertools import product
from math import comb

import numpy as np

from .errors import CapacityError

MAX_BLOCKS = 24


@dataclass(frozen=True)
class Diagram:
    rows: tuple

    def __post_init__(self):
        rows = tuple(int(r) for r in self.rows)
        if not rows:
            raise ValueError("a diagram needs at least one row")
        if any(r < 0 for r in rows):
            raise ValueError("row lengths must be non-negative")
        object.__setattr__(self, "rows", rows)

    @property
    def pairs(self) -> int:
        return len(self.rows) - 1

    @property
    def size(self) -> int:
        return sum(self.rows)


@dataclass(frozen=True)
class Tableau:
    diagram: Diagram
    filling: tuple

    def __post_init__(self):
        if len(self.filling) != self.diagram.size or any(v not in (0, 1) for v in self.filling):
            raise ValueError("filling must be a 0/1 tuple with one entry per block")

    @property
    def weight(self) -> int:
        return sum(self.filling)

    def row_fillings(self):
        out, pos = [], 0
        for r in self.diagram.rows:
            out.append(self.filling[pos:pos + r])
            pos += r
        return out


def diagram_positions(mu: Diagram) -> list:
    """Index pairs (P_r, P_r + 1) of the A'A pairs, r = 1..l, with
    P_r = sum_{j<=r} |mu_j| + 2r - 1."""
    out, acc = [], 0
    for r in range(1, mu.pairs + 1):
        acc += mu.rows[r - 1]
        p = acc + 2 * r - 1
        out.append((p, p + 1))
    return out


def fillings(mu: Diagram):
    for y in product((0, 1), repeat=mu.size):
        yield Tableau(mu, y)


def _popcount(x):
    x = x - ((x >> 1) & 0x55555555)
    x = (x & 0x33333333) + ((x >> 2) & 0x33333333)
    x = (x + (x >> 4)) & 0x0F0F0F0F
    return (x * 0x01010101 & 0xFFFFFFFF) >> 24


def weight_counts(mu: Diagram) -> Counter:
    """Number of fillings of mu with each weight, by exhaustive enumeration."""
    n = mu.size
    if n > MAX_BLOCKS:
        raise CapacityError(f"diagram has {n} blocks, limit is {MAX_BLOCKS}")
    counts = Counter()
    chunk = 1 << 20
    for start in range(0, 1 << n, chunk):
        codes = np.arange(start, min(start + chunk, 1 << n), dtype=np.uint64)
        w = _popcount(codes)
        for k, c in zip(*np.unique(w, return_counts=True)):
            counts[int(k)] += int(c)
    return counts


def tableau_weight_sum(mu: Diagram) -> int:
    """sum over fillings y of (-1)^wt(y), exactly."""
    return sum((-1) ** k * c for k, c in weight_counts(mu).items())


def compositions(total: int, parts: int):
    """Weak compositions of ``total`` into ``parts`` ordered non-negative rows."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


def multiplicity(size: int, pairs: int, ones: int) -> int:
    """Count of (diagram, filling) with ``size`` blocks on pairs+1 rows and
    ``ones`` ones: (size + l)! / (l! m! (size - m)!)."""
    return comb(size + pairs, pairs) * comb(size, ones)


def class_weight_counts(size: int, pairs: int) -> Counter:
    """Weight histogram over all diagrams of the given size and row count,
    by enumeration."""
    counts = Counter()
    for rows in compositions(size, pairs + 1):
        for k, c in weight_counts(Diagram(rows)).items():
            counts[k] += c
    return counts


def class_weight_sum_closed_form(size: int, pairs: int) -> int:
    return sum((-1) ** m * multiplicity(size, pairs, m) for m in range(size + 1))


def all_diagrams(max_blocks: int, max_rows: int):
    for rows in range(1, max_rows + 1):
        for size in range(max_blocks + 1):
            for c in compositions(size, rows):
                yield Diagram(c)
