"""Exhaustive fiber enumeration: the brute-force oracle.

Cells are assigned in flat (row-major) order by depth-first
backtracking.  At each cell the value range is clipped from above by
every constraint row covering the cell (value <= residual /
coefficient) and from below by how much the remaining cells can still
contribute to each residual.  The order is deterministic, so
enumerations are reproducible and diffable.

Exceeding the element cap marks the enumeration incomplete instead of
aborting; operations that need the whole fiber (exact p-values, sizes)
refuse incomplete enumerations explicitly.

This module is the ground-truth side of the encoder bijection checks
and of every sampled-vs-exact comparison; it must stay independent of
the CNF encoder and the walker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence, TextIO

import numpy as np

from .models import FiberSpec, Table, write_table

__all__ = [
    "FiberEnumeration",
    "enumerate_fiber",
    "fiber_size",
    "FiberTooLarge",
    "log_rho_unnormalized",
    "exact_p_value",
    "exact_p_from_enumeration",
    "write_enumeration",
]

DEFAULT_CAP = 10_000_000


class FiberTooLarge(Exception):
    """An operation needed the complete fiber but the cap was hit."""


@dataclass(frozen=True)
class FiberEnumeration:
    """Enumerated fiber elements plus a completeness marker.

    When ``complete`` is False the fiber holds more than ``cap``
    elements and ``elements`` is only the first ``cap`` of them in
    enumeration order.
    """

    elements: tuple[Table, ...]
    complete: bool
    cap: int

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    def require_complete(self) -> "FiberEnumeration":
        if not self.complete:
            raise FiberTooLarge(
                f"enumeration incomplete: more than {self.cap} elements"
            )
        return self


def _iter_fiber(spec: FiberSpec) -> Iterator[Table]:
    """Yield fiber elements in deterministic DFS order."""
    A = spec.matrix.entries
    zeros = spec.zero_set()
    order = [j for j in range(spec.d) if j not in zeros]
    m = len(order)
    rows = A.shape[0]
    residual = np.asarray(spec.margins, dtype=np.int64).copy()
    coef = A[:, order] if m else A[:, :0]

    # per-cell cap from the original margins: min over covering rows of
    # b_i // A_ij (sound at every node since residuals only shrink)
    root_cap = np.empty(m, dtype=np.int64)
    for t, j in enumerate(order):
        caps = [spec.margins[i] // int(A[i, j]) for i in spec.matrix.col_support[j]]
        root_cap[t] = min(caps) if caps else 0

    # remaining_contrib[t][i] = max total the cells order[t:] can add to
    # constraint i; used for the lower bound at each node
    remaining_contrib = np.zeros((m + 1, rows), dtype=np.int64)
    for t in range(m - 1, -1, -1):
        remaining_contrib[t] = remaining_contrib[t + 1] + coef[:, t] * root_cap[t]

    values = np.zeros(spec.d, dtype=np.int64)

    def rec(t: int):
        if t == m:
            if not residual.any():
                yield Table(cells=tuple(int(v) for v in values), shape=spec.shape)
            return
        j = order[t]
        support = spec.matrix.col_support[j]
        vmax = int(root_cap[t])
        vmin = 0
        rem_next = remaining_contrib[t + 1]
        for i in support:
            a = int(A[i, j])
            vmax = min(vmax, int(residual[i]) // a)
            need = int(residual[i]) - int(rem_next[i])
            if need > 0:
                vmin = max(vmin, -(-need // a))  # ceil division
        if vmin > vmax:
            return
        for v in range(vmin, vmax + 1):
            values[j] = v
            for i in support:
                residual[i] -= A[i, j] * v
            yield from rec(t + 1)
            for i in support:
                residual[i] += A[i, j] * v
        values[j] = 0

    yield from rec(0)


def enumerate_fiber(spec: FiberSpec, cap: int = DEFAULT_CAP) -> FiberEnumeration:
    """Enumerate up to ``cap`` fiber elements; marks the result
    incomplete (rather than raising) when more exist."""
    elements: list[Table] = []
    complete = True
    for u in _iter_fiber(spec):
        if len(elements) >= cap:
            complete = False
            break
        elements.append(u)
    return FiberEnumeration(elements=tuple(elements), complete=complete, cap=cap)


def fiber_size(spec: FiberSpec, cap: int = DEFAULT_CAP) -> int:
    """Exact number of fiber elements; raises :class:`FiberTooLarge`
    past the cap."""
    count = 0
    for _ in _iter_fiber(spec):
        count += 1
        if count > cap:
            raise FiberTooLarge(f"fiber exceeds cap of {cap} elements")
    return count


def log_rho_unnormalized(u: Table | Sequence[int]) -> float:
    """log of the target weight: -sum_i log(u_i!)."""
    cells = u.cells if isinstance(u, Table) else u
    return -sum(math.lgamma(c + 1) for c in cells)


def exact_p_from_enumeration(
    enum: FiberEnumeration, stat_threshold: float, stat: Callable
) -> float:
    """Exact conditional p-value over an already-enumerated fiber.

    ``stat`` is evaluated on flat cell tuples, the convention shared
    with the walker.
    """
    enum.require_complete()
    if not enum.elements:
        raise ValueError("empty fiber")
    log_ws = [log_rho_unnormalized(u) for u in enum.elements]
    m = max(log_ws)
    total_terms = []
    hit_terms = []
    for u, lw in zip(enum.elements, log_ws):
        w = math.exp(lw - m)
        total_terms.append(w)
        if stat(u.cells) >= stat_threshold:
            hit_terms.append(w)
    return math.fsum(hit_terms) / math.fsum(total_terms)


def exact_p_value(
    spec: FiberSpec,
    stat_threshold: float,
    stat: Callable,
    cap: int = DEFAULT_CAP,
) -> float:
    """Exact conditional p-value: the rho-weighted share of fiber
    elements with stat >= threshold.  Refuses incomplete enumerations."""
    return exact_p_from_enumeration(enumerate_fiber(spec, cap=cap), stat_threshold, stat)


def write_enumeration(enum: FiberEnumeration, sink: TextIO) -> None:
    """Text export: one table block per element, blank-line separated,
    with a trailing completeness comment."""
    for u in enum.elements:
        write_table(u, sink)
        sink.write("\n")
    sink.write(f"# {len(enum.elements)} elements, complete={enum.complete}\n")
