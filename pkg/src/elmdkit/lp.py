"""Dense two-phase simplex over ``fractions.Fraction`` with Bland's rule.

Meant for the small LPs that arise on scenario trees; every pivot is exact
and Bland's rule guarantees termination.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class LPResult:
    status: str
    x: tuple[Fraction, ...] | None = None
    value: Fraction | None = None


def _pivot(rows: list[list[Fraction]], basis: list[int], r: int, j: int) -> None:
    row = rows[r]
    piv = row[j]
    rows[r] = row = [v / piv for v in row]
    for i, other in enumerate(rows):
        if i != r and other[j] != 0:
            f = other[j]
            rows[i] = [a - f * b for a, b in zip(other, row)]
    basis[r] = j


def _run(rows, basis, cost, allowed) -> str:
    """Maximise ``cost . x`` from a feasible basis. Columns outside
    ``allowed`` never enter."""
    while True:
        entering = None
        for j in allowed:
            if j in basis:
                continue
            reduced = cost[j] - sum((cost[b] * rows[i][j] for i, b in enumerate(basis)), Fraction(0))
            if reduced > 0:
                entering = j
                break
        if entering is None:
            return OPTIMAL
        best = None
        for i, row in enumerate(rows):
            if row[entering] > 0:
                ratio = row[-1] / row[entering]
                if best is None or ratio < best[0] or (ratio == best[0] and basis[i] < basis[best[1]]):
                    best = (ratio, i)
        if best is None:
            return UNBOUNDED
        _pivot(rows, basis, best[1], entering)


def linprog_exact(
    c: Sequence,
    A_eq: Sequence[Sequence] = (),
    b_eq: Sequence = (),
    A_ub: Sequence[Sequence] = (),
    b_ub: Sequence = (),
    free: Sequence[int] = (),
) -> LPResult:
    """Maximise ``c . x`` subject to ``A_eq x = b_eq``, ``A_ub x <= b_ub``
    and ``x >= 0`` for every variable not listed in ``free``."""
    n = len(c)
    free = sorted(set(free))
    # column layout: original vars, negative parts of free vars, slacks, artificials
    neg_col = {j: n + k for k, j in enumerate(free)}
    n_struct = n + len(free)
    n_slack = len(A_ub)
    n_cols = n_struct + n_slack

    def expand(row):
        out = [Fraction(v) for v in row] + [Fraction(0)] * (n_cols - n)
        for j, k in neg_col.items():
            out[k] = -out[j]
        return out

    rows = []
    for row, b in zip(A_eq, b_eq):
        rows.append(expand(row) + [Fraction(b)])
    for s, (row, b) in enumerate(zip(A_ub, b_ub)):
        r = expand(row)
        r[n_struct + s] = Fraction(1)
        rows.append(r + [Fraction(b)])
    for r in rows:
        if r[-1] < 0:
            r[:] = [-v for v in r]

    m = len(rows)
    total = n_cols + m
    for i, r in enumerate(rows):
        art = [Fraction(0)] * m
        art[i] = Fraction(1)
        r[-1:-1] = art
    basis = [n_cols + i for i in range(m)]

    # phase 1: maximise -(sum of artificials)
    cost1 = [Fraction(0)] * n_cols + [Fraction(-1)] * m
    _run(rows, basis, cost1, range(total))
    if sum((rows[i][-1] for i, b in enumerate(basis) if b >= n_cols), Fraction(0)) != 0:
        return LPResult(INFEASIBLE)

    # drive remaining (zero-valued) artificials out of the basis
    i = 0
    while i < len(rows):
        if basis[i] >= n_cols:
            j = next((j for j in range(n_cols) if rows[i][j] != 0), None)
            if j is None:
                del rows[i], basis[i]
                continue
            _pivot(rows, basis, i, j)
        i += 1

    cost = [Fraction(v) for v in c] + [Fraction(0)] * (total - n)
    for j, k in neg_col.items():
        cost[k] = -cost[j]
    status = _run(rows, basis, cost, range(n_cols))
    if status == UNBOUNDED:
        return LPResult(UNBOUNDED)

    values = [Fraction(0)] * total
    for i, b in enumerate(basis):
        values[b] = rows[i][-1]
    x = [values[j] - (values[neg_col[j]] if j in neg_col else 0) for j in range(n)]
    return LPResult(OPTIMAL, tuple(x), sum((Fraction(ci) * xi for ci, xi in zip(c, x)), Fraction(0)))
