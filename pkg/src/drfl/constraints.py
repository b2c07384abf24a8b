"""Canonical container for small convex constraint systems.

A system is defined over a flat variable vector split into named blocks.
It holds linear inequality rows ``A v <= b`` (each tagged with the group it
came from), optional equality rows, per-variable bounds, and a short list of
tagged nonlinear convex rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class Layout:
    """Ordered named blocks of a flat variable vector."""

    def __init__(self, blocks=()):
        self._blocks: dict[str, tuple[int, int]] = {}
        self.size = 0
        for name, size in blocks:
            self.add(name, size)

    def add(self, name: str, size: int) -> slice:
        if name in self._blocks:
            raise ValueError(f"duplicate block {name!r}")
        self._blocks[name] = (self.size, int(size))
        self.size += int(size)
        return self[name]

    def __getitem__(self, name: str) -> slice:
        start, size = self._blocks[name]
        return slice(start, start + size)

    def __contains__(self, name: str) -> bool:
        return name in self._blocks

    def names(self) -> list[str]:
        return list(self._blocks)

    def block_size(self, name: str) -> int:
        return self._blocks[name][1]

    def index(self, name: str, i: int = 0) -> int:
        start, size = self._blocks[name]
        if not 0 <= i < size:
            raise IndexError(f"index {i} out of range for block {name!r}")
        return start + i

    def split(self, v) -> dict[str, np.ndarray]:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.size,):
            raise ValueError(f"point has shape {v.shape}, layout expects ({self.size},)")
        return {name: v[self[name]].copy() for name in self._blocks}

    def join(self, parts: dict, fill: float = 0.0) -> np.ndarray:
        v = np.full(self.size, fill, dtype=float)
        unknown = set(parts) - set(self._blocks)
        if unknown:
            raise ValueError(f"unknown blocks {sorted(unknown)}")
        for name, value in parts.items():
            sl = self[name]
            value = np.broadcast_to(np.asarray(value, dtype=float), (sl.stop - sl.start,))
            v[sl] = value
        return v

    def __repr__(self):
        return f"Layout({list(self._blocks.items())})"


# ----- nonlinear rows ------------------------------------------------------


@dataclass
class QuadraticRow:
    """``0.5 * (g @ v + h)**2 + a @ v <= b``."""

    g: np.ndarray
    h: float
    a: np.ndarray
    b: float
    tag: str = "epigraph"

    def residual(self, v):
        return 0.5 * (self.g @ v + self.h) ** 2 + self.a @ v - self.b


@dataclass
class SoftplusRow:
    """``log(1 + exp(g @ v + h)) + a @ v <= b`` (log-sum-exp of {0, g@v+h})."""

    g: np.ndarray
    h: float
    a: np.ndarray
    b: float
    tag: str = "epigraph"

    def residual(self, v):
        s = self.g @ v + self.h
        # max-shifted log(e^0 + e^s)
        m = max(s, 0.0)
        return m + math.log(math.exp(-m) + math.exp(s - m)) + self.a @ v - self.b


@dataclass
class NormRow:
    """``||M v + m0||_p <= a @ v + b`` with ``p`` in {1, 2}."""

    M: np.ndarray
    m0: np.ndarray
    a: np.ndarray
    b: float
    p: float
    tag: str = "dual_norm"

    def residual(self, v):
        return np.linalg.norm(self.M @ v + self.m0, ord=self.p) - (self.a @ v + self.b)


NONLINEAR_KINDS = {QuadraticRow: "quadratic", SoftplusRow: "log_sum_exp", NormRow: "norm"}


@dataclass
class RowGroup:
    kind: str
    label: str = ""


@dataclass
class ConstraintSystem:
    layout: Layout
    A: sp.csr_matrix
    b: np.ndarray
    row_group: np.ndarray
    groups: list[RowGroup]
    lb: np.ndarray
    ub: np.ndarray
    Aeq: sp.csr_matrix | None = None
    beq: np.ndarray | None = None
    nonlinear: list = field(default_factory=list)
    nonlinear_group: list[int] = field(default_factory=list)

    @property
    def n_vars(self) -> int:
        return self.layout.size

    @property
    def is_linear(self) -> bool:
        return not self.nonlinear

    def count_groups(self, kind: str) -> int:
        return sum(g.kind == kind for g in self.groups)

    def linear_residuals(self, v) -> np.ndarray:
        return self.A @ v - self.b

    def violations(self, v) -> dict[str, float]:
        """Worst violation per constraint family (0 when satisfied)."""
        v = np.asarray(v, dtype=float)
        out = {"linear": 0.0, "equality": 0.0, "bounds": 0.0, "nonlinear": 0.0}
        if self.A.shape[0]:
            out["linear"] = max(0.0, float(np.max(self.linear_residuals(v))))
        if self.Aeq is not None and self.Aeq.shape[0]:
            out["equality"] = float(np.max(np.abs(self.Aeq @ v - self.beq)))
        below = np.max(self.lb - v) if v.size else 0.0
        above = np.max(v - self.ub) if v.size else 0.0
        out["bounds"] = max(0.0, float(below), float(above))
        if self.nonlinear:
            out["nonlinear"] = max(0.0, max(float(r.residual(v)) for r in self.nonlinear))
        return out

    def max_violation(self, v) -> float:
        return max(self.violations(v).values())


class SystemBuilder:
    """Accumulates rows for a :class:`ConstraintSystem`."""

    def __init__(self, layout: Layout):
        self.layout = layout
        self.lb = np.full(layout.size, -np.inf)
        self.ub = np.full(layout.size, np.inf)
        self._rows, self._cols, self._vals, self._b, self._grp = [], [], [], [], []
        self._eq_rows, self._eq_cols, self._eq_vals, self._beq = [], [], [], []
        self.groups: list[RowGroup] = []
        self.nonlinear = []
        self.nonlinear_group = []
        self._m = 0

    def group(self, kind: str, label: str = "") -> int:
        self.groups.append(RowGroup(kind, label))
        return len(self.groups) - 1

    def _terms(self, terms):
        for block, idx, coef in terms:
            if coef == 0:
                continue
            yield self.layout.index(block, idx), float(coef)

    def row(self, terms, rhs: float, group: int) -> None:
        """Add ``sum(coef * v[block][idx]) <= rhs``; terms are (block, idx, coef)."""
        for col, coef in self._terms(terms):
            self._rows.append(self._m)
            self._cols.append(col)
            self._vals.append(coef)
        self._b.append(float(rhs))
        self._grp.append(group)
        self._m += 1

    def eq(self, terms, rhs: float) -> None:
        r = len(self._beq)
        for col, coef in self._terms(terms):
            self._eq_rows.append(r)
            self._eq_cols.append(col)
            self._eq_vals.append(coef)
        self._beq.append(float(rhs))

    def vector(self, terms) -> np.ndarray:
        v = np.zeros(self.layout.size)
        for col, coef in self._terms(terms):
            v[col] += coef
        return v

    def add_nonlinear(self, row, group: int) -> None:
        self.nonlinear.append(row)
        self.nonlinear_group.append(group)

    def bound(self, block: str, lo=-np.inf, hi=np.inf) -> None:
        sl = self.layout[block]
        self.lb[sl] = np.maximum(self.lb[sl], lo)
        self.ub[sl] = np.minimum(self.ub[sl], hi)

    def build(self) -> ConstraintSystem:
        n = self.layout.size
        A = sp.csr_matrix((self._vals, (self._rows, self._cols)), shape=(self._m, n))
        Aeq = beq = None
        if self._beq:
            Aeq = sp.csr_matrix(
                (self._eq_vals, (self._eq_rows, self._eq_cols)), shape=(len(self._beq), n)
            )
            beq = np.array(self._beq)
        return ConstraintSystem(
            layout=self.layout,
            A=A,
            b=np.array(self._b, dtype=float),
            row_group=np.array(self._grp, dtype=int),
            groups=list(self.groups),
            lb=self.lb.copy(),
            ub=self.ub.copy(),
            Aeq=Aeq,
            beq=beq,
            nonlinear=list(self.nonlinear),
            nonlinear_group=list(self.nonlinear_group),
        )


def embed(cs: ConstraintSystem, layout: Layout, mapping: dict[str, str]) -> ConstraintSystem:
    """Re-index ``cs`` into a larger ``layout``; ``mapping`` maps old block -> new block.

    Blocks mapped to the same target share variables (used to tie every
    client's ``w`` block to the global model in centralized programs).
    """
    n_old = cs.layout.size
    cols = np.empty(n_old, dtype=int)
    for old in cs.layout.names():
        new = mapping[old]
        src, dst = cs.layout[old], layout[new]
        if src.stop - src.start != dst.stop - dst.start:
            raise ValueError(f"block size mismatch {old!r} -> {new!r}")
        cols[src] = np.arange(dst.start, dst.stop)
    T = sp.csr_matrix((np.ones(n_old), (np.arange(n_old), cols)), shape=(n_old, layout.size))

    def remap(vec):
        return T.T @ vec

    lb = np.full(layout.size, -np.inf)
    ub = np.full(layout.size, np.inf)
    np.maximum.at(lb, cols, cs.lb)
    np.minimum.at(ub, cols, cs.ub)
    nonlinear = []
    for row in cs.nonlinear:
        if isinstance(row, NormRow):
            nonlinear.append(NormRow((sp.csr_matrix(row.M) @ T).toarray(), row.m0, remap(row.a), row.b, row.p, row.tag))
        else:
            nonlinear.append(type(row)(remap(row.g), row.h, remap(row.a), row.b, row.tag))
    return ConstraintSystem(
        layout=layout,
        A=sp.csr_matrix(cs.A @ T),
        b=cs.b.copy(),
        row_group=cs.row_group.copy(),
        groups=list(cs.groups),
        lb=lb,
        ub=ub,
        Aeq=None if cs.Aeq is None else sp.csr_matrix(cs.Aeq @ T),
        beq=None if cs.beq is None else cs.beq.copy(),
        nonlinear=nonlinear,
        nonlinear_group=list(cs.nonlinear_group),
    )


def stack(systems: list[ConstraintSystem], layout: Layout) -> ConstraintSystem:
    """Intersect systems already expressed over the same ``layout``."""
    n = layout.size
    A = sp.vstack([s.A for s in systems] or [sp.csr_matrix((0, n))], format="csr")
    b = np.concatenate([s.b for s in systems]) if systems else np.zeros(0)
    groups, row_group, nl, nl_group = [], [], [], []
    for s in systems:
        off = len(groups)
        groups.extend(s.groups)
        row_group.append(s.row_group + off)
        nl.extend(s.nonlinear)
        nl_group.extend(g + off for g in s.nonlinear_group)
    eqs = [s for s in systems if s.Aeq is not None and s.Aeq.shape[0]]
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    for s in systems:
        lb = np.maximum(lb, s.lb)
        ub = np.minimum(ub, s.ub)
    return ConstraintSystem(
        layout=layout,
        A=A,
        b=b,
        row_group=np.concatenate(row_group) if row_group else np.zeros(0, dtype=int),
        groups=groups,
        lb=lb,
        ub=ub,
        Aeq=sp.vstack([s.Aeq for s in eqs], format="csr") if eqs else None,
        beq=np.concatenate([s.beq for s in eqs]) if eqs else None,
        nonlinear=nl,
        nonlinear_group=nl_group,
    )
