"""Lowering: sorted kernel + merge lattices -> explicit imperative loop IR.

The IR is a plain statement tree. Dense-driven variables become counted
for-loops; a variable whose lattice holds a single sparse iterator becomes
a loop over that iterator's position range; anything else becomes a
sequence of co-iteration while-loops, one per lattice point in dominance
order, whose cases dispatch on which iterators hold the candidate index.
Values are loaded once at the loop depth where their access becomes fully
bound, mirroring the invariant hoisting visible in hand-written sparse
kernels.

Sparse outputs are built either by direct lexicographic insertion (legal
when the left-hand-side variables lead the loop order in the output's
storage order) or through an expand/scatter/compress workspace over the
output's innermost storage dimension, allocated once per kernel run and
reset sparsely by each compress. In-place updates are generated for the
one pattern that allows them: scaling a compressed vector by constants.
"""

import enum
from dataclasses import dataclass
from typing import Optional

from .encoding import COMPRESSED
from .errors import UnsupportedKernel
from .expr import (
    Access,
    Add,
    Const,
    Expr,
    Kernel,
    Mul,
    Neg,
    Sub,
    children,
    expr_to_text,
    has_access,
    walk,
)
from .lattice import (
    RANGE_DRIVER,
    AccessRef,
    MergeLattice,
    access_display_names,
    build_lattice_for,
    index_accesses,
)

# ----------------------------------------------------------------------------
# Output strategies


class StrategyKind(enum.Enum):
    DENSE_STORE = "dense-store"
    DIRECT_LEX = "direct-lex"
    EXPAND_COMPRESS = "expand-compress"
    IN_PLACE = "in-place"


@dataclass(frozen=True)
class OutputStrategy:
    kind: StrategyKind
    var: Optional[str] = None  # expansion variable for EXPAND_COMPRESS

    def describe(self) -> str:
        return f"{self.kind.value}({self.var})" if self.var else self.kind.value


def output_storage_vars(kernel: Kernel) -> tuple:
    """LHS variables arranged in the output's storage-level order."""
    enc = kernel.output_type.encoding
    if enc is None:
        return kernel.lhs.indices
    return tuple(kernel.lhs.indices[enc.dim_of_level(l)] for l in range(enc.rank))


def _is_inplace_scale(kernel: Kernel) -> bool:
    # The in-place form is reserved for scaling a compressed vector by
    # constants: the output access is the sole tensor factor of a pure
    # multiplication chain.
    out = kernel.output_type
    if kernel.accumulate or out.encoding is None:
        return False
    if out.rank != 1 or out.encoding.levels != (COMPRESSED,):
        return False
    factors = []
    stack = [kernel.rhs]
    while stack:
        node = stack.pop()
        if isinstance(node, Mul):
            stack += [node.lhs, node.rhs]
        else:
            factors.append(node)
    out_hits = [f for f in factors if isinstance(f, Access)]
    if len(out_hits) != 1 or out_hits[0].tensor != kernel.lhs.tensor:
        return False
    if out_hits[0].indices != kernel.lhs.indices:
        return False
    return all(isinstance(f, Access) or not has_access(f) for f in factors)


def choose_output_strategy(kernel: Kernel, topo_order) -> OutputStrategy:
    """Pick how the output is materialized for a given loop order.

    Dense outputs (scalars included) write straight into a buffer. Sparse
    outputs insert lexicographically when the LHS variables are exactly
    the leading loops in storage order; otherwise the innermost storage
    dimension is handled by a workspace, provided the remaining LHS
    variables still lead. Failing both, the kernel computes into a dense
    buffer that is packed afterwards.
    """
    if _is_inplace_scale(kernel):
        return OutputStrategy(StrategyKind.IN_PLACE)
    out = kernel.output_type
    if out.encoding is None:
        return OutputStrategy(StrategyKind.DENSE_STORE)
    sv = output_storage_vars(kernel)
    if tuple(topo_order[: len(sv)]) == sv:
        return OutputStrategy(StrategyKind.DIRECT_LEX)
    if tuple(topo_order[: len(sv) - 1]) == sv[:-1]:
        return OutputStrategy(StrategyKind.EXPAND_COMPRESS, sv[-1])
    return OutputStrategy(StrategyKind.DENSE_STORE)


# ----------------------------------------------------------------------------
# IR nodes


@dataclass(frozen=True)
class ValRef:
    """Expression leaf: the hoisted value of one access occurrence."""

    uid: int
    name: str


@dataclass(frozen=True)
class AccRef:
    """Expression leaf: a scalar accumulator."""

    slot: int


@dataclass(frozen=True)
class LoadRange:
    uid: int
    level: int


@dataclass(frozen=True)
class LoadVal:
    uid: int


@dataclass(frozen=True)
class ForDense:
    var: str
    extent: int
    body: tuple


@dataclass(frozen=True)
class ForPositions:
    uid: int
    level: int
    var: str
    body: tuple


@dataclass(frozen=True)
class RangeInit:
    var: str


@dataclass(frozen=True)
class CoiterCase:
    iterators: frozenset  # uids that must hold the candidate (range excluded)
    body: tuple


@dataclass(frozen=True)
class WhileCoiter:
    var: str
    iterators: tuple  # (uid, level) pairs co-iterated by this loop
    has_range: bool
    extent: int
    cases: tuple  # CoiterCase, dominance order


@dataclass(frozen=True)
class DeclAcc:
    slot: int


@dataclass(frozen=True)
class AccumAcc:
    slot: int
    expr: object


@dataclass(frozen=True)
class StoreDense:
    coords: tuple  # var names, logical order
    expr: object


@dataclass(frozen=True)
class InsertLex:
    coords: tuple  # var names, logical order
    expr: object


@dataclass(frozen=True)
class ExpandWs:
    extent: int


@dataclass(frozen=True)
class ScatterWs:
    var: str
    expr: object


@dataclass(frozen=True)
class CompressWs:
    prefix: tuple  # var names, output storage order, outermost first


@dataclass(frozen=True)
class StoreInPlace:
    uid: int
    level: int
    expr: object


@dataclass(frozen=True)
class Program:
    kernel: Kernel
    strategy: OutputStrategy
    topo: tuple
    accesses: tuple  # AccessRef occurrences, uid order
    names: dict  # uid -> display name
    acc_count: int
    body: tuple


# ----------------------------------------------------------------------------
# Lowering


class _Lowerer:
    def __init__(self, kernel: Kernel, topo, lattices=None):
        assert kernel.analysis is not None, "lower() needs an analyzed kernel"
        self.kernel = kernel
        self.topo = tuple(topo)
        self.depth_of = {v: i for i, v in enumerate(self.topo)}
        self.extents = kernel.analysis.var_extents
        self.tensors = kernel.tensors
        self.rhs, self.accesses = index_accesses(kernel)
        self.names = access_display_names(self.accesses)
        self.top_lattices = lattices or {}
        self.strategy = choose_output_strategy(kernel, self.topo)
        self.free = kernel.lhs.indices
        self.reductions = kernel.analysis.reduction_vars
        self.acc_count = 0
        self.out_svars = output_storage_vars(kernel)

    # -- helpers

    def _max_depth(self, access: AccessRef) -> int:
        return max((self.depth_of[v] for v in access.indices), default=-1)

    def _iter_level(self, access: AccessRef, var: str) -> int:
        enc = self.tensors[access.tensor].encoding
        return enc.level_of_dim(access.indices.index(var))

    def _hoist_loads(self, depth: int, expr: Expr) -> list:
        loads = []
        seen = set()
        for _, node in walk(expr):
            if isinstance(node, AccessRef) and node.uid not in seen:
                if self._max_depth(node) == depth:
                    seen.add(node.uid)
                    loads.append(LoadVal(node.uid))
        return loads

    def _link_expr(self, expr: Expr):
        if isinstance(expr, AccessRef):
            return ValRef(expr.uid, f"{self.names[expr.uid]}_val")
        if isinstance(expr, Const):
            return expr
        kids = tuple(self._link_expr(k) for k in children(expr))
        if isinstance(expr, Neg):
            return Neg(kids[0])
        return type(expr)(kids[0], kids[1])

    def _sink(self, sink, expr: Expr):
        linked = self._link_expr(expr)
        kind = sink[0]
        if kind == "dense":
            return StoreDense(self.kernel.lhs.indices, linked)
        if kind == "insert":
            return InsertLex(self.kernel.lhs.indices, linked)
        if kind == "scatter":
            return ScatterWs(self.strategy.var, linked)
        if kind == "acc":
            return AccumAcc(sink[1], linked)
        raise AssertionError(f"unknown sink {sink!r}")

    # -- main recursion

    def emit(self, depth: int, expr: Expr, sink) -> list:
        strat = self.strategy.kind
        if (
            strat is StrategyKind.EXPAND_COMPRESS
            and depth == len(self.out_svars) - 1
            and sink[0] != "scatter"
        ):
            inner = self.emit(depth, expr, ("scatter",))
            return inner + [CompressWs(self.out_svars[:-1])]
        if (
            strat is StrategyKind.DIRECT_LEX
            and self.reductions
            and depth == len(self.free)
            and sink[0] != "acc"
        ):
            slot = self.acc_count
            self.acc_count += 1
            inner = self.emit(depth, expr, ("acc", slot))
            return [DeclAcc(slot), *inner, InsertLex(self.kernel.lhs.indices, AccRef(slot))]
        if depth == len(self.topo):
            return [self._sink(sink, expr)]
        return self._emit_var(depth, expr, sink)

    def _emit_var(self, depth: int, expr: Expr, sink) -> list:
        var = self.topo[depth]
        lat = self._lattice(depth, expr, var)
        if lat.is_dense_loop:
            point = lat.first
            body = self._hoist_loads(depth, point.expr) + self.emit(depth + 1, point.expr, sink)
            return [ForDense(var, lat.extent, tuple(body))]
        stmts: list = []
        uid_levels = [(uid, self._iter_level(self.accesses[uid], var)) for uid in lat.iterator_uids()]
        level_of = dict(uid_levels)
        for uid, level in uid_levels:
            stmts.append(LoadRange(uid, level))
        if (
            not lat.range_driven
            and len(lat.points) == 1
            and len(lat.first.iterators) == 1
        ):
            (uid,) = lat.first.iterators
            point = lat.first
            body = self._hoist_loads(depth, point.expr) + self.emit(depth + 1, point.expr, sink)
            stmts.append(ForPositions(uid, level_of[uid], var, tuple(body)))
            return stmts
        if lat.range_driven:
            stmts.append(RangeInit(var))
        for point in lat.points:
            cases = []
            for q in lat.sub_points(point):
                body = self._hoist_loads(depth, q.expr) + self.emit(depth + 1, q.expr, sink)
                cases.append(CoiterCase(q.iterators - {RANGE_DRIVER}, tuple(body)))
            its = tuple((uid, level_of[uid]) for uid in sorted(point.iterators - {RANGE_DRIVER}))
            stmts.append(
                WhileCoiter(
                    var,
                    its,
                    RANGE_DRIVER in point.iterators,
                    lat.extent,
                    tuple(cases),
                )
            )
        return stmts

    def _lattice(self, depth: int, expr: Expr, var: str) -> MergeLattice:
        if expr is self.rhs and var in self.top_lattices:
            return self.top_lattices[var]
        return build_lattice_for(expr, var, self.tensors, self.extents[var])

    def _lower_in_place(self) -> list:
        out_ref = next(
            a for a in self.accesses if a.tensor == self.kernel.lhs.tensor
        )
        body = self._hoist_loads(0, self.rhs) + [
            StoreInPlace(out_ref.uid, 0, self._link_expr(self.rhs))
        ]
        return [
            LoadRange(out_ref.uid, 0),
            ForPositions(out_ref.uid, 0, self.topo[0], tuple(body)),
        ]

    def lower(self) -> Program:
        prologue = [
            LoadVal(a.uid) for a in self.accesses if self._max_depth(a) == -1
        ]
        if self.strategy.kind is StrategyKind.IN_PLACE:
            body = self._lower_in_place()
        else:
            if self.strategy.kind is StrategyKind.EXPAND_COMPRESS:
                prologue.append(ExpandWs(self.extents[self.strategy.var]))
            sink = {
                StrategyKind.DENSE_STORE: ("dense",),
                StrategyKind.DIRECT_LEX: ("insert",),
                StrategyKind.EXPAND_COMPRESS: ("pre-scatter",),
            }[self.strategy.kind]
            body = self.emit(0, self.rhs, sink)
        return Program(
            self.kernel,
            self.strategy,
            self.topo,
            self.accesses,
            self.names,
            self.acc_count,
            tuple(prologue + body),
        )


def reject_unsupported_output(kernel: Kernel):
    """Refuse expressions that are dense along a compressed output level.

    Adding (or subtracting) a subexpression with no tensor access at all,
    a bare constant being the common case, makes every output coordinate
    nonzero; storing that into a compressed format is almost certainly a
    mistake, so it is diagnosed instead of silently densified. The check
    ignores additions that sit under a multiplication with an access on
    the other side, since that access masks the result sparse again.
    """
    out = kernel.output_type
    if out.encoding is None or COMPRESSED not in out.encoding.levels:
        return
    if not has_access(kernel.rhs):
        raise UnsupportedKernel(
            "right-hand side has no tensor access; the compressed output "
            f"{kernel.lhs.tensor!r} would be fully dense"
        )

    def check(node, masked):
        if isinstance(node, (Add, Sub)):
            if not masked:
                for side in (node.lhs, node.rhs):
                    if not has_access(side):
                        raise UnsupportedKernel(
                            f"adding the access-free term '{expr_to_text(side)}' makes "
                            f"the compressed output {kernel.lhs.tensor!r} fully dense; "
                            "use a dense output or fold the term into a multiplication"
                        )
            check(node.lhs, masked)
            check(node.rhs, masked)
        elif isinstance(node, Mul):
            check(node.lhs, masked or has_access(node.rhs))
            check(node.rhs, masked or has_access(node.lhs))
        elif isinstance(node, Neg):
            check(node.operand, masked)

    check(kernel.rhs, False)


def lower(kernel: Kernel, topo_order, lattices=None) -> Program:
    """Lower an analyzed kernel to a loop IR Program."""
    reject_unsupported_output(kernel)
    return _Lowerer(kernel, topo_order, lattices).lower()


# ----------------------------------------------------------------------------
# Text emission


def _expr_text(node, names) -> str:
    if isinstance(node, ValRef):
        return node.name
    if isinstance(node, AccRef):
        return f"acc{node.slot}"
    if isinstance(node, Const):
        return repr(node.value)
    if isinstance(node, Neg):
        return f"-{_expr_text(node.operand, names)}"
    op = {"Add": " + ", "Sub": " - ", "Mul": " * "}[type(node).__name__]
    lhs, rhs = node.lhs, node.rhs
    lt = _expr_text(lhs, names)
    rt = _expr_text(rhs, names)
    if isinstance(node, Mul):
        if isinstance(lhs, (Add, Sub)):
            lt = f"({lt})"
        if isinstance(rhs, (Add, Sub)):
            rt = f"({rt})"
    elif isinstance(rhs, (Add, Sub)):
        rt = f"({rt})"
    return f"{lt}{op}{rt}"


class _Emitter:
    def __init__(self, program: Program):
        self.p = program
        self.names = program.names
        self.lines: list = []

    def name(self, uid: int) -> str:
        return self.names[uid]

    def pos(self, uid: int, level: int) -> str:
        return f"p_{self.name(uid)}{level}"

    def idx(self, uid: int, level: int) -> str:
        return f"{self.name(uid)}.index[{level}][{self.pos(uid, level)}]"

    def out(self, line: str, depth: int):
        self.lines.append("  " * depth + line)

    def emit(self) -> str:
        p = self.p
        k = p.kernel
        op = "+=" if k.accumulate else "="
        self.out(f"// kernel: {expr_to_text(k.lhs)} {op} {expr_to_text(k.rhs)}", 0)
        self.out(f"// loop order: {', '.join(p.topo) if p.topo else '(none)'}", 0)
        self.out(f"// output: {k.lhs.tensor} via {p.strategy.describe()}", 0)
        self.block(p.body, 0)
        return "\n".join(self.lines) + "\n"

    def block(self, stmts, depth: int):
        for s in stmts:
            self.stmt(s, depth)

    def stmt(self, s, depth: int):
        name = type(s).__name__
        getattr(self, f"_{name}")(s, depth)

    def _LoadRange(self, s, depth):
        n, l = self.name(s.uid), s.level
        self.out(f"{n}{l}_lo, {n}{l}_hi = load-range {n} level {l}", depth)

    def _LoadVal(self, s, depth):
        n = self.name(s.uid)
        self.out(f"{n}_val = load {n}", depth)

    def _ForDense(self, s, depth):
        self.out(f"for {s.var} in [0, {s.extent}):", depth)
        self.block(s.body, depth + 1)

    def _ForPositions(self, s, depth):
        n, l = self.name(s.uid), s.level
        p = self.pos(s.uid, l)
        self.out(f"for {p} in [{n}{l}_lo, {n}{l}_hi):", depth)
        self.out(f"{s.var} = {n}.index[{l}][{p}]", depth + 1)
        self.block(s.body, depth + 1)

    def _RangeInit(self, s, depth):
        self.out(f"{s.var} = 0", depth)

    def _WhileCoiter(self, s, depth):
        conds = [f"{self.pos(u, l)} < {self.name(u)}{l}_hi" for u, l in s.iterators]
        if s.has_range:
            conds.append(f"{s.var} < {s.extent}")
        self.out(f"while {' and '.join(conds)}:", depth)
        inner = depth + 1
        if not s.has_range:
            coords = ", ".join(self.idx(u, l) for u, l in s.iterators)
            if len(s.iterators) > 1:
                self.out(f"{s.var} = min({coords})", inner)
            else:
                self.out(f"{s.var} = {coords}", inner)
        level_of = dict(s.iterators)
        first = True
        for case in s.cases:
            guards = [
                f"{self.idx(u, level_of[u])} == {s.var}" for u in sorted(case.iterators)
            ]
            if guards:
                kw = "if" if first else "elif"
                self.out(f"{kw} {' and '.join(guards)}:", inner)
                self.block(case.body, inner + 1)
                first = False
            else:
                if first:
                    self.block(case.body, inner)
                else:
                    self.out("else:", inner)
                    self.block(case.body, inner + 1)
        for u, l in s.iterators:
            self.out(
                f"advance {self.pos(u, l)} if {self.idx(u, l)} == {s.var}", inner
            )
        if s.has_range:
            self.out(f"advance {s.var}", inner)

    def _DeclAcc(self, s, depth):
        self.out(f"acc{s.slot} = 0.0", depth)

    def _AccumAcc(self, s, depth):
        self.out(f"acc{s.slot} += {_expr_text(s.expr, self.names)}", depth)

    def _StoreDense(self, s, depth):
        out = self.p.kernel.lhs.tensor
        coords = ", ".join(s.coords)
        target = f"{out}[{coords}]" if coords else out
        self.out(f"{target} += {_expr_text(s.expr, self.names)}", depth)

    def _InsertLex(self, s, depth):
        out = self.p.kernel.lhs.tensor
        self.out(
            f"insert {out}({', '.join(s.coords)}) = {_expr_text(s.expr, self.names)}",
            depth,
        )

    def _ExpandWs(self, s, depth):
        self.out(f"workspace = expand({s.extent})", depth)

    def _ScatterWs(self, s, depth):
        self.out(f"if not filled[{s.var}]: mark {s.var} added", depth)
        self.out(f"workspace[{s.var}] += {_expr_text(s.expr, self.names)}", depth)

    def _CompressWs(self, s, depth):
        out = self.p.kernel.lhs.tensor
        at = ", ".join(s.prefix)
        self.out(f"compress workspace into {out} at ({at})", depth)

    def _StoreInPlace(self, s, depth):
        n = self.name(s.uid)
        self.out(
            f"store {n}.value[{self.pos(s.uid, s.level)}] = "
            f"{_expr_text(s.expr, self.names)}",
            depth,
        )


def emit_text(program: Program) -> str:
    """Deterministic, indentation-structured rendering of the loop IR."""
    return _Emitter(program).emit()
