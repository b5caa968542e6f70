"""Execution: interpret loop IR over packed storage, end to end.

`run_kernel` is the library entry point: it normalizes the kernel
(accumulating sparse outputs are rewritten to read the previous output;
scoped reductions are split into temporaries), orders the loops, lowers to
IR, and interprets. The interpreter links each IR node once into a Python
closure over a small frame of index variables, iterator positions, and
hoisted values, then runs the closure tree; there is no code generation
beyond that, so results stay bit-auditable against the emitted IR text.

Tensors bound as inputs are never mutated; the in-place strategy writes
into a fresh copy of the output's values array.
"""

from dataclasses import replace
from typing import Dict, Optional, Union

from .codegen import (
    AccRef,
    AccumAcc,
    CompressWs,
    Const,
    DeclAcc,
    ExpandWs,
    ForDense,
    ForPositions,
    InsertLex,
    LoadRange,
    LoadVal,
    Program,
    RangeInit,
    ScatterWs,
    StoreDense,
    StoreInPlace,
    StrategyKind,
    ValRef,
    WhileCoiter,
    lower,
)
from .encoding import COMPRESSED, Encoding, TensorType
from .errors import ShapeMismatch, UnknownTensor
from .expr import (
    Access,
    Add,
    Kernel,
    Mul,
    Neg,
    Sub,
    analyze_reductions,
    split_for_whole_expr_reduction,
    walk,
)
from .lattice import build_iteration_graph, build_lattice, topo_sort
from .storage import (
    CooTensor,
    DenseTensor,
    SparseStorage,
    StorageBuilder,
    compress,
    expand,
    pack,
    unpack,
)

TensorValue = Union[SparseStorage, DenseTensor, CooTensor]


# ----------------------------------------------------------------------------
# Conversion


def convert(value: TensorValue, to_type: Union[TensorType, Encoding, None]) -> TensorValue:
    """Re-materialize a tensor in another format.

    Sparse-to-sparse goes through the coordinate intermediate rather than
    any direct scheme. Dense-to-sparse keeps only nonzeros;
    sparse-to-dense scatters every stored element into a zero buffer.
    `to_type` may be a TensorType, a bare Encoding, or None for dense.
    """
    if isinstance(to_type, Encoding):
        to_type = TensorType(_shape_of(value), to_type)
    elif to_type is None:
        to_type = TensorType(_shape_of(value))
    if _shape_of(value) != to_type.shape:
        raise ShapeMismatch(f"cannot convert shape {_shape_of(value)} to {to_type.shape}")
    if to_type.is_sparse:
        if isinstance(value, SparseStorage):
            return pack(unpack(value), to_type.encoding)
        if isinstance(value, DenseTensor):
            return pack(value.to_coo(drop_zeros=True), to_type.encoding)
        return pack(value, to_type.encoding)
    out = DenseTensor.zeros(to_type.shape)
    if isinstance(value, SparseStorage):
        for coords, v in value.iterate():
            out.set(coords, v)
    elif isinstance(value, DenseTensor):
        out = DenseTensor(value.shape, list(value.data))
    else:
        out = value.to_dense()
    return out


def _shape_of(value: TensorValue) -> tuple:
    return value.shape


# ----------------------------------------------------------------------------
# Interpreter


class _Frame:
    __slots__ = ("vars", "pos", "lo", "hi", "vals", "accs", "ws", "builder", "out", "out_values")

    def __init__(self, n_vars, n_its, n_vals, n_accs):
        self.vars = [0] * n_vars
        self.pos = [0] * n_its
        self.lo = [0] * n_its
        self.hi = [0] * n_its
        self.vals = [0.0] * n_vals
        self.accs = [0.0] * n_accs
        self.ws = None
        self.builder = None
        self.out = None
        self.out_values = None


class _Linker:
    """Turns a Program plus concrete bindings into a closure tree."""

    def __init__(self, program: Program, env: dict):
        self.p = program
        self.env = env
        self.var_slot = {v: i for i, v in enumerate(program.topo)}
        self.it_slot: Dict[tuple, int] = {}
        for ref in program.accesses:
            enc = program.kernel.tensors[ref.tensor].encoding
            if enc is None:
                continue
            for level, lt in enumerate(enc.levels):
                if lt is COMPRESSED:
                    self.it_slot[(ref.uid, level)] = len(self.it_slot) + len(program.topo)
        # Range counters live in the same pos/lo/hi arrays as iterators.
        self.range_slot = {v: i for i, v in enumerate(program.topo)}
        self.n_slots = len(program.topo) + len(self.it_slot)

    # -- access plumbing

    def _binding(self, uid: int):
        ref = self.p.accesses[uid]
        try:
            return self.env[ref.tensor]
        except KeyError:
            raise UnknownTensor(f"no binding for tensor {ref.tensor!r}")

    def _steps(self, uid: int, upto: Optional[int] = None) -> list:
        """Per-level position recipe: ('d', extent, var slot) | ('c', slot)."""
        ref = self.p.accesses[uid]
        value = self._binding(uid)
        steps = []
        if isinstance(value, DenseTensor):
            for v, extent in zip(ref.indices, value.shape):
                steps.append(("d", extent, self.var_slot[v]))
        else:
            enc = value.encoding
            sshape = value.ttype.storage_shape()
            for level in range(value.rank):
                if enc.levels[level] is COMPRESSED:
                    steps.append(("c", self.it_slot[(uid, level)], 0))
                else:
                    v = ref.indices[enc.dim_of_level(level)]
                    steps.append(("d", sshape[level], self.var_slot[v]))
        return steps if upto is None else steps[:upto]

    # -- expressions
    #
    # Expressions and leaf sinks are specialized at link time by rendering
    # them to a tiny Python source fragment and eval/exec-ing it into one
    # closure. This is plain closure specialization over the IR, not a
    # backend: positions and bindings come straight from the IR's slots.

    def _position_src(self, steps) -> str:
        # Positions at a compressed level are absolute, so the walk only
        # needs the suffix after the last compressed step.
        base = None
        for i in range(len(steps) - 1, -1, -1):
            if steps[i][0] == "c":
                base = f"f.pos[{steps[i][1]}]"
                steps = steps[i + 1 :]
                break
        src = base
        for _, extent, vslot in steps:
            term = f"f.vars[{vslot}]"
            src = term if src is None else f"({src}*{extent}+{term})"
        return src or "0"

    def _value_src(self, uid: int, bind: dict) -> str:
        value = self._binding(uid)
        data = value.data if isinstance(value, DenseTensor) else value.values
        name = f"d{uid}"
        bind[name] = data
        return f"{name}[{self._position_src(self._steps(uid))}]"

    def _expr_src(self, node, inline: frozenset, bind: dict) -> str:
        if isinstance(node, ValRef):
            if node.uid in inline:
                return self._value_src(node.uid, bind)
            return f"f.vals[{node.uid}]"
        if isinstance(node, AccRef):
            return f"f.accs[{node.slot}]"
        if isinstance(node, Const):
            return repr(node.value)
        if isinstance(node, Neg):
            return f"(-{self._expr_src(node.operand, inline, bind)})"
        op = {Mul: "*", Add: "+", Sub: "-"}[type(node)]
        lhs = self._expr_src(node.lhs, inline, bind)
        rhs = self._expr_src(node.rhs, inline, bind)
        return f"({lhs} {op} {rhs})"

    def _compile(self, body_src: str, bind: dict):
        namespace = dict(bind)
        exec(f"def _linked(f):\n    {body_src}\n", namespace)
        return namespace["_linked"]

    def link_expr(self, node, inline: frozenset = frozenset()):
        bind: dict = {}
        src = self._expr_src(node, inline, bind)
        return eval(f"lambda f: {src}", bind)

    # -- statements

    _LEAF_SINKS = (StoreDense, ScatterWs, AccumAcc, InsertLex, StoreInPlace)

    def link_block(self, stmts):
        fused = self._try_fuse_leaf(stmts)
        if fused is not None:
            return fused
        fns = [self.link_stmt(s) for s in stmts]
        if len(fns) == 1:
            return fns[0]

        def run(f, _fns=tuple(fns)):
            for fn in _fns:
                fn(f)

        return run

    def _try_fuse_leaf(self, stmts):
        # Innermost bodies are overwhelmingly `load*, sink`; folding the
        # loads into the sink expression skips the per-element frame writes.
        if not stmts or not isinstance(stmts[-1], self._LEAF_SINKS):
            return None
        loads = stmts[:-1]
        if not all(isinstance(s, LoadVal) for s in loads):
            return None
        inline = frozenset(s.uid for s in loads)
        sink = stmts[-1]
        return getattr(self, f"_link_{type(sink).__name__}")(sink, inline)

    def link_stmt(self, s):
        return getattr(self, f"_link_{type(s).__name__}")(s)

    def _link_LoadRange(self, s: LoadRange):
        bind = {"ptrs": self._binding(s.uid).pointers[s.level]}
        slot = self.it_slot[(s.uid, s.level)]
        parent = self._position_src(self._steps(s.uid, upto=s.level))
        body = (
            f"p = {parent}\n"
            f"    lo = ptrs[p]\n"
            f"    f.pos[{slot}] = lo\n"
            f"    f.lo[{slot}] = lo\n"
            f"    f.hi[{slot}] = ptrs[p + 1]"
        )
        return self._compile(body, bind)

    def _link_LoadVal(self, s: LoadVal):
        bind: dict = {}
        src = self._value_src(s.uid, bind)
        return self._compile(f"f.vals[{s.uid}] = {src}", bind)

    def _link_ForDense(self, s: ForDense):
        body = self.link_block(s.body)
        vs = self.var_slot[s.var]
        extent = s.extent

        def run(f, _body=body, _vs=vs, _n=extent):
            fvars = f.vars
            for i in range(_n):
                fvars[_vs] = i
                _body(f)

        return run

    def _link_ForPositions(self, s: ForPositions):
        body = self.link_block(s.body)
        slot = self.it_slot[(s.uid, s.level)]
        vs = self.var_slot[s.var]
        idx = self._binding(s.uid).indices[s.level]

        def run(f, _body=body, _slot=slot, _vs=vs, _idx=idx):
            fpos = f.pos
            fvars = f.vars
            for p in range(f.lo[_slot], f.hi[_slot]):
                fpos[_slot] = p
                fvars[_vs] = _idx[p]
                _body(f)

        return run

    def _link_RangeInit(self, s: RangeInit):
        slot = self.range_slot[s.var]

        def run(f, _slot=slot):
            f.pos[_slot] = 0

        return run

    def _link_WhileCoiter(self, s: WhileCoiter):
        its = tuple(
            (self.it_slot[(uid, level)], self._binding(uid).indices[level])
            for uid, level in s.iterators
        )
        uid_index = {uid: i for i, (uid, _) in enumerate(s.iterators)}
        cases = tuple(
            (tuple(uid_index[u] for u in sorted(c.iterators)), self.link_block(c.body))
            for c in s.cases
        )
        vs = self.var_slot[s.var]
        has_range = s.has_range
        rslot = self.range_slot[s.var]
        extent = s.extent

        def run(f):
            fpos = f.pos
            fhi = f.hi
            fvars = f.vars
            while True:
                coords = []
                for slot, idx in its:
                    p = fpos[slot]
                    if p >= fhi[slot]:
                        return
                    coords.append(idx[p])
                if has_range:
                    cand = fpos[rslot]
                    if cand >= extent:
                        return
                else:
                    cand = min(coords)
                fvars[vs] = cand
                for guard, body in cases:
                    hit = True
                    for gi in guard:
                        if coords[gi] != cand:
                            hit = False
                            break
                    if hit:
                        body(f)
                        break
                i = 0
                for slot, _ in its:
                    if coords[i] == cand:
                        fpos[slot] += 1
                    i += 1
                if has_range:
                    fpos[rslot] += 1

        return run

    def _link_DeclAcc(self, s: DeclAcc):
        slot = s.slot

        def run(f, _s=slot):
            f.accs[_s] = 0.0

        return run

    def _link_AccumAcc(self, s: AccumAcc, inline: frozenset = frozenset()):
        bind: dict = {}
        src = self._expr_src(s.expr, inline, bind)
        return self._compile(f"f.accs[{s.slot}] += {src}", bind)

    def _offset_src(self, coords) -> str:
        shape = self.p.kernel.output_type.shape
        strides = []
        acc = 1
        for extent in reversed(shape):
            strides.append(acc)
            acc *= extent
        strides.reverse()
        terms = []
        for v, stride in zip(coords, strides):
            vs = self.var_slot[v]
            terms.append(f"f.vars[{vs}]*{stride}" if stride != 1 else f"f.vars[{vs}]")
        return " + ".join(terms) if terms else "0"

    def _link_StoreDense(self, s: StoreDense, inline: frozenset = frozenset()):
        bind: dict = {}
        src = self._expr_src(s.expr, inline, bind)
        return self._compile(f"f.out[{self._offset_src(s.coords)}] += {src}", bind)

    def _link_InsertLex(self, s: InsertLex, inline: frozenset = frozenset()):
        slots = tuple(self.var_slot[v] for v in s.coords)
        e = self.link_expr(s.expr, inline)

        def run(f, _slots=slots, _e=e):
            f.builder.insert(tuple(f.vars[vs] for vs in _slots), _e(f))

        return run

    def _link_ExpandWs(self, s: ExpandWs):
        extent = s.extent

        def run(f, _n=extent):
            f.ws = expand(_n)

        return run

    def _link_ScatterWs(self, s: ScatterWs, inline: frozenset = frozenset()):
        bind: dict = {}
        src = self._expr_src(s.expr, inline, bind)
        body = (
            f"ws = f.ws\n"
            f"    j = f.vars[{self.var_slot[s.var]}]\n"
            f"    ws.values[j] += {src}\n"
            f"    if not ws.filled[j]:\n"
            f"        ws.filled[j] = True\n"
            f"        ws.added.append(j)"
        )
        return self._compile(body, bind)

    def _link_CompressWs(self, s: CompressWs):
        slots = tuple(self.var_slot[v] for v in s.prefix)

        def run(f, _slots=slots):
            compress(f.ws, f.builder, tuple(f.vars[vs] for vs in _slots))

        return run

    def _link_StoreInPlace(self, s: StoreInPlace, inline: frozenset = frozenset()):
        bind: dict = {}
        src = self._expr_src(s.expr, inline, bind)
        slot = self.it_slot[(s.uid, s.level)]
        return self._compile(f"f.out_values[f.pos[{slot}]] = {src}", bind)

    # -- entry

    def run(self):
        p = self.p
        program_fn = self.link_block(p.body) if p.body else (lambda f: None)
        frame = _Frame(len(p.topo), self.n_slots, len(p.accesses), p.acc_count)
        kernel = p.kernel
        out_type = kernel.output_type
        out_name = kernel.lhs.tensor
        strat = p.strategy.kind
        if strat is StrategyKind.DENSE_STORE:
            seed = self.env.get(out_name) if kernel.accumulate else None
            if seed is not None:
                frame.out = list(seed.data)
            else:
                frame.out = [0.0] * DenseTensor.zeros(out_type.shape).volume
        elif strat is StrategyKind.IN_PLACE:
            frame.out_values = list(self.env[out_name].values)
        else:
            frame.builder = StorageBuilder(out_type)
        program_fn(frame)
        if strat is StrategyKind.DENSE_STORE:
            return DenseTensor(out_type.shape, frame.out)
        if strat is StrategyKind.IN_PLACE:
            base = self.env[out_name]
            return SparseStorage(
                base.ttype, base.pointers, base.indices, tuple(frame.out_values)
            )
        return frame.builder.finalize()


def interpret(program: Program, env: dict):
    """Execute a lowered Program against concrete tensor bindings."""
    return _Linker(program, env).run()


# ----------------------------------------------------------------------------
# End-to-end driver


def _coerce(value: TensorValue, ttype: TensorType, name: str) -> TensorValue:
    if _shape_of(value) != ttype.shape:
        raise ShapeMismatch(
            f"tensor {name!r} declared with shape {ttype.shape}, bound with "
            f"{_shape_of(value)}"
        )
    if ttype.is_sparse:
        if isinstance(value, SparseStorage) and value.ttype == ttype:
            return value
        return convert(value, ttype)
    if isinstance(value, DenseTensor):
        return value
    return convert(value, None)


def _empty_value(ttype: TensorType) -> TensorValue:
    if ttype.is_sparse:
        return StorageBuilder(ttype).finalize()
    return DenseTensor.zeros(ttype.shape)


def _execute_single(kernel: Kernel, env: dict):
    if kernel.analysis is None:
        kernel = analyze_reductions(kernel)
    graph = build_iteration_graph(kernel)
    topo = topo_sort(graph)
    lattices = {v: build_lattice(kernel, v) for v in topo}
    program = lower(kernel, topo, lattices)
    result = interpret(program, env)
    out_type = kernel.output_type
    if out_type.is_sparse and isinstance(result, DenseTensor):
        # Fallback path: computed densely, pack into the declared format.
        result = convert(result, out_type)
    return result


def prepare_kernels(kernel: Kernel) -> list:
    """Normalize a kernel into directly executable pieces.

    Accumulation into a sparse non-scalar output becomes a read of the
    previous output value; reductions scoped to subexpressions are split
    into temporary kernels.
    """
    if kernel.analysis is None:
        kernel = analyze_reductions(kernel)
    out_type = kernel.output_type
    if kernel.accumulate and out_type.is_sparse:
        kernel = analyze_reductions(
            replace(
                kernel,
                rhs=Add(Access(kernel.lhs.tensor, kernel.lhs.indices), kernel.rhs),
                accumulate=False,
                analysis=None,
            )
        )
    return split_for_whole_expr_reduction(kernel)


def run_kernel(kernel: Kernel, inputs: dict):
    """Compile and execute a kernel against the given tensor bindings.

    Inputs may be CooTensor, DenseTensor, or SparseStorage; each is
    coerced to its declared type first. The output binding is optional and
    only consulted when the kernel accumulates or reads its own output.
    Returns SparseStorage when the output is format-annotated, otherwise a
    DenseTensor.
    """
    pieces = prepare_kernels(kernel)
    out_name = kernel.lhs.tensor
    temp_names = {piece.lhs.tensor for piece in pieces[:-1]}
    env: dict = {}
    for piece in pieces:
        for _, node in walk(piece.rhs):
            if not isinstance(node, Access) or node.tensor in env:
                continue
            if node.tensor in temp_names:
                continue
            declared = piece.tensors[node.tensor]
            if node.tensor in inputs:
                env[node.tensor] = _coerce(inputs[node.tensor], declared, node.tensor)
            elif node.tensor == out_name:
                env[node.tensor] = _empty_value(declared)
            else:
                raise UnknownTensor(f"no binding for input tensor {node.tensor!r}")
    if kernel.accumulate and out_name not in env:
        declared = kernel.tensors[out_name]
        if out_name in inputs:
            env[out_name] = _coerce(inputs[out_name], declared, out_name)
        else:
            env[out_name] = _empty_value(declared)
    result = None
    for piece in pieces:
        result = _execute_single(piece, env)
        env[piece.lhs.tensor] = result
    return result
