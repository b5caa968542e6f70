"""Command-line surface: run kernels, convert formats, emit compiler
internals, sweep the format state space, and run desk-scale benchmarks.

Every error exits nonzero with a single diagnostic line of the form
`sparsec: error[Category]: message`.
"""

import argparse
import csv
import hashlib
import re
import sys
import time
from dataclasses import dataclass, replace
from typing import Optional

from .codegen import choose_output_strategy, emit_text, lower
from .encoding import (
    COMPRESSED,
    DENSE,
    Encoding,
    TensorType,
    csc,
    csr,
    dcsc,
    dcsr,
    enumerate_encodings,
    make_encoding,
)
from .engine import convert, prepare_kernels, run_kernel
from .errors import OrderConflict, ParseError, SparsecError
from .expr import expr_to_text, parse_kernel
from .lattice import (
    access_display_names,
    build_iteration_graph,
    build_lattice,
    index_accesses,
    lattice_to_text,
    topo_sort,
)
from .oracle import GeneratorSpec, dense_eval, density, generate
from .storage import CooTensor, DenseTensor, SparseStorage, pack, unpack
from .tensor_io import read_dense_literal, read_sparse_literal, read_tensor, write_tensor


def result_checksum(result) -> str:
    """Encoding-independent content hash: sorted nonzero COO entries."""
    if isinstance(result, SparseStorage):
        entries = unpack(result).nonzero_entries()
    elif isinstance(result, DenseTensor):
        entries = result.to_coo(drop_zeros=True).entries
    else:
        entries = result.normalize().nonzero_entries()
    text = ";".join(f"{c}:{v!r}" for c, v in entries)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


# ----------------------------------------------------------------------------
# Argument helpers

_GENERATOR_RE = re.compile(r"^(uniform|rowband|identity)(:[^:]+)?(:[^:]+)?$")

_NAMED_ENCODINGS = {
    "csr": csr,
    "csc": csc,
    "dcsr": dcsr,
    "dcsc": dcsc,
}


def parse_encoding_text(text: str) -> Optional[Encoding]:
    """Parse `csr|csc|dcsr|dcsc|dense` or DSL clauses like
    `format(compressed,dense) order(1,0) ptr(32) idx(32)`."""
    text = text.strip()
    if text == "dense":
        return None
    if text in _NAMED_ENCODINGS:
        return _NAMED_ENCODINGS[text]()
    clauses = dict(re.findall(r"(format|order|ptr|idx)\s*\(([^)]*)\)", text))
    if "format" not in clauses:
        raise ParseError(f"cannot parse encoding {text!r}")
    levels = []
    for tok in clauses["format"].split(","):
        tok = tok.strip()
        if tok == "dense":
            levels.append(DENSE)
        elif tok == "compressed":
            levels.append(COMPRESSED)
        else:
            raise ParseError(f"unknown level type {tok!r}")
    ordering = None
    if "order" in clauses:
        ordering = [int(t) for t in clauses["order"].split(",")]
    ptr_w = int(clauses["ptr"]) if "ptr" in clauses else None
    idx_w = int(clauses["idx"]) if "idx" in clauses else None
    return make_encoding(levels, ordering, ptr_w, idx_w)


def parse_input_spec(spec: str, shape: tuple, default_seed: int):
    """Resolve one --input value: a file path, a generator, or a literal."""
    m = _GENERATOR_RE.match(spec)
    if m:
        kind = m.group(1)
        arg1 = m.group(2)[1:] if m.group(2) else None
        arg2 = m.group(3)[1:] if m.group(3) else None
        seed = int(arg2) if arg2 is not None else default_seed
        if kind == "uniform":
            gen = GeneratorSpec(shape, "uniform", density=float(arg1 or 0.1), seed=seed)
        elif kind == "rowband":
            gen = GeneratorSpec(shape, "rowband", dense_rows=int(arg1 or 1), seed=seed)
        else:
            gen = GeneratorSpec(shape, "identity", seed=seed)
        return generate(gen)
    if spec.startswith("dense:"):
        return read_dense_literal(spec[len("dense:") :])
    if spec.startswith("sparse"):
        return read_sparse_literal(spec)
    return read_tensor(spec)


def _bind_inputs(kernel, input_args, seed: int) -> dict:
    bindings = {}
    for item in input_args or []:
        if "=" not in item:
            raise ParseError(f"--input needs NAME=SPEC, got {item!r}")
        name, spec = item.split("=", 1)
        if name not in kernel.tensors:
            raise ParseError(f"--input names unknown tensor {name!r}")
        bindings[name] = parse_input_spec(spec, kernel.tensors[name].shape, seed)
    return bindings


def _write_result(result, path: str):
    if isinstance(result, SparseStorage):
        coo = unpack(result)
    elif isinstance(result, DenseTensor):
        coo = result.to_coo(drop_zeros=True)
    else:
        coo = result
    write_tensor(coo, path)


# ----------------------------------------------------------------------------
# Subcommands


def cmd_run(args) -> int:
    with open(args.kernel_file) as fh:
        kernel = parse_kernel(fh.read())
    bindings = _bind_inputs(kernel, args.input, args.seed)
    started = time.perf_counter()
    result = run_kernel(kernel, bindings)
    elapsed_ms = (time.perf_counter() - started) * 1e3
    if args.output:
        _write_result(result, args.output)
    rho = density(result)
    if isinstance(result, SparseStorage):
        nnz = result.nnz
    else:
        nnz = sum(1 for v in result.data if v != 0.0)
    print(f"output {kernel.lhs.tensor}: nnz {nnz}, density {rho:.6f}, time {elapsed_ms:.1f} ms")
    return 0


def cmd_convert(args) -> int:
    if args.input.startswith("dense:"):
        coo = read_dense_literal(args.input[len("dense:") :]).to_coo(drop_zeros=True)
    elif args.input.startswith("sparse"):
        coo = read_sparse_literal(args.input)
    else:
        coo = read_tensor(args.input)
    src_enc = parse_encoding_text(args.src_format)
    dst_enc = parse_encoding_text(args.dst_format)
    value = pack(coo, src_enc) if src_enc is not None else coo.to_dense()
    result = convert(value, dst_enc)
    _write_result(result, args.output)
    return 0


def cmd_emit(args) -> int:
    with open(args.kernel_file) as fh:
        kernel = parse_kernel(fh.read())
    pieces = prepare_kernels(kernel)
    chunks = []
    for piece in pieces:
        graph = build_iteration_graph(piece)
        topo = topo_sort(graph)
        if args.emit == "graph":
            lines = [f"graph for {expr_to_text(piece.lhs)}:"]
            lines += [f"  node {v}" for v in graph.nodes]
            lines += [
                f"  edge {u} -> {v}  ({', '.join(ts)})"
                for (u, v), ts in sorted(graph.edges.items())
            ]
            lines.append(f"  topo order: {', '.join(topo)}")
            chunks.append("\n".join(lines) + "\n")
        elif args.emit == "lattice":
            _, refs = index_accesses(piece)
            names = access_display_names(refs)
            lines = [f"lattices for {expr_to_text(piece.lhs)}:"]
            for var in topo:
                lat = build_lattice(piece, var)
                lines.append(lattice_to_text(lat, names))
            chunks.append("\n".join(lines) + "\n")
        elif args.emit == "ir":
            lattices = {v: build_lattice(piece, v) for v in topo}
            chunks.append(emit_text(lower(piece, topo, lattices)))
        else:
            raise ParseError(f"unknown emit target {args.emit!r} (ir|lattice|graph)")
    sys.stdout.write("\n".join(chunks))
    return 0


@dataclass
class SearchRow:
    encodings: dict  # swept operand name -> Encoding
    opt: str
    time_ms: float
    checksum: str


def run_search(kernel, bindings, sweep, include_widths: bool) -> list:
    """Run one kernel under every encoding of the swept operand(s).

    `sweep` is one operand name or a list of names; with several, the
    cartesian product of their encoding spaces is explored and any
    combination whose loop orderings conflict is skipped. The computed
    result must not depend on the storage annotation, so a checksum
    divergence is reported as a compiler bug by the caller.
    """
    import itertools

    names = [sweep] if isinstance(sweep, str) else list(sweep)
    coo_bindings = dict(bindings)
    for name in names:
        if isinstance(coo_bindings[name], SparseStorage):
            coo_bindings[name] = unpack(coo_bindings[name])
    spaces = [
        list(enumerate_encodings(kernel.tensors[name].rank, include_widths))
        for name in names
    ]
    rows = []
    for combo in itertools.product(*spaces):
        tensors = dict(kernel.tensors)
        for name, enc in zip(names, combo):
            tensors[name] = TensorType(tensors[name].shape, enc)
        swept = replace(kernel, tensors=tensors, analysis=None)
        started = time.perf_counter()
        try:
            result = run_kernel(swept, coo_bindings)
        except OrderConflict:
            continue
        elapsed_ms = (time.perf_counter() - started) * 1e3
        final = prepare_kernels(swept)[-1]
        topo = topo_sort(build_iteration_graph(final))
        opt = choose_output_strategy(final, topo).describe()
        rows.append(
            SearchRow(dict(zip(names, combo)), opt, elapsed_ms, result_checksum(result))
        )
    return rows


def cmd_search(args) -> int:
    with open(args.kernel_file) as fh:
        kernel = parse_kernel(fh.read())
    bindings = _bind_inputs(kernel, args.input, args.seed)
    sparse_inputs = [
        name
        for name, ttype in kernel.tensors.items()
        if ttype.is_sparse and name != kernel.lhs.tensor and name in bindings
    ]
    if args.sweep_all:
        sweep = sparse_inputs
        if not sweep:
            raise ParseError("--sweep-all found no bound sparse operands")
    elif args.sweep is not None:
        sweep = args.sweep
        if sweep not in bindings:
            raise ParseError(f"swept operand {sweep!r} has no --input binding")
    else:
        if len(sparse_inputs) != 1:
            raise ParseError(
                "pass --sweep NAME to choose the swept operand "
                f"(candidates: {sparse_inputs or 'none'})"
            )
        sweep = sparse_inputs[0]
    rows = run_search(kernel, bindings, sweep, args.encodings == "all")
    out = open(args.output, "w", newline="") if args.output else sys.stdout

    def column(row, field):
        parts = []
        for name, enc in row.encodings.items():
            prefix = f"{name}=" if len(row.encodings) > 1 else ""
            if field == "levels":
                parts.append(prefix + ",".join(lt.value for lt in enc.levels))
            elif field == "ordering":
                parts.append(prefix + ",".join(str(p) for p in enc.ordering))
            elif field == "ptr":
                parts.append(prefix + str(enc.pointer_width))
            else:
                parts.append(prefix + str(enc.index_width))
        return ";".join(parts)

    try:
        writer = csv.writer(out)
        writer.writerow(["levels", "ordering", "ptr", "idx", "opt", "time_ms", "checksum"])
        for row in rows:
            writer.writerow(
                [
                    column(row, "levels"),
                    column(row, "ordering"),
                    column(row, "ptr"),
                    column(row, "idx"),
                    row.opt,
                    f"{row.time_ms:.2f}",
                    row.checksum,
                ]
            )
    finally:
        if args.output:
            out.close()
    checksums = {row.checksum for row in rows}
    if len(checksums) > 1:
        print(
            f"sparsec: error[ChecksumDivergence]: {len(checksums)} distinct results "
            f"across {len(rows)} encodings (compiler bug)",
            file=sys.stderr,
        )
        return 1
    print(f"{len(rows)} encodings, checksum uniform: {checksums.pop()}", file=sys.stderr)
    return 0


# ----------------------------------------------------------------------------
# Benchmarks

_SUITE_KERNELS = {
    "spmspm": (
        "tensor A({n}, {n}) format(dense, compressed)\n"
        "tensor B({n}, {n}) format(dense, compressed)\n"
        "tensor C({n}, {n}) format(dense, compressed)\n"
        "C(i, j) = A(i, k) * B(k, j)\n"
    ),
    "sddmm": (
        "tensor S({n}, {n}) format(dense, compressed)\n"
        "tensor A({n}, {k})\n"
        "tensor B({k}, {n})\n"
        "tensor X({n}, {n}) format(dense, compressed)\n"
        "X(i, j) = S(i, j) * A(i, k) * B(k, j)\n"
    ),
    "mttkrp": (
        "tensor B({n}, {m}, {l}) format(dense, compressed, compressed)\n"
        "tensor D({l}, {j})\n"
        "tensor C({m}, {j})\n"
        "tensor A({n}, {j})\n"
        "A(i, j) = B(i, k, l) * D(l, j) * C(k, j)\n"
    ),
}


def _bench_correctness(kernel_text: str, bindings: dict) -> None:
    kernel = parse_kernel(kernel_text)
    got = run_kernel(kernel, bindings)
    dense_inputs = {
        name: (value.to_dense() if isinstance(value, CooTensor) else value)
        for name, value in bindings.items()
    }
    want = dense_eval(kernel, dense_inputs)
    got_dense = convert(got, None)
    for a, b in zip(got_dense.data, want.data):
        scale = max(abs(a), abs(b), 1.0)
        assert abs(a - b) <= 1e-10 * scale, "benchmark kernel disagrees with oracle"


def cmd_bench(args) -> int:
    suite = args.suite
    seed = args.seed
    print(f"suite {suite}: verifying against the dense oracle at small scale")
    if suite == "spmv":
        _bench_spmv_small_check(seed)
        n = args.scale or 2048
        band = min(1000, n)
        coo = generate(GeneratorSpec((n, n), "rowband", dense_rows=band, seed=seed))
        vec = generate(GeneratorSpec((n,), "uniform", density=1.0, seed=seed + 1))
        print(f"rowband A: n={n}, dense rows={band}, density={density(coo):.4f}")
        for label, enc in (("CSR", csr()), ("DCSR", dcsr()), ("CDR", make_encoding([COMPRESSED, DENSE]))):
            text = (
                f"tensor A({n}, {n}) {enc.describe()}\n"
                f"tensor v({n})\n"
                f"tensor x({n})\n"
                "x(i) = A(i, j) * v(j)\n"
            )
            kernel = parse_kernel(text)
            started = time.perf_counter()
            result = run_kernel(kernel, {"A": coo, "v": vec})
            elapsed_ms = (time.perf_counter() - started) * 1e3
            print(f"  {label:5s} time {elapsed_ms:9.1f} ms  output density {density(result):.4f}")
        return 0
    if suite == "spmspm":
        small = _SUITE_KERNELS[suite].format(n=48)
        _bench_correctness(
            small,
            {
                "A": generate(GeneratorSpec((48, 48), "uniform", density=0.1, seed=seed)),
                "B": generate(GeneratorSpec((48, 48), "uniform", density=0.1, seed=seed + 1)),
            },
        )
        n = args.scale or 1024
        text = _SUITE_KERNELS[suite].format(n=n)
        kernel = parse_kernel(text)
        a = generate(GeneratorSpec((n, n), "uniform", density=0.01, seed=seed))
        b = generate(GeneratorSpec((n, n), "uniform", density=0.01, seed=seed + 1))
        started = time.perf_counter()
        result = run_kernel(kernel, {"A": a, "B": b})
        elapsed_ms = (time.perf_counter() - started) * 1e3
        print(f"  n={n} rho_A,B=0.01  time {elapsed_ms:9.1f} ms  rho_C={density(result):.4f}")
        return 0
    if suite == "sddmm":
        small = _SUITE_KERNELS[suite].format(n=24, k=8)
        _bench_correctness(
            small,
            {
                "S": generate(GeneratorSpec((24, 24), "uniform", density=0.2, seed=seed)),
                "A": generate(GeneratorSpec((24, 8), "uniform", density=1.0, seed=seed + 1)),
                "B": generate(GeneratorSpec((8, 24), "uniform", density=1.0, seed=seed + 2)),
            },
        )
        n = args.scale or 512
        k = 64
        kernel = parse_kernel(_SUITE_KERNELS[suite].format(n=n, k=k))
        s = generate(GeneratorSpec((n, n), "uniform", density=0.05, seed=seed))
        a = generate(GeneratorSpec((n, k), "uniform", density=1.0, seed=seed + 1))
        b = generate(GeneratorSpec((k, n), "uniform", density=1.0, seed=seed + 2))
        started = time.perf_counter()
        result = run_kernel(kernel, {"S": s, "A": a, "B": b})
        elapsed_ms = (time.perf_counter() - started) * 1e3
        print(f"  n={n} k={k}  time {elapsed_ms:9.1f} ms  rho_X={density(result):.4f}")
        return 0
    if suite == "mttkrp":
        small = _SUITE_KERNELS[suite].format(n=12, m=10, l=8, j=4)
        _bench_correctness(
            small,
            {
                "B": generate(GeneratorSpec((12, 10, 8), "uniform", density=0.1, seed=seed)),
                "D": generate(GeneratorSpec((8, 4), "uniform", density=1.0, seed=seed + 1)),
                "C": generate(GeneratorSpec((10, 4), "uniform", density=1.0, seed=seed + 2)),
            },
        )
        n = args.scale or 96
        m, l, j = n, n, 16
        kernel = parse_kernel(_SUITE_KERNELS[suite].format(n=n, m=m, l=l, j=j))
        b = generate(GeneratorSpec((n, m, l), "uniform", density=0.02, seed=seed))
        d = generate(GeneratorSpec((l, j), "uniform", density=1.0, seed=seed + 1))
        c = generate(GeneratorSpec((m, j), "uniform", density=1.0, seed=seed + 2))
        started = time.perf_counter()
        result = run_kernel(kernel, {"B": b, "D": d, "C": c})
        elapsed_ms = (time.perf_counter() - started) * 1e3
        print(f"  n={n} j={j}  time {elapsed_ms:9.1f} ms  rho_A={density(result):.4f}")
        return 0
    raise ParseError(f"unknown suite {suite!r} (spmspm|spmv|sddmm|mttkrp)")


def _bench_spmv_small_check(seed: int):
    text = (
        "tensor A(32, 32) format(compressed, dense)\n"
        "tensor v(32)\n"
        "tensor x(32)\n"
        "x(i) = A(i, j) * v(j)\n"
    )
    bindings = {
        "A": generate(GeneratorSpec((32, 32), "rowband", dense_rows=6, seed=seed)),
        "v": generate(GeneratorSpec((32,), "uniform", density=1.0, seed=seed + 1)),
    }
    _bench_correctness(text, bindings)


# ----------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsec",
        description="sparse tensor algebra compiler and runtime",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="compile a kernel and run it on bound inputs")
    run.add_argument("--kernel-file", required=True)
    run.add_argument("--input", action="append", metavar="NAME=PATH|GEN")
    run.add_argument("--output", help="write the result as extended FROSTT")
    run.add_argument("--seed", type=int, default=0)
    run.set_defaults(func=cmd_run)

    conv = sub.add_parser("convert", help="re-materialize a tensor file in another format")
    conv.add_argument("--input", required=True)
    conv.add_argument("--from", dest="src_format", required=True, metavar="ENC")
    conv.add_argument("--to", dest="dst_format", required=True, metavar="ENC")
    conv.add_argument("--output", required=True)
    conv.set_defaults(func=cmd_convert)

    emit = sub.add_parser("emit", help="print compiler internals for a kernel")
    emit.add_argument("--kernel-file", required=True)
    emit.add_argument("--emit", default="ir", choices=["ir", "lattice", "graph"])
    emit.set_defaults(func=cmd_emit)

    search = sub.add_parser("search", help="sweep the format state space of one operand")
    search.add_argument("--kernel-file", required=True)
    search.add_argument("--input", action="append", metavar="NAME=PATH|GEN")
    search.add_argument("--sweep", help="operand to sweep (default: the sparse input)")
    search.add_argument(
        "--sweep-all",
        action="store_true",
        help="sweep every bound sparse operand jointly; conflicting combinations are skipped",
    )
    search.add_argument("--encodings", choices=["all", "nowidths"], default="all")
    search.add_argument("--output", help="CSV destination (default stdout)")
    search.add_argument("--seed", type=int, default=0)
    search.set_defaults(func=cmd_search)

    bench = sub.add_parser("bench", help="desk-scale kernel benchmarks")
    bench.add_argument("--suite", required=True, choices=["spmspm", "spmv", "sddmm", "mttkrp"])
    bench.add_argument("--scale", type=int)
    bench.add_argument("--seed", type=int, default=0)
    bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SparsecError as e:
        print(f"sparsec: error[{e.category}]: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"sparsec: error[IoError]: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
