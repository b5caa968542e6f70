import random

import pytest

from sparsec.encoding import COMPRESSED, DENSE
from sparsec.errors import (
    KernelSyntaxError,
    RankMismatch,
    ShapeMismatch,
    UndeclaredIndexVar,
    UnknownTensor,
)
from sparsec.expr import (
    Access,
    Add,
    Const,
    Mul,
    analyze_reductions,
    kernel_to_text,
    parse_kernel,
    split_for_whole_expr_reduction,
)

SPMSPM = """
tensor A(3, 4) format(dense, compressed)
tensor B(4, 5) format(dense, compressed)
tensor C(3, 5) format(dense, compressed)
C(i, j) = A(i, k) * B(k, j)
"""


def test_parse_spmspm():
    k = parse_kernel(SPMSPM)
    assert set(k.tensors) == {"A", "B", "C"}
    assert k.index_vars == ("i", "j", "k")
    assert k.lhs == Access("C", ("i", "j"))
    assert k.rhs == Mul(Access("A", ("i", "k")), Access("B", ("k", "j")))
    assert k.tensors["A"].encoding.levels == (DENSE, COMPRESSED)


def test_parse_scalar_dot():
    k = parse_kernel(
        "tensor a(16) format(compressed)\ntensor b(16) format(compressed)\n"
        "tensor x()\nx() = a(i) * b(i)\n"
    )
    assert k.lhs.indices == ()
    assert k.index_vars == ("i",)


def test_parse_broadcast():
    k = parse_kernel(
        "tensor A(3, 4)\ntensor B(3)\ntensor C(3, 4)\nC(i, j) = A(i, j) + B(i)\n"
    )
    k = analyze_reductions(k)
    # B is broadcast along j; path (1,) is the B access.
    assert k.analysis.broadcasts[(1,)] == ("j",)
    assert k.analysis.reduction_vars == ()


def test_parse_star_equals_sugar():
    k = parse_kernel("tensor x(8) format(compressed)\nx(i) *= 2.0\n")
    assert k.rhs == Mul(Access("x", ("i",)), Const(2.0))
    assert not k.accumulate


def test_parse_plus_equals():
    k = parse_kernel("tensor x()\ntensor a(4)\nx() += a(i)\n")
    assert k.accumulate


def test_unknown_tensor():
    with pytest.raises(UnknownTensor):
        parse_kernel("tensor a(4)\nb(i) = a(i)\n")


def test_access_arity():
    with pytest.raises(RankMismatch):
        parse_kernel("tensor a(4)\ntensor c(4)\nc(i) = a(i, j)\n")


def test_lhs_only_var_rejected():
    with pytest.raises(UndeclaredIndexVar):
        parse_kernel("tensor a(4)\ntensor C(4, 4)\nC(i, j) = a(i)\n")


def test_repeated_access_var_rejected():
    with pytest.raises(KernelSyntaxError):
        parse_kernel("tensor A(4, 4)\ntensor x()\nx() = A(i, i)\n")


def test_syntax_error_position():
    with pytest.raises(KernelSyntaxError) as err:
        parse_kernel("tensor a(4)\ntensor c(4)\nc(i) = a(i) +\n")
    assert err.value.position[0] == 3


def test_extent_conflict():
    k = parse_kernel("tensor a(4)\ntensor b(5)\ntensor x()\nx() = a(i) * b(i)\n")
    with pytest.raises(ShapeMismatch):
        analyze_reductions(k)


def test_reduction_classification():
    k = analyze_reductions(parse_kernel(SPMSPM))
    assert k.analysis.free_vars == ("i", "j")
    assert k.analysis.reduction_vars == ("k",)
    assert k.analysis.captures["k"] == ()  # spans the whole RHS


def test_scoped_reduction_capture():
    k = analyze_reductions(
        parse_kernel(
            "tensor A(4, 3)\ntensor B(4, 3)\ntensor C(4)\ntensor D(4)\n"
            "D(i) = A(i, j) + B(i, j) + C(i)\n"
        )
    )
    # RHS is Add(Add(A, B), C); j is captured by the inner Add at path (0,).
    assert k.analysis.captures["j"] == (0,)


def test_split_scoped_sum():
    k = parse_kernel(
        "tensor A(4, 3) format(dense, compressed)\n"
        "tensor B(4, 3) format(dense, compressed)\n"
        "tensor C(4) format(compressed)\ntensor D(4) format(compressed)\n"
        "D(i) = A(i, j) + B(i, j) + C(i)\n"
    )
    pieces = split_for_whole_expr_reduction(analyze_reductions(k))
    assert len(pieces) == 2
    temp = pieces[0]
    assert temp.rhs == Add(Access("A", ("i", "j")), Access("B", ("i", "j")))
    assert temp.lhs.indices == ("i",)
    remainder = pieces[1]
    assert remainder.lhs == Access("D", ("i",))
    assert remainder.rhs == Add(Access(temp.lhs.tensor, ("i",)), Access("C", ("i",)))
    # Every piece now reduces over its whole RHS.
    for piece in pieces:
        assert all(p == () for p in piece.analysis.captures.values())


def test_split_passthrough_for_whole_rhs_reduction():
    k = analyze_reductions(parse_kernel(SPMSPM))
    assert split_for_whole_expr_reduction(k) == [k]


def test_split_temp_encoding_heuristic():
    # Add keeps a dimension compressed only when both operands are; A's i
    # level is dense here, so the temporary is dense along i.
    k = parse_kernel(
        "tensor A(4, 3) format(dense, compressed)\n"
        "tensor B(4, 3) format(compressed, compressed)\n"
        "tensor C(4)\ntensor D(4)\n"
        "D(i) = A(i, j) + B(i, j) + C(i)\n"
    )
    temp = split_for_whole_expr_reduction(analyze_reductions(k))[0]
    assert temp.tensors[temp.lhs.tensor].encoding is None

    # Mul keeps it compressed when either operand is.
    k2 = parse_kernel(
        "tensor A(4, 3) format(dense, compressed)\n"
        "tensor B(4, 3) format(compressed, compressed)\n"
        "tensor C(4)\ntensor D(4)\n"
        "D(i) = A(i, j) * B(i, j) + C(i)\n"
    )
    temp2 = split_for_whole_expr_reduction(analyze_reductions(k2))[0]
    assert temp2.tensors[temp2.lhs.tensor].encoding.levels == (COMPRESSED,)


def test_split_cross_cutting_reduction():
    # k is used inside and outside j's capture subtree: the temporary keeps
    # k free, the remainder reduces it over the whole expression.
    k = parse_kernel(
        "tensor A(4, 3)\ntensor B(3, 5)\ntensor C(4, 5)\ntensor F(4)\n"
        "F(i) = A(i, j) * B(j, k) + C(i, k)\n"
    )
    pieces = split_for_whole_expr_reduction(analyze_reductions(k))
    assert len(pieces) == 2
    assert pieces[0].lhs.indices == ("i", "k")
    assert pieces[0].analysis.reduction_vars == ("j",)
    assert pieces[1].analysis.reduction_vars == ("k",)


def _random_kernel_text(rng):
    shapes = {"a": "(5)", "B": "(5, 3)", "c": "(3)", "D": "(3, 5)"}
    decls = []
    for name, shape in shapes.items():
        fmt = rng.choice(["", " format(compressed)", " format(dense, compressed)"])
        if len(shape.split(",")) != (2 if "," in shape else 1):
            fmt = ""
        if "," in shape and fmt == " format(compressed)":
            fmt = " format(compressed, compressed)"
        if "," not in shape and fmt == " format(dense, compressed)":
            fmt = " format(dense)"
        decls.append(f"tensor {name}{shape}{fmt}")
    decls.append("tensor out(5)")
    exprs = [
        "a(i) + B(i, j) * c(j)",
        "B(i, j) * D(j, i)",
        "a(i) * 2.0 - B(i, j) * c(j)",
        "-a(i) + a(i) * a(i)",
    ]
    return "\n".join(decls) + f"\nout(i) = {rng.choice(exprs)}\n"


def test_parse_print_roundtrip():
    rng = random.Random(11)
    for _ in range(40):
        text = _random_kernel_text(rng)
        k = parse_kernel(text)
        printed = kernel_to_text(k)
        assert parse_kernel(printed) == k, printed


def test_printer_parenthesizes_correctly():
    k = parse_kernel("tensor a(4)\ntensor b(4)\ntensor c(4)\nc(i) = a(i) - (b(i) - a(i))\n")
    assert "- (" in kernel_to_text(k)
    assert parse_kernel(kernel_to_text(k)) == k
