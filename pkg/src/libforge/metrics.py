"""Static analysis of subject-language source (Python grammar).

All file-level quantities used for candidate scoring come from here:
token-independent syntax-tree summaries, cyclomatic complexity, Halstead
volume, source lines of code, maintainability index, and library-usage
statistics.

Cyclomatic complexity is computed from decision points: if/elif, loop
statements, comprehension generators and their filter clauses, boolean
operators (arity-1 per chain), exception handlers, and ternaries. For
structured code this equals E - N + 2P on the control-flow graph; the
graph-based recount lives in the test suite.

The operator/operand classification behind Halstead volume is a committed
data file (data/halstead_table.json); node kinds absent from the table are
ignored but still traversed.
"""

from __future__ import annotations

import ast
import io
import json
import math
import tokenize as _tokenize
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Mapping

from .errors import ParseError

_DECISION_STMTS = (ast.If, ast.While, ast.For, ast.AsyncFor, ast.IfExp, ast.ExceptHandler)
_FUNC_NODES = (ast.FunctionDef, ast.AsyncFunctionDef)


def _load_halstead_table() -> dict[str, str]:
    raw = resources.files("libforge.data").joinpath("halstead_table.json").read_text("utf-8")
    return json.loads(raw)["classes"]


_HALSTEAD_CLASSES = _load_halstead_table()


@dataclass(frozen=True)
class FunctionInfo:
    name: str
    lineno: int
    end_lineno: int
    decision_points: int


@dataclass(frozen=True)
class AstSummary:
    functions: tuple[FunctionInfo, ...]
    call_sites: Mapping[str, int]  # plain-name call sites, multiset as counts
    operator_total: int
    operand_total: int
    operator_distinct: int
    operand_distinct: int
    sloc: int
    has_module_statements: bool
    module_decision_points: int
    top_level_defs: tuple[str, ...]


@dataclass(frozen=True)
class UsageStats:
    num_definitions: int
    calls_per_definition: Mapping[str, int]
    avg_calls: float
    single_use_fraction: float
    unused_count: int


def _parse_ast(source: str) -> ast.Module:
    try:
        return ast.parse(source)
    except SyntaxError as exc:
        raise ParseError(exc.msg or "syntax error", exc.lineno, exc.offset) from exc


def _decision_points(nodes: Iterable[ast.AST]) -> int:
    """Decision points in the given statements, not descending into nested
    function bodies (those are separate control-flow components)."""
    count = 0
    stack = list(nodes)
    while stack:
        node = stack.pop()
        if isinstance(node, _FUNC_NODES):
            # decorators and default expressions execute in the enclosing flow
            stack.extend(node.decorator_list)
            stack.extend(node.args.defaults)
            stack.extend(node.args.kw_defaults or [])
            continue
        if isinstance(node, _DECISION_STMTS):
            count += 1
        elif isinstance(node, ast.BoolOp):
            count += len(node.values) - 1
        elif isinstance(node, ast.comprehension):
            count += 1 + len(node.ifs)
        elif node.__class__.__name__ == "match_case":
            count += 1
        stack.extend(ast.iter_child_nodes(node))
    return count


def _is_docstring_like(stmt: ast.stmt) -> bool:
    return isinstance(stmt, ast.Expr) and isinstance(stmt.value, ast.Constant)


def _module_exec_statements(tree: ast.Module) -> list[ast.stmt]:
    """Statements that run at import time outside any function body."""
    out: list[ast.stmt] = []
    stack: list[ast.stmt] = list(tree.body)
    while stack:
        stmt = stack.pop()
        if isinstance(stmt, _FUNC_NODES):
            continue
        if isinstance(stmt, ast.ClassDef):
            stack.extend(stmt.body)
            continue
        if _is_docstring_like(stmt):
            continue
        out.append(stmt)
    return out


def _count_sloc(source: str) -> int:
    code_lines: set[int] = set()
    skip = {
        _tokenize.COMMENT,
        _tokenize.NL,
        _tokenize.NEWLINE,
        _tokenize.INDENT,
        _tokenize.DEDENT,
        _tokenize.ENCODING,
        _tokenize.ENDMARKER,
    }
    try:
        for tok in _tokenize.generate_tokens(io.StringIO(source).readline):
            if tok.type in skip:
                continue
            for line in range(tok.start[0], tok.end[0] + 1):
                code_lines.add(line)
    except _tokenize.TokenError as exc:
        raise ParseError(str(exc)) from exc
    return len(code_lines)


def _halstead_counts(tree: ast.Module) -> tuple[int, int, int, int]:
    operators: Counter = Counter()
    operands: Counter = Counter()
    for node in ast.walk(tree):
        kind = node.__class__.__name__
        cls = _HALSTEAD_CLASSES.get(kind)
        if cls == "operator":
            operators[kind] += 1
        elif cls == "operand":
            if isinstance(node, ast.Name):
                operands[("name", node.id)] += 1
            elif isinstance(node, ast.arg):
                operands[("name", node.arg)] += 1
            elif isinstance(node, ast.Constant):
                operands[("const", repr(node.value))] += 1
    return (
        sum(operators.values()),
        sum(operands.values()),
        len(operators),
        len(operands),
    )


def parse(source: str) -> AstSummary:
    """Full deterministic summary of one source file.

    Raises ParseError (with line/column) on syntactically invalid source;
    upstream callers discard the candidate carrying it.
    """
    tree = _parse_ast(source)

    functions: list[FunctionInfo] = []
    for node in ast.walk(tree):
        if isinstance(node, _FUNC_NODES):
            functions.append(
                FunctionInfo(
                    name=node.name,
                    lineno=node.lineno,
                    end_lineno=node.end_lineno or node.lineno,
                    decision_points=_decision_points(node.body),
                )
            )
    functions.sort(key=lambda f: (f.lineno, f.name))

    call_sites: Counter = Counter()
    for node in ast.walk(tree):
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
            call_sites[node.func.id] += 1

    op_total, rand_total, op_distinct, rand_distinct = _halstead_counts(tree)
    module_stmts = _module_exec_statements(tree)

    top_level = tuple(
        n.name for n in tree.body if isinstance(n, (*_FUNC_NODES, ast.ClassDef))
    )

    return AstSummary(
        functions=tuple(functions),
        call_sites=dict(call_sites),
        operator_total=op_total,
        operand_total=rand_total,
        operator_distinct=op_distinct,
        operand_distinct=rand_distinct,
        sloc=_count_sloc(source),
        has_module_statements=bool(module_stmts),
        module_decision_points=_decision_points(module_stmts),
        top_level_defs=top_level,
    )


def cc_from_summary(summary: AstSummary) -> int:
    total = sum(1 + f.decision_points for f in summary.functions)
    if summary.has_module_statements:
        total += 1 + summary.module_decision_points
    return total


def cyclomatic_complexity(source: str) -> int:
    """Sum over functions of (1 + decision points), plus the module-level
    component when top-level executable statements exist. Empty or
    definition-only files score 0."""
    return cc_from_summary(parse(source))


def halstead_volume(source: str) -> float:
    """V = N_total * log2(eta1 + eta2); 0 for token-free source."""
    summary = parse(source)
    return volume_from_summary(summary)


def volume_from_summary(summary: AstSummary) -> float:
    n_total = summary.operator_total + summary.operand_total
    eta = summary.operator_distinct + summary.operand_distinct
    if n_total == 0:
        return 0.0
    return n_total * math.log2(eta)


def maintainability_index(source: str) -> float:
    """171-normalized, 0-clamped variant; ln arguments clamped to >= 1."""
    summary = parse(source)
    v = volume_from_summary(summary)
    cc = cc_from_summary(summary)
    sloc = summary.sloc
    raw = 171.0 - 5.2 * math.log(max(v, 1.0)) - 0.23 * cc - 16.2 * math.log(max(sloc, 1))
    return max(0.0, 100.0 * raw / 171.0)


def usage_stats(library: str, rewritten: list[str]) -> UsageStats:
    """Call-site statistics of library top-level names across rewritten
    sources. Counts direct name invocations and class instantiations;
    library-internal calls and attribute/method calls are excluded."""
    lib_summary = parse(library)
    names = lib_summary.top_level_defs
    calls: dict[str, int] = {name: 0 for name in names}
    for source in rewritten:
        sites = parse(source).call_sites
        for name in names:
            calls[name] += sites.get(name, 0)
    num = len(names)
    total_calls = sum(calls.values())
    single = sum(1 for c in calls.values() if c == 1)
    unused = sum(1 for c in calls.values() if c == 0)
    return UsageStats(
        num_definitions=num,
        calls_per_definition=calls,
        avg_calls=total_calls / num if num else 0.0,
        single_use_fraction=single / num if num else 0.0,
        unused_count=unused,
    )
