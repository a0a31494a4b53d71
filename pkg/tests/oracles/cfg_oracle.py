"""Control-flow-graph oracle: builds an explicit node/edge graph per
function and evaluates E - N + 2P directly.

Independent of the production decision-point counter: this module derives
complexity purely from graph structure. Supported constructs: straight
statements, if/elif/else, while/for (with else, break, continue), boolean
operators (short-circuit), ternaries, try/except/else/finally, with,
comprehensions (loops and filters), lambdas (body inlined at definition
site), return/raise. Dead code after a terminating statement raises, so
fixtures cannot hide unreachable branches from the graph.
"""

from __future__ import annotations

import ast


class _Graph:
    def __init__(self):
        self.n = 0
        self.edges: list[tuple[int, int]] = []

    def node(self) -> int:
        self.n += 1
        return self.n - 1

    def edge(self, u: int, v: int) -> None:
        self.edges.append((u, v))


_COMPS = (ast.ListComp, ast.SetComp, ast.GeneratorExp)


def _child_exprs(e: ast.AST) -> list[ast.expr]:
    out = []
    for child in ast.iter_child_nodes(e):
        if isinstance(child, ast.expr):
            out.append(child)
        elif isinstance(child, ast.keyword):
            out.append(child.value)
    return out


def _expr_flow(g: _Graph, e: ast.expr, cur: int) -> int:
    if isinstance(e, ast.BoolOp):
        end = g.node()
        for value in e.values:
            cur = _expr_flow(g, value, cur)
            g.edge(cur, end)  # short-circuit exit (or final value for the last)
        return end
    if isinstance(e, ast.IfExp):
        test = _expr_flow(g, e.test, cur)
        body = _expr_flow(g, e.body, test)
        orelse = _expr_flow(g, e.orelse, test)
        end = g.node()
        g.edge(body, end)
        g.edge(orelse, end)
        return end
    if isinstance(e, _COMPS) or isinstance(e, ast.DictComp):
        if isinstance(e, ast.DictComp):
            elts: list[ast.expr] = [e.key, e.value]
        else:
            elts = [e.elt]
        return _comp_flow(g, e.generators, elts, cur)
    if isinstance(e, ast.Lambda):
        # the body's control flow runs where the lambda is evaluated
        return _expr_flow(g, e.body, cur)
    for child in _child_exprs(e):
        cur = _expr_flow(g, child, cur)
    node = g.node()
    g.edge(cur, node)
    return node


def _comp_flow(
    g: _Graph, generators: list[ast.comprehension], elts: list[ast.expr], cur: int
) -> int:
    gen = generators[0]
    it = _expr_flow(g, gen.iter, cur)
    head = g.node()
    g.edge(it, head)
    end = g.node()
    g.edge(head, end)  # exhausted
    body = head
    for cond in gen.ifs:
        body = _expr_flow(g, cond, body)
        g.edge(body, head)  # filtered out: next iteration
    if len(generators) > 1:
        inner_end = _comp_flow(g, generators[1:], elts, body)
        g.edge(inner_end, head)
    else:
        for elt in elts:
            body = _expr_flow(g, elt, body)
        g.edge(body, head)  # element produced: next iteration
    return end


class _DeadCode(Exception):
    pass


def _stmts_flow(g, stmts, cur, loops, fexit):
    for stmt in stmts:
        if cur is None:
            raise _DeadCode(ast.dump(stmt)[:60])
        cur = _stmt_flow(g, stmt, cur, loops, fexit)
    return cur


def _stmt_flow(g, stmt, cur, loops, fexit):
    if isinstance(stmt, ast.Return):
        if stmt.value is not None:
            cur = _expr_flow(g, stmt.value, cur)
        node = g.node()
        g.edge(cur, node)
        g.edge(node, fexit)
        return None
    if isinstance(stmt, ast.Raise):
        if stmt.exc is not None:
            cur = _expr_flow(g, stmt.exc, cur)
        node = g.node()
        g.edge(cur, node)
        g.edge(node, fexit)
        return None
    if isinstance(stmt, ast.Break):
        node = g.node()
        g.edge(cur, node)
        g.edge(node, loops[-1][1])
        return None
    if isinstance(stmt, ast.Continue):
        node = g.node()
        g.edge(cur, node)
        g.edge(node, loops[-1][0])
        return None
    if isinstance(stmt, ast.If):
        test = _expr_flow(g, stmt.test, cur)
        body_exit = _stmts_flow(g, stmt.body, test, loops, fexit)
        else_exit = _stmts_flow(g, stmt.orelse, test, loops, fexit) if stmt.orelse else test
        exits = [e for e in (body_exit, else_exit) if e is not None]
        if not exits:
            return None
        join = g.node()
        for e in exits:
            g.edge(e, join)
        return join
    if isinstance(stmt, ast.While):
        head = g.node()
        g.edge(cur, head)
        test = _expr_flow(g, stmt.test, head)
        after = g.node()
        if stmt.orelse:
            else_exit = _stmts_flow(g, stmt.orelse, test, loops, fexit)
            if else_exit is not None:
                g.edge(else_exit, after)
        else:
            g.edge(test, after)
        body_exit = _stmts_flow(g, stmt.body, test, loops + [(head, after)], fexit)
        if body_exit is not None:
            g.edge(body_exit, head)
        return after
    if isinstance(stmt, (ast.For, ast.AsyncFor)):
        it = _expr_flow(g, stmt.iter, cur)
        head = g.node()
        g.edge(it, head)
        after = g.node()
        if stmt.orelse:
            else_exit = _stmts_flow(g, stmt.orelse, head, loops, fexit)
            if else_exit is not None:
                g.edge(else_exit, after)
        else:
            g.edge(head, after)
        body_exit = _stmts_flow(g, stmt.body, head, loops + [(head, after)], fexit)
        if body_exit is not None:
            g.edge(body_exit, head)
        return after
    if isinstance(stmt, ast.Try):
        entry = g.node()
        g.edge(cur, entry)
        body_exit = _stmts_flow(g, stmt.body, entry, loops, fexit)
        if body_exit is not None and stmt.orelse:
            body_exit = _stmts_flow(g, stmt.orelse, body_exit, loops, fexit)
        handler_exits = []
        for handler in stmt.handlers:
            handler_exits.append(_stmts_flow(g, handler.body, entry, loops, fexit))
        exits = [e for e in [body_exit, *handler_exits] if e is not None]
        if not exits:
            return None
        join = g.node()
        for e in exits:
            g.edge(e, join)
        if stmt.finalbody:
            join = _stmts_flow(g, stmt.finalbody, join, loops, fexit)
        return join
    if isinstance(stmt, (ast.With, ast.AsyncWith)):
        for item in stmt.items:
            cur = _expr_flow(g, item.context_expr, cur)
        return _stmts_flow(g, stmt.body, cur, loops, fexit)
    if isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef)):
        # nested definition: decorators/defaults run here, body is a
        # separate component measured on its own
        for dec in stmt.decorator_list:
            cur = _expr_flow(g, dec, cur)
        for default in [*stmt.args.defaults, *(d for d in stmt.args.kw_defaults if d)]:
            cur = _expr_flow(g, default, cur)
        node = g.node()
        g.edge(cur, node)
        return node
    # plain statement: flow through its expressions, then one node
    for child in ast.iter_child_nodes(stmt):
        if isinstance(child, ast.expr):
            cur = _expr_flow(g, child, cur)
    node = g.node()
    g.edge(cur, node)
    return node


def cfg_complexity(func: ast.FunctionDef | ast.AsyncFunctionDef) -> int:
    """E - N + 2 for one function's control-flow graph (P = 1)."""
    g = _Graph()
    entry = g.node()
    fexit = g.node()
    cur = _stmts_flow(g, func.body, entry, [], fexit)
    if cur is not None:
        g.edge(cur, fexit)
    return len(g.edges) - g.n + 2


def cfg_complexities(source: str) -> dict[str, int]:
    """Per-function E - N + 2P for all top-level functions in `source`."""
    tree = ast.parse(source)
    out = {}
    for node in tree.body:
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            out[node.name] = cfg_complexity(node)
    return out
