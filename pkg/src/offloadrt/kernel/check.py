"""Semantic validation: resolves every identifier, assigns types, and
enforces the structural rules (loop bounds, reduction convention inputs,
no shadowing). Produces the KernelIR that build() stores and run() executes.

Types are 'f64', 'u32', and 'bool' (bool exists only inside expressions;
it cannot be stored or bound with let).
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import CompileError
from .lang import (
    Assign,
    Bin,
    BreakIf,
    BUILTINS,
    Call,
    For,
    If,
    Kernel,
    Let,
    Load,
    Name,
    Node,
    Num,
    Store,
)

_NUMERIC = ("f64", "u32")

_CALL_SIGS = {
    "sin": (("f64",), "f64"),
    "cos": (("f64",), "f64"),
    "sqrt": (("f64",), "f64"),
}


@dataclass(frozen=True)
class KernelIR:
    """A validated kernel: name, ordered params, and a typed statement list."""

    name: str
    params: tuple[tuple[str, str], ...]
    body: tuple[Node, ...]


class _Scope:
    def __init__(self, parent=None):
        self.parent = parent
        self.names: dict[str, str] = {}  # name -> type or kind

    def lookup(self, name: str):
        scope = self
        while scope is not None:
            if name in scope.names:
                return scope.names[name]
            scope = scope.parent
        return None

    def declare(self, name: str, ty: str, node: Node):
        if self.lookup(name) is not None:
            raise CompileError(f"{name!r} is already defined", node.line, node.col)
        self.names[name] = ty


class _Checker:
    def __init__(self, kernel: Kernel):
        self.kernel = kernel
        self.params = dict(kernel.params)
        self.mutable: set[str] = set()  # let-bound locals

    def run(self) -> KernelIR:
        k = self.kernel
        root = _Scope()
        for pname, kind in k.params:
            if pname in BUILTINS:
                raise CompileError(f"{pname!r} is a builtin", k.line, k.col)
            root.declare(pname, kind, k)
        self.check_block(k.body, root, in_loop=False)
        return KernelIR(name=k.name, params=tuple(k.params), body=tuple(k.body))

    # -- statements ---------------------------------------------------------

    def check_block(self, stmts: list[Node], scope: _Scope, in_loop: bool) -> None:
        for stmt in stmts:
            self.check_stmt(stmt, scope, in_loop)

    def check_stmt(self, stmt: Node, scope: _Scope, in_loop: bool) -> None:
        if isinstance(stmt, Let):
            ty = self.expr(stmt.expr, scope)
            if ty not in _NUMERIC:
                raise CompileError("let binds numeric values only", stmt.line, stmt.col)
            if stmt.name in BUILTINS:
                raise CompileError(f"{stmt.name!r} is a builtin", stmt.line, stmt.col)
            scope.declare(stmt.name, ty, stmt)
            self.mutable.add(stmt.name)
            return
        if isinstance(stmt, Assign):
            ty = scope.lookup(stmt.name)
            if ty is None:
                raise CompileError(f"unknown identifier {stmt.name!r}", stmt.line, stmt.col)
            if stmt.name not in self.mutable:
                raise CompileError(
                    f"{stmt.name!r} is not assignable (only let-bound locals are)",
                    stmt.line,
                    stmt.col,
                )
            val = self.expr(stmt.expr, scope)
            if val != ty:
                raise CompileError(
                    f"cannot assign {val} to {stmt.name!r} of type {ty}", stmt.line, stmt.col
                )
            return
        if isinstance(stmt, Store):
            elem = self.buffer_elem(stmt.buf, stmt, scope)
            idx = self.expr(stmt.index, scope)
            if idx != "u32":
                raise CompileError("buffer index must be u32", stmt.line, stmt.col)
            val = self.expr(stmt.expr, scope)
            if val != elem:
                raise CompileError(
                    f"cannot store {val} into buffer of {elem}", stmt.line, stmt.col
                )
            return
        if isinstance(stmt, If):
            cond = self.expr(stmt.cond, scope)
            if cond != "bool":
                raise CompileError("if condition must be boolean", stmt.line, stmt.col)
            self.check_block(stmt.then, _Scope(scope), in_loop)
            self.check_block(stmt.orelse, _Scope(scope), in_loop)
            return
        if isinstance(stmt, For):
            bound = stmt.bound
            if isinstance(bound, Num):
                if bound.is_float:
                    raise CompileError("loop bound must be u32", stmt.line, stmt.col)
            elif isinstance(bound, Name):
                if self.params.get(bound.ident) != "scalar_u32":
                    raise CompileError(
                        "loop bound must be a u32 constant or a scalar_u32 parameter",
                        stmt.line,
                        stmt.col,
                    )
            else:
                raise CompileError(
                    "loop bound must be a u32 constant or a scalar_u32 parameter",
                    stmt.line,
                    stmt.col,
                )
            self.expr(bound, scope)
            inner = _Scope(scope)
            if stmt.var in BUILTINS:
                raise CompileError(f"{stmt.var!r} is a builtin", stmt.line, stmt.col)
            inner.declare(stmt.var, "u32", stmt)
            self.check_block(stmt.body, inner, in_loop=True)
            return
        if isinstance(stmt, BreakIf):
            if not in_loop:
                raise CompileError("break if outside of a loop", stmt.line, stmt.col)
            cond = self.expr(stmt.cond, scope)
            if cond != "bool":
                raise CompileError("break condition must be boolean", stmt.line, stmt.col)
            return
        raise CompileError("unsupported statement", stmt.line, stmt.col)

    # -- expressions ---------------------------------------------------------

    def buffer_elem(self, name: str, node: Node, scope: _Scope) -> str:
        kind = self.params.get(name)
        if kind is None:
            if scope.lookup(name) is not None or name in BUILTINS:
                raise CompileError(f"{name!r} is not a buffer", node.line, node.col)
            raise CompileError(f"unknown identifier {name!r}", node.line, node.col)
        if kind == "buffer_f64":
            return "f64"
        if kind == "buffer_u32":
            return "u32"
        raise CompileError(f"{name!r} is not a buffer", node.line, node.col)

    def expr(self, node: Node, scope: _Scope) -> str:
        node.ty = self._expr(node, scope)
        return node.ty

    def _expr(self, node: Node, scope: _Scope) -> str:
        if isinstance(node, Num):
            return "f64" if node.is_float else "u32"
        if isinstance(node, Name):
            if node.ident in BUILTINS:
                return "u32"
            ty = scope.lookup(node.ident)
            if ty is None:
                raise CompileError(f"unknown identifier {node.ident!r}", node.line, node.col)
            if ty == "scalar_f64":
                return "f64"
            if ty == "scalar_u32":
                return "u32"
            if ty.startswith("buffer_"):
                raise CompileError(
                    f"buffer {node.ident!r} cannot be used as a value", node.line, node.col
                )
            return ty
        if isinstance(node, Load):
            elem = self.buffer_elem(node.buf, node, scope)
            if self.expr(node.index, scope) != "u32":
                raise CompileError("buffer index must be u32", node.line, node.col)
            return elem
        if isinstance(node, Bin):
            left = self.expr(node.left, scope)
            right = self.expr(node.right, scope)
            op = node.op
            if op in ("&&", "||"):
                if left != "bool" or right != "bool":
                    raise CompileError(f"{op} needs boolean operands", node.line, node.col)
                return "bool"
            if left != right or left not in _NUMERIC:
                raise CompileError(
                    f"operands of {op} must both be f64 or both u32 "
                    f"(got {left} and {right}; use f64()/u32() casts)",
                    node.line,
                    node.col,
                )
            if op in ("<", "<=", ">", ">=", "==", "!="):
                return "bool"
            return left
        if isinstance(node, Call):
            return self.call(node, scope)
        raise CompileError("unsupported expression", node.line, node.col)

    def call(self, node: Call, scope: _Scope) -> str:
        fn = node.fn

        def arity(n: int):
            if len(node.args) != n:
                raise CompileError(
                    f"{fn} takes {n} argument{'s' if n != 1 else ''}", node.line, node.col
                )

        if fn in _CALL_SIGS:
            want, out = _CALL_SIGS[fn]
            arity(len(want))
            for a, w in zip(node.args, want):
                if self.expr(a, scope) != w:
                    raise CompileError(f"{fn} needs a {w} argument", node.line, node.col)
            return out
        if fn == "abs":
            arity(1)
            ty = self.expr(node.args[0], scope)
            if ty not in _NUMERIC:
                raise CompileError("abs needs a numeric argument", node.line, node.col)
            return ty
        if fn in ("min", "max"):
            arity(2)
            a = self.expr(node.args[0], scope)
            b = self.expr(node.args[1], scope)
            if a != b or a not in _NUMERIC:
                raise CompileError(
                    f"{fn} needs two arguments of one numeric type", node.line, node.col
                )
            return a
        if fn == "select":
            arity(3)
            c = self.expr(node.args[0], scope)
            a = self.expr(node.args[1], scope)
            b = self.expr(node.args[2], scope)
            if c != "bool":
                raise CompileError("select condition must be boolean", node.line, node.col)
            if a != b or a not in _NUMERIC:
                raise CompileError("select arms must share one numeric type", node.line, node.col)
            return a
        if fn == "f64":
            arity(1)
            if self.expr(node.args[0], scope) not in _NUMERIC:
                raise CompileError("f64() needs a numeric argument", node.line, node.col)
            return "f64"
        if fn == "u32":
            arity(1)
            if self.expr(node.args[0], scope) not in _NUMERIC:
                raise CompileError("u32() needs a numeric argument", node.line, node.col)
            return "u32"
        raise CompileError(f"unknown function {fn!r}", node.line, node.col)


def validate(kernel: Kernel) -> KernelIR:
    """Type-check one parsed kernel. Raises CompileError with line:col."""
    return _Checker(kernel).run()
