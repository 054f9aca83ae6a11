"""Lower validated kernel IR to a whole-grid Python function and compile it.

The generated function runs every work item sequentially in gtid order, so
identical (IR, args, grid, block) always produce identical buffer contents.
One source text serves two executors: numba njit (nogil, the default) and
plain exec for environments where the JIT is disabled. u32 arithmetic is
int64-with-mask, which is exact under both (int64 wraparound mod 2^64 then
mod 2^32 equals mod 2^32).

The function never raises from kernel code. It reports through the _ctl
array: _ctl[0] error code (0 ok, 1 out-of-bounds, 2 division by zero,
3 cast out of range), _ctl[1] detail, _ctl[2] work items entered.
"""

from __future__ import annotations

import math
import threading

from .check import KernelIR
from .lang import (
    Assign,
    Bin,
    BreakIf,
    Call,
    For,
    If,
    Let,
    Load,
    Name,
    Node,
    Num,
    Store,
)

MASK = 4294967295

CTL_OK = 0
CTL_OOB = 1
CTL_DIV_ZERO = 2
CTL_CAST_RANGE = 3

_BUILTIN_VARS = {
    "gtid": "_gtid",
    "block_idx": "_blk",
    "thread_idx": "_th",
    "grid_dim": "_nblocks",
    "block_dim": "_bvol",
}

# int64 stays exact for |x| below this; larger f64 -> u32 casts abort.
_CAST_LIMIT = "9.2e18"


class _Emitter:
    def __init__(self):
        self.lines: list[str] = []
        self.indent = 0
        self.counter = 0

    def line(self, text: str) -> None:
        self.lines.append("    " * self.indent + text)

    def fresh(self) -> str:
        self.counter += 1
        return f"_t{self.counter}"

    def abort(self, code: int, detail: str = "0") -> None:
        self.line(f"_ctl[0] = {code}")
        self.line(f"_ctl[1] = {detail}")
        self.line("return")


def _pname(name: str) -> str:
    return f"v_{name}"


class _Codegen:
    def __init__(self, ir: KernelIR):
        self.ir = ir
        self.e = _Emitter()
        # Locals get scope-unique generated names: sibling blocks may declare
        # the same identifier with different types, which must not share one
        # Python variable (the JIT types variables statically).
        self.scopes: list[dict[str, str]] = [{p: _pname(p) for p, _ in ir.params}]
        self.declared = 0

    def declare(self, name: str) -> str:
        self.declared += 1
        generated = f"v_{name}_{self.declared}"
        self.scopes[-1][name] = generated
        return generated

    def resolve(self, name: str) -> str:
        if name in _BUILTIN_VARS:
            return _BUILTIN_VARS[name]
        for scope in reversed(self.scopes):
            if name in scope:
                return scope[name]
        raise AssertionError(f"unresolved identifier {name}")

    def scoped(self, stmts) -> None:
        self.scopes.append({})
        self.block(stmts)
        self.scopes.pop()

    def generate(self) -> str:
        e = self.e
        args = [_pname(p) for p, _ in self.ir.params]
        e.line(f"def _kernel({', '.join(args + ['_gx', '_gy', '_gz', '_bx', '_by', '_bz', '_ctl'])}):")
        e.indent += 1
        e.line(f"_M = {MASK}")
        e.line("_nblocks = _gx * _gy * _gz")
        e.line("_bvol = _bx * _by * _bz")
        for p, kind in self.ir.params:
            if kind.startswith("buffer_"):
                e.line(f"_len_{p} = {_pname(p)}.shape[0]")
        e.line("for _blk in range(_nblocks):")
        e.indent += 1
        e.line("for _th in range(_bvol):")
        e.indent += 1
        e.line("_ctl[2] = _ctl[2] + 1")
        e.line("_gtid = _blk * _bvol + _th")
        for stmt in self.ir.body:
            self.stmt(stmt)
        e.indent -= 2
        e.line("return")
        return "\n".join(self.e.lines) + "\n"

    # -- statements --------------------------------------------------------

    def stmt(self, node: Node) -> None:
        e = self.e
        if isinstance(node, Let):
            val = self.expr(node.expr)
            e.line(f"{self.declare(node.name)} = {val}")
            return
        if isinstance(node, Assign):
            val = self.expr(node.expr)
            e.line(f"{self.resolve(node.name)} = {val}")
            return
        if isinstance(node, Store):
            idx = self.checked_index(node.buf, node.index)
            val = self.expr(node.expr)
            e.line(f"{self.resolve(node.buf)}[{idx}] = {val}")
            return
        if isinstance(node, If):
            cond = self.expr(node.cond)
            e.line(f"if {cond}:")
            e.indent += 1
            self.scoped(node.then)
            e.indent -= 1
            if node.orelse:
                e.line("else:")
                e.indent += 1
                self.scoped(node.orelse)
                e.indent -= 1
            return
        if isinstance(node, For):
            bound = self.expr(node.bound)
            self.scopes.append({})
            e.line(f"for {self.declare(node.var)} in range({bound}):")
            e.indent += 1
            self.block(node.body)
            e.indent -= 1
            self.scopes.pop()
            return
        if isinstance(node, BreakIf):
            cond = self.expr(node.cond)
            e.line(f"if {cond}:")
            e.indent += 1
            e.line("break")
            e.indent -= 1
            return
        raise AssertionError(f"unhandled statement {type(node).__name__}")

    def block(self, stmts) -> None:
        if not stmts:
            self.e.line("pass")
            return
        for s in stmts:
            self.stmt(s)

    # -- expressions ---------------------------------------------------------
    #
    # Every compound expression is hoisted to a temporary in source order, so
    # evaluation order (and therefore IEEE result) is fixed left-to-right.

    def checked_index(self, buf: str, index: Node) -> str:
        e = self.e
        idx = self.expr(index)
        tmp = e.fresh()
        e.line(f"{tmp} = {idx}")
        e.line(f"if {tmp} >= _len_{buf}:")
        e.indent += 1
        e.abort(CTL_OOB, tmp)
        e.indent -= 1
        return tmp

    def expr(self, node: Node) -> str:
        e = self.e
        if isinstance(node, Num):
            return repr(node.value) if node.is_float else str(node.value)
        if isinstance(node, Name):
            return self.resolve(node.ident)
        if isinstance(node, Load):
            idx = self.checked_index(node.buf, node.index)
            tmp = e.fresh()
            cast = "float" if node.ty == "f64" else "int"
            e.line(f"{tmp} = {cast}({self.resolve(node.buf)}[{idx}])")
            return tmp
        if isinstance(node, Bin):
            return self.binop(node)
        if isinstance(node, Call):
            return self.call(node)
        raise AssertionError(f"unhandled expression {type(node).__name__}")

    def binop(self, node: Bin) -> str:
        e = self.e
        op = node.op
        if op in ("&&", "||"):
            result = e.fresh()
            left = self.expr(node.left)
            e.line(f"{result} = {left}")
            e.line(f"if {result}:" if op == "&&" else f"if not {result}:")
            e.indent += 1
            right = self.expr(node.right)
            e.line(f"{result} = {right}")
            e.indent -= 1
            return result
        left = self.expr(node.left)
        right = self.expr(node.right)
        tmp = e.fresh()
        if op in ("<", "<=", ">", ">=", "==", "!="):
            e.line(f"{tmp} = {left} {op} {right}")
            return tmp
        if op == "/":
            zero = "0.0" if node.ty == "f64" else "0"
            e.line(f"if {right} == {zero}:")
            e.indent += 1
            e.abort(CTL_DIV_ZERO)
            e.indent -= 1
            div = "/" if node.ty == "f64" else "//"
            e.line(f"{tmp} = {left} {div} {right}")
            return tmp
        if node.ty == "u32":
            e.line(f"{tmp} = ({left} {op} {right}) & _M")
        else:
            e.line(f"{tmp} = {left} {op} {right}")
        return tmp

    def call(self, node: Call) -> str:
        e = self.e
        fn = node.fn
        if fn in ("sin", "cos", "sqrt"):
            arg = self.expr(node.args[0])
            tmp = e.fresh()
            e.line(f"{tmp} = math.{fn}({arg})")
            return tmp
        if fn in ("abs", "min", "max"):
            args = [self.expr(a) for a in node.args]
            tmp = e.fresh()
            e.line(f"{tmp} = {fn}({', '.join(args)})")
            return tmp
        if fn == "select":
            cond = self.expr(node.args[0])
            a = self.expr(node.args[1])
            b = self.expr(node.args[2])
            tmp = e.fresh()
            e.line(f"{tmp} = {a} if {cond} else {b}")
            return tmp
        if fn == "f64":
            arg = self.expr(node.args[0])
            tmp = e.fresh()
            e.line(f"{tmp} = float({arg})")
            return tmp
        if fn == "u32":
            arg = self.expr(node.args[0])
            tmp = e.fresh()
            if node.args[0].ty == "u32":
                e.line(f"{tmp} = {arg} & _M")
                return tmp
            e.line(f"if {arg} != {arg} or {arg} >= {_CAST_LIMIT} or {arg} <= -{_CAST_LIMIT}:")
            e.indent += 1
            e.abort(CTL_CAST_RANGE)
            e.indent -= 1
            e.line(f"{tmp} = int({arg}) & _M")
            return tmp
        raise AssertionError(f"unhandled call {fn}")


def emit_source(ir: KernelIR) -> str:
    """Python source for the whole-grid function of one kernel."""
    return _Codegen(ir).generate()


_compile_lock = threading.Lock()
_compiled: dict[tuple[str, bool], object] = {}


def _numba_signature(ir: KernelIR):
    import numba

    parts = []
    for _, kind in ir.params:
        if kind == "buffer_f64":
            parts.append(numba.float64[::1])
        elif kind == "buffer_u32":
            parts.append(numba.uint32[::1])
        elif kind == "scalar_f64":
            parts.append(numba.float64)
        else:
            parts.append(numba.int64)
    parts.extend([numba.int64] * 6)
    parts.append(numba.int64[::1])
    return numba.void(*parts)


def compile_ir(ir: KernelIR, jit: bool = True):
    """Callable for the kernel. Compilation is memoized per source text, so
    programs sharing a kernel body compile once per process."""
    source = emit_source(ir)
    key = (source, jit)
    with _compile_lock:
        fn = _compiled.get(key)
    if fn is not None:
        return fn
    namespace = {"math": math}
    exec(compile(source, f"<kernel {ir.name}>", "exec"), namespace)
    fn = namespace["_kernel"]
    if jit:
        import numba

        fn = numba.njit(_numba_signature(ir), nogil=True)(fn)
    with _compile_lock:
        _compiled[key] = fn
    return fn
