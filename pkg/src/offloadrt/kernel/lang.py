"""Lexer, AST, and recursive-descent parser for the kernel language.

    kernel <name>(<param> : <kind>, ...) { <stmt>* }

    stmt  := let <id> = <expr> ;
           | <id> = <expr> ;
           | <id> [ <expr> ] = <expr> ;
           | if ( <expr> ) { ... } [ else { ... } ]
           | for <id> in 0 .. <expr> { ... }
           | break if ( <expr> ) ;

    expr  := ||, &&, comparisons, + -, * /  (usual precedence, left-assoc,
             comparisons non-associative), atoms: u32/f64 literals,
             identifiers, builtins, buf[expr], calls
             (sin cos sqrt abs min max select f64 u32), parens.

Comments run from ``#`` to end of line. The parser is total: any input
produces either an AST or a CompileError carrying line:col.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from ..errors import CompileError

KEYWORDS = {"kernel", "let", "if", "else", "for", "in", "break"}
KINDS = {"buffer_f64", "buffer_u32", "scalar_f64", "scalar_u32"}
BUILTINS = {"gtid", "block_idx", "thread_idx", "grid_dim", "block_dim"}
CALLS = {"sin", "cos", "sqrt", "abs", "min", "max", "select", "f64", "u32"}

_PUNCT = ["..", "&&", "||", "<=", ">=", "==", "!=",
          "(", ")", "{", "}", "[", "]", ",", ";", ":", "=",
          "+", "-", "*", "/", "<", ">"]

_DIGITS = set("0123456789")
_IDENT_START = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_")
_IDENT_CONT = _IDENT_START | _DIGITS


@dataclass
class Token:
    kind: str  # 'ident' | 'int' | 'float' | punctuation/keyword literal
    text: str
    line: int
    col: int
    value: Union[int, float, None] = None


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    i, line, col = 0, 1, 1
    n = len(source)
    while i < n:
        ch = source[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and source[i] != "\n":
                i += 1
            continue
        start_line, start_col = line, col
        if ch in _DIGITS:
            j = i
            while j < n and source[j] in _DIGITS:
                j += 1
            is_float = False
            if j < n and source[j] == "." and not source[j : j + 2] == "..":
                is_float = True
                j += 1
                while j < n and source[j] in _DIGITS:
                    j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k] in _DIGITS:
                    is_float = True
                    j = k
                    while j < n and source[j] in _DIGITS:
                        j += 1
            text = source[i:j]
            if is_float:
                tokens.append(Token("float", text, start_line, start_col, float(text)))
            else:
                value = int(text)
                if value >= 2**32:
                    raise CompileError(f"integer literal {text} exceeds u32", start_line, start_col)
                tokens.append(Token("int", text, start_line, start_col, value))
            col += j - i
            i = j
            continue
        if ch in _IDENT_START:
            j = i
            while j < n and source[j] in _IDENT_CONT:
                j += 1
            text = source[i:j]
            kind = text if text in KEYWORDS else "ident"
            tokens.append(Token(kind, text, start_line, start_col))
            col += j - i
            i = j
            continue
        for p in _PUNCT:
            if source.startswith(p, i):
                tokens.append(Token(p, p, start_line, start_col))
                i += len(p)
                col += len(p)
                break
        else:
            raise CompileError(f"unexpected character {ch!r}", start_line, start_col)
    tokens.append(Token("eof", "", line, col))
    return tokens


# -- AST --------------------------------------------------------------------


@dataclass
class Node:
    line: int = field(default=0, kw_only=True)
    col: int = field(default=0, kw_only=True)
    ty: Optional[str] = field(default=None, kw_only=True)  # set by the checker


@dataclass
class Num(Node):
    value: Union[int, float] = 0
    is_float: bool = False


@dataclass
class Name(Node):
    ident: str = ""


@dataclass
class Load(Node):
    buf: str = ""
    index: Node = None


@dataclass
class Bin(Node):
    op: str = ""
    left: Node = None
    right: Node = None


@dataclass
class Call(Node):
    fn: str = ""
    args: list[Node] = field(default_factory=list)


@dataclass
class Let(Node):
    name: str = ""
    expr: Node = None


@dataclass
class Assign(Node):
    name: str = ""
    expr: Node = None


@dataclass
class Store(Node):
    buf: str = ""
    index: Node = None
    expr: Node = None


@dataclass
class If(Node):
    cond: Node = None
    then: list[Node] = field(default_factory=list)
    orelse: list[Node] = field(default_factory=list)


@dataclass
class For(Node):
    var: str = ""
    bound: Node = None
    body: list[Node] = field(default_factory=list)


@dataclass
class BreakIf(Node):
    cond: Node = None


@dataclass
class Kernel(Node):
    name: str = ""
    params: list[tuple[str, str]] = field(default_factory=list)
    body: list[Node] = field(default_factory=list)


# -- parser -----------------------------------------------------------------


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def expect(self, kind: str) -> Token:
        tok = self.peek()
        if tok.kind != kind:
            shown = tok.text if tok.kind != "eof" else "end of input"
            raise CompileError(f"expected {kind!r}, found {shown!r}", tok.line, tok.col)
        return self.advance()

    def at(self, kind: str) -> bool:
        return self.peek().kind == kind

    # -- grammar ----------------------------------------------------------

    def program(self) -> list[Kernel]:
        kernels = []
        while not self.at("eof"):
            kernels.append(self.kernel())
        return kernels

    def kernel(self) -> Kernel:
        kw = self.expect("kernel")
        name = self.expect("ident")
        self.expect("(")
        params: list[tuple[str, str]] = []
        if not self.at(")"):
            while True:
                pname = self.expect("ident")
                self.expect(":")
                kind = self.expect("ident")
                if kind.text not in KINDS:
                    raise CompileError(
                        f"unknown parameter kind {kind.text!r}", kind.line, kind.col
                    )
                params.append((pname.text, kind.text))
                if self.at(","):
                    self.advance()
                    continue
                break
        self.expect(")")
        body = self.block()
        return Kernel(name=name.text, params=params, body=body, line=kw.line, col=kw.col)

    def block(self) -> list[Node]:
        self.expect("{")
        stmts = []
        while not self.at("}"):
            if self.at("eof"):
                tok = self.peek()
                raise CompileError("unterminated block", tok.line, tok.col)
            stmts.append(self.stmt())
        self.expect("}")
        return stmts

    def stmt(self) -> Node:
        tok = self.peek()
        if tok.kind == "let":
            self.advance()
            name = self.expect("ident")
            self.expect("=")
            expr = self.expr()
            self.expect(";")
            return Let(name=name.text, expr=expr, line=tok.line, col=tok.col)
        if tok.kind == "if":
            self.advance()
            self.expect("(")
            cond = self.expr()
            self.expect(")")
            then = self.block()
            orelse: list[Node] = []
            if self.at("else"):
                self.advance()
                orelse = self.block()
            return If(cond=cond, then=then, orelse=orelse, line=tok.line, col=tok.col)
        if tok.kind == "for":
            self.advance()
            var = self.expect("ident")
            self.expect("in")
            zero = self.peek()
            if not (zero.kind == "int" and zero.value == 0):
                raise CompileError("loop ranges start at 0", zero.line, zero.col)
            self.advance()
            self.expect("..")
            bound = self.expr()
            body = self.block()
            return For(var=var.text, bound=bound, body=body, line=tok.line, col=tok.col)
        if tok.kind == "break":
            self.advance()
            self.expect("if")
            self.expect("(")
            cond = self.expr()
            self.expect(")")
            self.expect(";")
            return BreakIf(cond=cond, line=tok.line, col=tok.col)
        if tok.kind == "ident":
            name = self.advance()
            if self.at("["):
                self.advance()
                index = self.expr()
                self.expect("]")
                self.expect("=")
                expr = self.expr()
                self.expect(";")
                return Store(
                    buf=name.text, index=index, expr=expr, line=name.line, col=name.col
                )
            self.expect("=")
            expr = self.expr()
            self.expect(";")
            return Assign(name=name.text, expr=expr, line=name.line, col=name.col)
        raise CompileError(f"expected a statement, found {tok.text!r}", tok.line, tok.col)

    def expr(self) -> Node:
        return self.or_expr()

    def or_expr(self) -> Node:
        left = self.and_expr()
        while self.at("||"):
            op = self.advance()
            right = self.and_expr()
            left = Bin(op="||", left=left, right=right, line=op.line, col=op.col)
        return left

    def and_expr(self) -> Node:
        left = self.cmp_expr()
        while self.at("&&"):
            op = self.advance()
            right = self.cmp_expr()
            left = Bin(op="&&", left=left, right=right, line=op.line, col=op.col)
        return left

    def cmp_expr(self) -> Node:
        left = self.add_expr()
        tok = self.peek()
        if tok.kind in ("<", "<=", ">", ">=", "==", "!="):
            self.advance()
            right = self.add_expr()
            return Bin(op=tok.kind, left=left, right=right, line=tok.line, col=tok.col)
        return left

    def add_expr(self) -> Node:
        left = self.mul_expr()
        while self.peek().kind in ("+", "-"):
            op = self.advance()
            right = self.mul_expr()
            left = Bin(op=op.kind, left=left, right=right, line=op.line, col=op.col)
        return left

    def mul_expr(self) -> Node:
        left = self.atom()
        while self.peek().kind in ("*", "/"):
            op = self.advance()
            right = self.atom()
            left = Bin(op=op.kind, left=left, right=right, line=op.line, col=op.col)
        return left

    def atom(self) -> Node:
        tok = self.peek()
        if tok.kind == "int":
            self.advance()
            return Num(value=tok.value, is_float=False, line=tok.line, col=tok.col)
        if tok.kind == "float":
            self.advance()
            return Num(value=tok.value, is_float=True, line=tok.line, col=tok.col)
        if tok.kind == "(":
            self.advance()
            inner = self.expr()
            self.expect(")")
            return inner
        if tok.kind == "ident":
            self.advance()
            if self.at("(") and tok.text in CALLS:
                self.advance()
                args = []
                if not self.at(")"):
                    while True:
                        args.append(self.expr())
                        if self.at(","):
                            self.advance()
                            continue
                        break
                self.expect(")")
                return Call(fn=tok.text, args=args, line=tok.line, col=tok.col)
            if self.at("("):
                raise CompileError(f"unknown function {tok.text!r}", tok.line, tok.col)
            if self.at("["):
                self.advance()
                index = self.expr()
                self.expect("]")
                return Load(buf=tok.text, index=index, line=tok.line, col=tok.col)
            return Name(ident=tok.text, line=tok.line, col=tok.col)
        shown = tok.text if tok.kind != "eof" else "end of input"
        raise CompileError(f"expected an expression, found {shown!r}", tok.line, tok.col)


def parse_source(source: str) -> list[Kernel]:
    """Parse full source text into kernel ASTs. Raises CompileError."""
    if not isinstance(source, str):
        raise CompileError("source is not text", 0, 0)
    kernels = _Parser(tokenize(source)).program()
    seen = set()
    for k in kernels:
        if k.name in seen:
            raise CompileError(f"duplicate kernel {k.name!r}", k.line, k.col)
        seen.add(k.name)
    return kernels
