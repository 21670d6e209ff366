"""Textual axiom language: AST, parser, canonical printer and validation.

Grammar (``#`` starts a comment that runs to end of line)::

    axiom    := "axiom" NAME ":" formula
    formula  := quant | impl
    quant    := ("forall" | "exists") binding ["where" guard] "." formula
    binding  := "diag" "(" id ("," id)+ ")" | id
    guard    := id ("==" | "!=") id
    impl     := binary ["->" formula]          # right-associative
    binary   := unary (("and" | "or") unary)*  # left-associative
    unary    := "not" unary | NAME "(" ids ")" | "(" formula ")"

``not`` binds tighter than ``and``/``or``, which bind tighter than ``->``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Union

from .errors import ParseError

KEYWORDS = {"axiom", "forall", "exists", "diag", "where", "not", "and", "or"}

# -- AST -------------------------------------------------------------------

Pos = tuple[int, int]


@dataclass(frozen=True)
class Pred:
    name: str
    terms: tuple[str, ...]
    pos: Pos | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Not:
    body: "Formula"
    pos: Pos | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Implies:
    lhs: "Formula"
    rhs: "Formula"
    pos: Pos | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class And:
    lhs: "Formula"
    rhs: "Formula"
    pos: Pos | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Or:
    lhs: "Formula"
    rhs: "Formula"
    pos: Pos | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class VarBinding:
    diag: bool
    vars: tuple[str, ...]

    def __post_init__(self):
        if self.diag and len(self.vars) < 2:
            raise ValueError("a diag binding needs at least two variables")
        if not self.diag and len(self.vars) != 1:
            raise ValueError("a plain binding holds exactly one variable")


@dataclass(frozen=True)
class Guard:
    lhs: str
    op: str
    rhs: str
    pos: Pos | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.op not in ("==", "!="):
            raise ValueError(f"unknown guard operator {self.op!r}")


@dataclass(frozen=True)
class Quant:
    kind: str
    binding: VarBinding
    guard: Guard | None
    body: "Formula"
    pos: Pos | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("forall", "exists"):
            raise ValueError(f"unknown quantifier {self.kind!r}")


Formula = Union[Pred, Not, Implies, And, Or, Quant]


@dataclass(frozen=True)
class Axiom:
    name: str
    formula: Formula
    pos: Pos | None = field(default=None, compare=False, repr=False)


def subformulas(f: Formula) -> Iterator[Formula]:
    yield f
    if isinstance(f, (Not, Quant)):
        yield from subformulas(f.body)
    elif isinstance(f, (Implies, And, Or)):
        yield from subformulas(f.lhs)
        yield from subformulas(f.rhs)


def predicates_used(f: Formula) -> set[str]:
    return {g.name for g in subformulas(f) if isinstance(g, Pred)}


# -- lexer -----------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<arrow>->)
  | (?P<cmp>==|!=)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[(),.:])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str   # ident, keyword, punct, arrow, cmp, eof
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    line, line_start, i = 1, 0, 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        if m is None:
            raise ParseError(f"unexpected character {text[i]!r}", line, i - line_start + 1)
        kind = m.lastgroup
        col = i - line_start + 1
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "ident":
            tok_kind = "keyword" if m.group() in KEYWORDS else "ident"
            tokens.append(Token(tok_kind, m.group(), line, col))
        elif kind not in ("ws", "comment"):
            tokens.append(Token(kind, m.group(), line, col))
        i = m.end()
    tokens.append(Token("eof", "", line, i - line_start + 1))
    return tokens


# -- parser ----------------------------------------------------------------

class _Parser:
    def __init__(self, text: str, constants=()):
        self.tokens = tokenize(text)
        self.i = 0
        self.constants = set(constants)
        self.scope: list[set[str]] = []

    def peek(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        tok = self.tokens[self.i]
        if tok.kind != "eof":
            self.i += 1
        return tok

    def error(self, message: str, tok: Token | None = None):
        tok = tok or self.peek()
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        raise ParseError(f"{message}, found {found}", tok.line, tok.col)

    def expect(self, text: str) -> Token:
        tok = self.peek()
        if tok.text != text or tok.kind == "eof":
            self.error(f"expected {text!r}")
        return self.advance()

    def ident(self, what: str = "identifier") -> Token:
        tok = self.peek()
        if tok.kind != "ident":
            self.error(f"expected {what}")
        return self.advance()

    def bound(self, name: str) -> bool:
        return name in self.constants or any(name in s for s in self.scope)

    def require_bound(self, tok: Token) -> None:
        if not self.bound(tok.text):
            raise ParseError(f"unbound variable {tok.text!r}", tok.line, tok.col)

    # axiom := "axiom" NAME ":" formula
    def axiom(self) -> Axiom:
        start = self.expect("axiom")
        name = self.ident("axiom name")
        self.expect(":")
        f = self.formula()
        return Axiom(name.text, f, (start.line, start.col))

    def formula(self) -> Formula:
        tok = self.peek()
        if tok.kind == "keyword" and tok.text in ("forall", "exists"):
            return self.quant()
        return self.impl()

    def quant(self) -> Quant:
        kw = self.advance()
        tok = self.peek()
        if tok.text == "diag":
            self.advance()
            self.expect("(")
            names = [self.ident("variable")]
            while self.peek().text == ",":
                self.advance()
                names.append(self.ident("variable"))
            self.expect(")")
            if len(names) < 2:
                raise ParseError("diag() needs at least two variables", tok.line, tok.col)
            binding = VarBinding(True, tuple(n.text for n in names))
        else:
            binding = VarBinding(False, (self.ident("variable or diag(...)").text,))
        if len(set(binding.vars)) != len(binding.vars):
            raise ParseError("variable bound twice in one binding", tok.line, tok.col)
        self.scope.append(set(binding.vars))
        guard = None
        if self.peek().text == "where":
            self.advance()
            lhs = self.ident("guard variable")
            op = self.peek()
            if op.kind != "cmp":
                self.error("expected '==' or '!='")
            self.advance()
            rhs = self.ident("guard variable")
            self.require_bound(lhs)
            self.require_bound(rhs)
            guard = Guard(lhs.text, op.text, rhs.text, (lhs.line, lhs.col))
        self.expect(".")
        body = self.formula()
        self.scope.pop()
        return Quant(kw.text, binding, guard, body, (kw.line, kw.col))

    def impl(self) -> Formula:
        lhs = self.binary()
        tok = self.peek()
        if tok.kind == "arrow":
            self.advance()
            return Implies(lhs, self.formula(), (tok.line, tok.col))
        return lhs

    def binary(self) -> Formula:
        lhs = self.unary()
        while self.peek().kind == "keyword" and self.peek().text in ("and", "or"):
            tok = self.advance()
            rhs = self.unary()
            node = And if tok.text == "and" else Or
            lhs = node(lhs, rhs, (tok.line, tok.col))
        return lhs

    def unary(self) -> Formula:
        tok = self.peek()
        if tok.kind == "keyword" and tok.text == "not":
            self.advance()
            return Not(self.unary(), (tok.line, tok.col))
        if tok.text == "(" and tok.kind == "punct":
            self.advance()
            f = self.formula()
            self.expect(")")
            return f
        if tok.kind == "ident":
            self.advance()
            self.expect("(")
            terms = [self.ident("term")]
            while self.peek().text == ",":
                self.advance()
                terms.append(self.ident("term"))
            self.expect(")")
            for t in terms:
                self.require_bound(t)
            return Pred(tok.text, tuple(t.text for t in terms), (tok.line, tok.col))
        if tok.kind == "keyword" and tok.text in ("forall", "exists"):
            self.error("a quantified formula in operand position must be parenthesized")
        self.error("expected a predicate, 'not' or '('")


def parse_axiom(text: str, constants=()) -> Axiom:
    """Parse exactly one ``axiom NAME : formula`` definition."""
    p = _Parser(text, constants)
    ax = p.axiom()
    if p.peek().kind != "eof":
        p.error("expected end of input")
    return ax


def parse_formula(text: str, constants=()) -> Formula:
    p = _Parser(text, constants)
    f = p.formula()
    if p.peek().kind != "eof":
        p.error("expected end of input")
    return f


def parse_axioms(text: str, constants=()) -> list[Axiom]:
    """Parse an axiom file: a sequence of axiom definitions."""
    p = _Parser(text, constants)
    out = []
    while p.peek().kind != "eof":
        out.append(p.axiom())
    names = [a.name for a in out]
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        raise ParseError(f"duplicate axiom names: {sorted(dup)}")
    return out


# -- printer ---------------------------------------------------------------

def _binding_text(b: VarBinding) -> str:
    return f"diag({', '.join(b.vars)})" if b.diag else b.vars[0]


def _fmt_formula(f: Formula) -> str:
    if isinstance(f, Quant):
        guard = f" where {f.guard.lhs} {f.guard.op} {f.guard.rhs}" if f.guard else ""
        return f"{f.kind} {_binding_text(f.binding)}{guard} . {_fmt_formula(f.body)}"
    if isinstance(f, Implies):
        return f"{_fmt_binary(f.lhs)} -> {_fmt_formula(f.rhs)}"
    return _fmt_binary(f)


def _fmt_binary(f: Formula) -> str:
    if isinstance(f, (And, Or)):
        word = "and" if isinstance(f, And) else "or"
        return f"{_fmt_binary(f.lhs)} {word} {_fmt_unary(f.rhs)}"
    return _fmt_unary(f)


def _fmt_unary(f: Formula) -> str:
    if isinstance(f, Pred):
        return f"{f.name}({', '.join(f.terms)})"
    if isinstance(f, Not):
        return f"not {_fmt_unary(f.body)}"
    return f"({_fmt_formula(f)})"


def format_formula(f: Formula) -> str:
    return _fmt_formula(f)


def format_axiom(ax: Axiom | Formula, name: str | None = None) -> str:
    """Canonical text with the minimal parenthesization the grammar needs."""
    if isinstance(ax, Axiom):
        return f"axiom {ax.name}: {_fmt_formula(ax.formula)}"
    return f"axiom {name or 'unnamed'}: {_fmt_formula(ax)}"


# -- signature and validation ----------------------------------------------

IMAGE = "image"
CLASS_LABEL = "class_label"
MACRO_LABEL = "macro_label"
ATTRIBUTE_VECTOR = "attribute_vector"
SEEN_CLASS_LABEL = "seen_class_label"
SORTS = (IMAGE, CLASS_LABEL, MACRO_LABEL, ATTRIBUTE_VECTOR, SEEN_CLASS_LABEL)
LABEL_SORTS = frozenset({CLASS_LABEL, MACRO_LABEL, SEEN_CLASS_LABEL})


@dataclass(frozen=True)
class Signature:
    """Predicate name -> tuple of allowed sorts per argument position."""

    predicates: dict[str, tuple[frozenset[str], ...]]

    def arity(self, name: str) -> int:
        return len(self.predicates[name])


def flvn_signature() -> Signature:
    return Signature({
        "isOfClass": (frozenset({IMAGE}), frozenset({CLASS_LABEL, SEEN_CLASS_LABEL})),
        "isOfClassMasked": (frozenset({IMAGE}), frozenset({CLASS_LABEL, SEEN_CLASS_LABEL})),
        "isOfMacro": (frozenset({IMAGE}), frozenset({MACRO_LABEL})),
        "hasSameAttribute": (frozenset({IMAGE}), frozenset({IMAGE, ATTRIBUTE_VECTOR})),
    })


@dataclass(frozen=True)
class Diagnostic:
    message: str
    pos: Pos | None = None

    def __str__(self) -> str:
        if self.pos:
            return f"line {self.pos[0]}, col {self.pos[1]}: {self.message}"
        return self.message


def infer_sorts(f: Formula, signature: Signature) -> dict[str, frozenset[str]]:
    """Candidate sorts of every variable, intersected over its predicate uses.

    Variables that never appear as predicate arguments get every sort.
    """
    cands: dict[str, frozenset[str]] = {}
    for g in subformulas(f):
        if isinstance(g, Quant):
            for v in g.binding.vars:
                cands.setdefault(v, frozenset(SORTS))
    for g in subformulas(f):
        if isinstance(g, Pred) and g.name in signature.predicates:
            allowed = signature.predicates[g.name]
            if len(allowed) != len(g.terms):
                continue
            for term, sorts in zip(g.terms, allowed):
                cands[term] = cands.get(term, frozenset(SORTS)) & sorts
    # a guard ties its two sides to label sorts
    for g in subformulas(f):
        if isinstance(g, Quant) and g.guard is not None:
            for v in (g.guard.lhs, g.guard.rhs):
                if v in cands and cands[v] & LABEL_SORTS:
                    cands[v] = cands[v] & LABEL_SORTS
    return cands


def validate(ax: Axiom | Formula, signature: Signature | None = None, constants=()) -> list[Diagnostic]:
    """Diagnostics for unknown predicates, arity, sorts, binding and guards."""
    signature = signature or flvn_signature()
    f = ax.formula if isinstance(ax, Axiom) else ax
    diags: list[Diagnostic] = []

    def walk(g: Formula, scope: tuple[str, ...]):
        if isinstance(g, Pred):
            if g.name not in signature.predicates:
                diags.append(Diagnostic(f"unknown predicate {g.name!r}", g.pos))
            elif len(g.terms) != signature.arity(g.name):
                diags.append(Diagnostic(
                    f"{g.name} expects {signature.arity(g.name)} arguments, got {len(g.terms)}", g.pos))
            for t in g.terms:
                if t not in scope and t not in constants:
                    diags.append(Diagnostic(f"unbound variable {t!r} in {g.name}", g.pos))
        elif isinstance(g, Quant):
            inner = scope + g.binding.vars
            if g.binding.diag and len(g.binding.vars) < 2:
                diags.append(Diagnostic("diag binding needs at least two variables", g.pos))
            if g.guard is not None:
                for v in (g.guard.lhs, g.guard.rhs):
                    if v not in inner and v not in constants:
                        diags.append(Diagnostic(f"unbound guard variable {v!r}", g.guard.pos))
            walk(g.body, inner)
        elif isinstance(g, Not):
            walk(g.body, scope)
        else:
            walk(g.lhs, scope)
            walk(g.rhs, scope)

    walk(f, tuple(constants))
    sorts = infer_sorts(f, signature)
    for v, cand in sorted(sorts.items()):
        if not cand:
            diags.append(Diagnostic(f"variable {v!r} is used with incompatible sorts"))
    for g in subformulas(f):
        if isinstance(g, Quant) and g.guard is not None:
            for v in (g.guard.lhs, g.guard.rhs):
                cand = sorts.get(v, frozenset())
                if cand and not cand & LABEL_SORTS:
                    diags.append(Diagnostic(
                        f"guard variable {v!r} has sort {'/'.join(sorted(cand))}, expected a label",
                        g.guard.pos))
    return diags


# -- built-in knowledge base -------------------------------------------------

BUILTIN_AXIOMS_TEXT = """\
# labelled examples
axiom phi1: forall diag(x, l) . isOfClass(x, l)
# class hierarchy
axiom phi2: forall diag(x, l, q) . isOfClass(x, l) -> isOfMacro(x, q)
# same class, similar embeddings
axiom phi3: forall diag(x1, l1) . forall diag(x2, l2) where l1 == l2 . hasSameAttribute(x1, x2)
# different class, dissimilar embeddings
axiom phi4: forall diag(x1, l1) . forall diag(x2, l2) where l1 != l2 . not hasSameAttribute(x1, x2)
# embeddings agree with their class attribute vector
axiom phi5: forall diag(x, l) . forall diag(a, la) where l == la . hasSameAttribute(x, a)
# refutation: each seen class has a sample that survives attribute masking
axiom phi6: forall lseen . exists diag(x, l) where l == lseen . isOfClassMasked(x, lseen)
"""


def builtin_axioms() -> list[Axiom]:
    return parse_axioms(BUILTIN_AXIOMS_TEXT)
