"""Boolean algebra over condition names: parsing, CNF, and lift verdicts.

Grammar (whitespace-insensitive)::

    expr  := or
    or    := and ("|" and)*
    and   := unary ("&" unary)*
    unary := "!" unary | "(" expr ")" | IDENT
    IDENT := [A-Za-z_][A-Za-z0-9_]*
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterator, Mapping


class ParseError(ValueError):
    """Raised on malformed expressions; carries the byte offset of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class MissingLiftError(KeyError):
    """A verdict was requested for a condition with no lift estimate."""


@dataclass(frozen=True)
class Expr:
    """AST node. ``kind`` is one of ``lit``, ``not``, ``and``, ``or``."""

    kind: str
    children: tuple["Expr", ...] = ()
    name: str = ""

    def __post_init__(self):
        if self.kind == "lit":
            if not self.name or self.children:
                raise ValueError("literal nodes carry a name and no children")
        elif self.kind == "not":
            if len(self.children) != 1:
                raise ValueError("negation takes exactly one child")
        elif self.kind in ("and", "or"):
            if len(self.children) < 2:
                raise ValueError(f"{self.kind} takes at least two children")
        else:
            raise ValueError(f"unknown node kind {self.kind!r}")

    def __str__(self) -> str:
        return _format(self)


def lit(name: str) -> Expr:
    return Expr("lit", name=name)


def not_(child: Expr) -> Expr:
    return Expr("not", (child,))


def and_(*children: Expr) -> Expr:
    return Expr("and", tuple(children))


def or_(*children: Expr) -> Expr:
    return Expr("or", tuple(children))


_TOKEN = re.compile(r"[A-Za-z_][A-Za-z0-9_]*|[|&!()]")


def _tokenize(text: str) -> Iterator[tuple[str, int]]:
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        yield m.group(), pos
        pos = m.end()


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = list(_tokenize(text))
        self.i = 0

    def peek(self) -> str | None:
        return self.tokens[self.i][0] if self.i < len(self.tokens) else None

    def take(self) -> tuple[str, int]:
        if self.i >= len(self.tokens):
            raise ParseError("unexpected end of expression", len(self.text))
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expr(self) -> Expr:
        items = [self.conjunction()]
        while self.peek() == "|":
            self.take()
            items.append(self.conjunction())
        return items[0] if len(items) == 1 else Expr("or", tuple(items))

    def conjunction(self) -> Expr:
        items = [self.unary()]
        while self.peek() == "&":
            self.take()
            items.append(self.unary())
        return items[0] if len(items) == 1 else Expr("and", tuple(items))

    def unary(self) -> Expr:
        tok, off = self.take()
        if tok == "!":
            return not_(self.unary())
        if tok == "(":
            inner = self.expr()
            tok, off = self.take()
            if tok != ")":
                raise ParseError(f"expected ')', got {tok!r}", off)
            return inner
        if tok[0].isalpha() or tok[0] == "_":
            return lit(tok)
        raise ParseError(f"expected a condition name, got {tok!r}", off)


def parse(text: str) -> Expr:
    """Parse an expression; raises ParseError with a byte offset on bad input."""
    p = _Parser(text)
    node = p.expr()
    if p.peek() is not None:
        tok, off = p.tokens[p.i]
        raise ParseError(f"trailing input {tok!r}", off)
    return node


def _format(e: Expr) -> str:
    if e.kind == "lit":
        return e.name
    if e.kind == "not":
        c = e.children[0]
        inner = _format(c)
        return f"!({inner})" if c.kind in ("and", "or") else f"!{inner}"
    sep = " & " if e.kind == "and" else " | "
    shield = ("and", "or") if e.kind == "and" else ("or",)
    parts = []
    for c in e.children:
        inner = _format(c)
        parts.append(f"({inner})" if c.kind in shield else inner)
    return sep.join(parts)


def variables(e: Expr) -> tuple[str, ...]:
    """Condition names appearing in the expression, sorted, each once."""
    seen: set[str] = set()

    def walk(node: Expr):
        if node.kind == "lit":
            seen.add(node.name)
        for c in node.children:
            walk(c)

    walk(e)
    return tuple(sorted(seen))


def evaluate(e: Expr, assignment: Mapping[str, bool]) -> bool:
    """Plain boolean evaluation; the reference semantics for everything else."""
    if e.kind == "lit":
        return bool(assignment[e.name])
    if e.kind == "not":
        return not evaluate(e.children[0], assignment)
    if e.kind == "and":
        return all(evaluate(c, assignment) for c in e.children)
    return any(evaluate(c, assignment) for c in e.children)


@dataclass(frozen=True)
class Literal:
    name: str
    positive: bool = True

    def __str__(self) -> str:
        return self.name if self.positive else f"!{self.name}"


@dataclass(frozen=True)
class CnfForm:
    """Conjunction of disjunctions of literals."""

    clauses: tuple[tuple[Literal, ...], ...]

    def __str__(self) -> str:
        return " & ".join("(" + " | ".join(map(str, cl)) + ")" for cl in self.clauses)


def _to_nnf(e: Expr, negate: bool) -> Expr:
    if e.kind == "lit":
        return not_(e) if negate else e
    if e.kind == "not":
        return _to_nnf(e.children[0], not negate)
    kind = e.kind
    if negate:
        kind = "or" if kind == "and" else "and"
    return Expr(kind, tuple(_to_nnf(c, negate) for c in e.children))


def to_cnf(e: Expr) -> CnfForm:
    """Negation-normal form via De Morgan, then OR distributed over AND.

    Clauses and their literals come out sorted and deduplicated, so equal
    formulas produce equal CnfForm values.
    """

    def clauses_of(node: Expr) -> list[frozenset[Literal]]:
        if node.kind == "lit":
            return [frozenset([Literal(node.name)])]
        if node.kind == "not":
            inner = node.children[0]  # NNF: child is a bare literal
            return [frozenset([Literal(inner.name, positive=False)])]
        if node.kind == "and":
            out: list[frozenset[Literal]] = []
            for c in node.children:
                out.extend(clauses_of(c))
            return out
        # or: cross product of the children's clause sets
        acc: list[frozenset[Literal]] = [frozenset()]
        for c in node.children:
            child_clauses = clauses_of(c)
            acc = [a | b for a in acc for b in child_clauses]
        return acc

    raw = clauses_of(_to_nnf(e, negate=False))
    key = lambda l: (l.name, not l.positive)
    unique = {tuple(sorted(cl, key=key)) for cl in raw}
    ordered = sorted(unique, key=lambda cl: tuple(key(l) for l in cl))
    return CnfForm(tuple(ordered))


def cnf_variables(cnf: CnfForm) -> tuple[str, ...]:
    return tuple(sorted({l.name for cl in cnf.clauses for l in cl}))


def compose_verdict(lifts: Mapping[str, float], cnf: CnfForm) -> bool:
    """Accept/reject from per-condition lift estimates.

    Each clause scores max(0, max over literals of the signed lift); the
    sample is accepted iff every clause score is strictly positive.
    """
    for clause in cnf.clauses:
        score = 0.0
        for l in clause:
            try:
                v = float(lifts[l.name])
            except KeyError:
                raise MissingLiftError(l.name) from None
            score = max(score, v if l.positive else -v)
        if not score > 0.0:
            return False
    return True


def compose_score(lifts: Mapping[str, float], cnf: CnfForm) -> float:
    """Unclamped min-over-clauses of max signed lift.

    Shares its sign with compose_verdict (verdict is True iff this is > 0)
    but keeps the magnitude of the weakest clause, which makes it usable for
    margin histograms.
    """
    worst = math.inf
    for clause in cnf.clauses:
        best = -math.inf
        for l in clause:
            try:
                v = float(lifts[l.name])
            except KeyError:
                raise MissingLiftError(l.name) from None
            best = max(best, v if l.positive else -v)
        worst = min(worst, best)
    return worst
