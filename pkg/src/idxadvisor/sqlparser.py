"""Minimal SQL parser for analytical SELECT statements.

Covers the surface the advisor extracts features from: single SELECTs with
explicit and comma-style joins, subqueries (scalar, IN, EXISTS, derived
tables), CTEs, GROUP BY / HAVING / ORDER BY / LIMIT, and the usual predicate
forms (comparisons, LIKE, IN, BETWEEN, IS NULL, AND/OR/NOT), plus arithmetic,
function calls, and CASE expressions. Everything else (DDL, DML, set
operations, window functions) is rejected with ParseError.

Every node records its character span in the original statement so callers
can recover predicate text exactly as written.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ParseError

KEYWORDS = {
    "SELECT", "FROM", "WHERE", "GROUP", "ORDER", "BY", "HAVING", "AS",
    "JOIN", "INNER", "LEFT", "RIGHT", "FULL", "OUTER", "CROSS", "ON",
    "AND", "OR", "NOT", "IN", "LIKE", "BETWEEN", "IS", "NULL", "EXISTS",
    "DISTINCT", "WITH", "CASE", "WHEN", "THEN", "ELSE", "END",
    "ASC", "DESC", "LIMIT", "OFFSET", "TRUE", "FALSE",
    "UNION", "INTERSECT", "EXCEPT", "ALL",
}

_REJECTED_LEADING = {
    "INSERT", "UPDATE", "DELETE", "CREATE", "DROP", "ALTER", "TRUNCATE",
    "GRANT", "REVOKE", "EXPLAIN", "SET", "COPY", "VACUUM", "ANALYZE",
}

_CMP_OPS = {"=", "!=", "<>", "<", "<=", ">", ">="}


@dataclass
class Token:
    kind: str  # KEYWORD | IDENT | NUMBER | STRING | OP | PUNCT | EOF
    value: str
    pos: int


def tokenize(sql: str) -> list[Token]:
    tokens: list[Token] = []
    i, n = 0, len(sql)
    while i < n:
        ch = sql[i]
        if ch.isspace():
            i += 1
            continue
        if sql.startswith("--", i):
            j = sql.find("\n", i)
            i = n if j < 0 else j + 1
            continue
        if sql.startswith("/*", i):
            j = sql.find("*/", i)
            if j < 0:
                raise ParseError("unterminated block comment", sql, i)
            i = j + 2
            continue
        if ch == "'":
            j = i + 1
            while j < n:
                if sql[j] == "'":
                    if j + 1 < n and sql[j + 1] == "'":  # escaped quote
                        j += 2
                        continue
                    break
                j += 1
            else:
                raise ParseError("unterminated string literal", sql, i)
            if j >= n:
                raise ParseError("unterminated string literal", sql, i)
            tokens.append(Token("STRING", sql[i : j + 1], i))
            i = j + 1
            continue
        if ch == '"':
            j = sql.find('"', i + 1)
            if j < 0:
                raise ParseError("unterminated quoted identifier", sql, i)
            tokens.append(Token("IDENT", sql[i + 1 : j], i))
            i = j + 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and sql[i + 1].isdigit()):
            j = i
            seen_dot = False
            while j < n and (sql[j].isdigit() or (sql[j] == "." and not seen_dot)):
                seen_dot = seen_dot or sql[j] == "."
                j += 1
            tokens.append(Token("NUMBER", sql[i:j], i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (sql[j].isalnum() or sql[j] == "_" or sql[j] == "$"):
                j += 1
            word = sql[i:j]
            upper = word.upper()
            if upper in KEYWORDS:
                tokens.append(Token("KEYWORD", upper, i))
            else:
                tokens.append(Token("IDENT", word, i))
            i = j
            continue
        for op in ("<>", "<=", ">=", "!=", "||"):
            if sql.startswith(op, i):
                tokens.append(Token("OP", op, i))
                i += 2
                break
        else:
            if ch in "=<>+-*/%":
                tokens.append(Token("OP", ch, i))
                i += 1
            elif ch in "(),.;":
                tokens.append(Token("PUNCT", ch, i))
                i += 1
            else:
                raise ParseError(f"unexpected character {ch!r}", sql, i)
    tokens.append(Token("EOF", "", n))
    return tokens


# --- AST -------------------------------------------------------------------


@dataclass
class Node:
    start: int = field(default=0, kw_only=True)
    end: int = field(default=0, kw_only=True)

    def text(self, sql: str) -> str:
        return sql[self.start : self.end].strip()


@dataclass
class ColumnRef(Node):
    qualifier: str | None
    name: str


@dataclass
class Star(Node):
    qualifier: str | None = None


@dataclass
class Literal(Node):
    value: str
    kind: str  # number | string | null | bool


@dataclass
class FuncCall(Node):
    name: str
    args: list[Node]
    distinct: bool = False


@dataclass
class BinOp(Node):
    op: str
    left: Node
    right: Node


@dataclass
class BoolOp(Node):
    op: str  # AND | OR
    operands: list[Node]


@dataclass
class NotOp(Node):
    operand: Node


@dataclass
class InList(Node):
    expr: Node
    items: list[Node]
    negated: bool = False


@dataclass
class InSubquery(Node):
    expr: Node
    select: "Select"
    negated: bool = False


@dataclass
class LikeOp(Node):
    expr: Node
    pattern: Node
    negated: bool = False


@dataclass
class BetweenOp(Node):
    expr: Node
    low: Node
    high: Node
    negated: bool = False


@dataclass
class IsNull(Node):
    expr: Node
    negated: bool = False


@dataclass
class ExistsOp(Node):
    select: "Select"
    negated: bool = False


@dataclass
class CaseExpr(Node):
    whens: list[tuple[Node, Node]]
    default: Node | None


@dataclass
class ScalarSubquery(Node):
    select: "Select"


@dataclass
class TableRef(Node):
    name: str
    alias: str | None


@dataclass
class DerivedRef(Node):
    select: "Select"
    alias: str


@dataclass
class Join(Node):
    kind: str  # inner | left | right | full | cross
    item: Node  # TableRef | DerivedRef
    condition: Node | None


@dataclass
class Projection(Node):
    expr: Node
    alias: str | None


@dataclass
class OrderItem(Node):
    expr: Node
    descending: bool = False


@dataclass
class Select(Node):
    ctes: list[tuple[str, "Select"]] = field(default_factory=list)
    projections: list[Projection] = field(default_factory=list)
    from_items: list[Node] = field(default_factory=list)  # TableRef | DerivedRef
    joins: list[Join] = field(default_factory=list)
    where: Node | None = None
    group_by: list[Node] = field(default_factory=list)
    having: Node | None = None
    order_by: list[OrderItem] = field(default_factory=list)
    limit: int | None = None
    distinct: bool = False


def split_conjuncts(expr: Node) -> list[Node]:
    """Flatten a condition into its top-level AND conjuncts."""
    if isinstance(expr, BoolOp) and expr.op == "AND":
        out: list[Node] = []
        for operand in expr.operands:
            out.extend(split_conjuncts(operand))
        return out
    return [expr]


# --- Parser ----------------------------------------------------------------


class _Parser:
    def __init__(self, sql: str):
        self.sql = sql
        self.tokens = tokenize(sql)
        self.i = 0

    # token helpers

    def peek(self, offset: int = 0) -> Token:
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.tokens[self.i]
        if tok.kind != "EOF":
            self.i += 1
        return tok

    def at_keyword(self, *words: str) -> bool:
        tok = self.peek()
        return tok.kind == "KEYWORD" and tok.value in words

    def accept_keyword(self, *words: str) -> Token | None:
        if self.at_keyword(*words):
            return self.next()
        return None

    def expect_keyword(self, word: str) -> Token:
        tok = self.next()
        if tok.kind != "KEYWORD" or tok.value != word:
            raise ParseError(f"expected {word}, got {tok.value or 'end of input'}",
                             self.sql, tok.pos)
        return tok

    def expect_punct(self, value: str) -> Token:
        tok = self.next()
        if tok.kind != "PUNCT" or tok.value != value:
            raise ParseError(f"expected {value!r}, got {tok.value or 'end of input'}",
                             self.sql, tok.pos)
        return tok

    def at_punct(self, value: str) -> bool:
        tok = self.peek()
        return tok.kind == "PUNCT" and tok.value == value

    def accept_punct(self, value: str) -> Token | None:
        if self.at_punct(value):
            return self.next()
        return None

    def expect_ident(self) -> Token:
        tok = self.next()
        if tok.kind != "IDENT":
            raise ParseError(f"expected identifier, got {tok.value or 'end of input'}",
                             self.sql, tok.pos)
        return tok

    def _end_of_last(self) -> int:
        tok = self.tokens[self.i - 1]
        return tok.pos + len(tok.value)

    # grammar

    def parse_statement(self) -> Select:
        first = self.peek()
        if first.kind == "IDENT" and first.value.upper() in _REJECTED_LEADING:
            raise ParseError(
                f"only SELECT statements are supported, got {first.value.upper()}",
                self.sql, first.pos)
        select = self.parse_select()
        self.accept_punct(";")
        tok = self.peek()
        if tok.kind != "EOF":
            if tok.kind == "KEYWORD" and tok.value in ("UNION", "INTERSECT", "EXCEPT"):
                raise ParseError("set operations are not supported", self.sql, tok.pos)
            raise ParseError(f"unexpected trailing input: {tok.value!r}", self.sql, tok.pos)
        return select

    def parse_select(self) -> Select:
        start = self.peek().pos
        node = Select(start=start)
        if self.accept_keyword("WITH"):
            while True:
                name = self.expect_ident().value
                self.expect_keyword("AS")
                self.expect_punct("(")
                node.ctes.append((name, self.parse_select()))
                self.expect_punct(")")
                if not self.accept_punct(","):
                    break
        self.expect_keyword("SELECT")
        if self.accept_keyword("DISTINCT"):
            node.distinct = True
        node.projections.append(self.parse_projection())
        while self.accept_punct(","):
            node.projections.append(self.parse_projection())
        if self.accept_keyword("FROM"):
            node.from_items.append(self.parse_from_item())
            while True:
                if self.accept_punct(","):
                    node.from_items.append(self.parse_from_item())
                    continue
                join = self.parse_join_opt()
                if join is None:
                    break
                node.joins.append(join)
        if self.accept_keyword("WHERE"):
            node.where = self.parse_expr()
        if self.accept_keyword("GROUP"):
            self.expect_keyword("BY")
            node.group_by.append(self.parse_expr())
            while self.accept_punct(","):
                node.group_by.append(self.parse_expr())
        if self.accept_keyword("HAVING"):
            node.having = self.parse_expr()
        if self.accept_keyword("ORDER"):
            self.expect_keyword("BY")
            node.order_by.append(self.parse_order_item())
            while self.accept_punct(","):
                node.order_by.append(self.parse_order_item())
        if self.accept_keyword("LIMIT"):
            tok = self.next()
            if tok.kind != "NUMBER":
                raise ParseError("LIMIT expects a number", self.sql, tok.pos)
            node.limit = int(float(tok.value))
            if self.accept_keyword("OFFSET"):
                tok = self.next()
                if tok.kind != "NUMBER":
                    raise ParseError("OFFSET expects a number", self.sql, tok.pos)
        node.end = self._end_of_last()
        return node

    def parse_projection(self) -> Projection:
        start = self.peek().pos
        tok = self.peek()
        if tok.kind == "OP" and tok.value == "*":
            self.next()
            star = Star(start=tok.pos, end=tok.pos + 1)
            return Projection(expr=star, alias=None, start=start, end=tok.pos + 1)
        expr = self.parse_expr()
        alias = None
        if self.accept_keyword("AS"):
            alias = self.expect_ident().value
        elif self.peek().kind == "IDENT":
            alias = self.next().value
        return Projection(expr=expr, alias=alias, start=start, end=self._end_of_last())

    def parse_from_item(self) -> Node:
        start = self.peek().pos
        if self.accept_punct("("):
            select = self.parse_select()
            self.expect_punct(")")
            self.accept_keyword("AS")
            alias = self.expect_ident().value
            return DerivedRef(select=select, alias=alias, start=start, end=self._end_of_last())
        name = self.expect_ident().value
        alias = None
        if self.accept_keyword("AS"):
            alias = self.expect_ident().value
        elif self.peek().kind == "IDENT":
            alias = self.next().value
        return TableRef(name=name, alias=alias, start=start, end=self._end_of_last())

    def parse_join_opt(self) -> Join | None:
        start = self.peek().pos
        kind = None
        if self.at_keyword("JOIN"):
            kind = "inner"
        elif self.at_keyword("INNER", "LEFT", "RIGHT", "FULL", "CROSS"):
            kind = self.next().value.lower()
            self.accept_keyword("OUTER")
        else:
            return None
        self.expect_keyword("JOIN")
        item = self.parse_from_item()
        condition = None
        if self.accept_keyword("ON"):
            condition = self.parse_expr()
        elif kind != "cross":
            raise ParseError("JOIN requires an ON condition", self.sql, self.peek().pos)
        return Join(kind=kind, item=item, condition=condition,
                    start=start, end=self._end_of_last())

    def parse_order_item(self) -> OrderItem:
        start = self.peek().pos
        expr = self.parse_expr()
        descending = False
        if self.accept_keyword("DESC"):
            descending = True
        else:
            self.accept_keyword("ASC")
        return OrderItem(expr=expr, descending=descending,
                         start=start, end=self._end_of_last())

    # expressions, loosest binding first

    def parse_expr(self) -> Node:
        return self.parse_or()

    def parse_or(self) -> Node:
        start = self.peek().pos
        operands = [self.parse_and()]
        while self.accept_keyword("OR"):
            operands.append(self.parse_and())
        if len(operands) == 1:
            return operands[0]
        return BoolOp(op="OR", operands=operands, start=start, end=self._end_of_last())

    def parse_and(self) -> Node:
        start = self.peek().pos
        operands = [self.parse_not()]
        while self.accept_keyword("AND"):
            operands.append(self.parse_not())
        if len(operands) == 1:
            return operands[0]
        return BoolOp(op="AND", operands=operands, start=start, end=self._end_of_last())

    def parse_not(self) -> Node:
        tok = self.peek()
        if self.accept_keyword("NOT"):
            operand = self.parse_not()
            return NotOp(operand=operand, start=tok.pos, end=self._end_of_last())
        return self.parse_predicate()

    def parse_predicate(self) -> Node:
        start = self.peek().pos
        left = self.parse_additive()
        tok = self.peek()
        if tok.kind == "OP" and tok.value in _CMP_OPS:
            op = self.next().value
            right = self.parse_additive()  # handles scalar subqueries via primary
            return BinOp(op=op, left=left, right=right,
                         start=start, end=self._end_of_last())
        negated = False
        if self.at_keyword("NOT") and self.peek(1).kind == "KEYWORD" and \
                self.peek(1).value in ("LIKE", "IN", "BETWEEN"):
            self.next()
            negated = True
        if self.accept_keyword("LIKE"):
            pattern = self.parse_additive()
            return LikeOp(expr=left, pattern=pattern, negated=negated,
                          start=start, end=self._end_of_last())
        if self.accept_keyword("IN"):
            self.expect_punct("(")
            if self.at_keyword("SELECT", "WITH"):
                sub = self.parse_select()
                self.expect_punct(")")
                return InSubquery(expr=left, select=sub, negated=negated,
                                  start=start, end=self._end_of_last())
            items = [self.parse_additive()]
            while self.accept_punct(","):
                items.append(self.parse_additive())
            self.expect_punct(")")
            return InList(expr=left, items=items, negated=negated,
                          start=start, end=self._end_of_last())
        if self.accept_keyword("BETWEEN"):
            low = self.parse_additive()
            self.expect_keyword("AND")
            high = self.parse_additive()
            return BetweenOp(expr=left, low=low, high=high, negated=negated,
                             start=start, end=self._end_of_last())
        if self.accept_keyword("IS"):
            is_negated = bool(self.accept_keyword("NOT"))
            self.expect_keyword("NULL")
            return IsNull(expr=left, negated=is_negated,
                          start=start, end=self._end_of_last())
        if negated:
            raise ParseError("dangling NOT", self.sql, tok.pos)
        return left

    def parse_additive(self) -> Node:
        start = self.peek().pos
        left = self.parse_multiplicative()
        while True:
            tok = self.peek()
            if tok.kind == "OP" and tok.value in ("+", "-", "||"):
                op = self.next().value
                right = self.parse_multiplicative()
                left = BinOp(op=op, left=left, right=right,
                             start=start, end=self._end_of_last())
            else:
                return left

    def parse_multiplicative(self) -> Node:
        start = self.peek().pos
        left = self.parse_unary()
        while True:
            tok = self.peek()
            if tok.kind == "OP" and tok.value in ("*", "/", "%"):
                op = self.next().value
                right = self.parse_unary()
                left = BinOp(op=op, left=left, right=right,
                             start=start, end=self._end_of_last())
            else:
                return left

    def parse_unary(self) -> Node:
        tok = self.peek()
        if tok.kind == "OP" and tok.value in ("-", "+"):
            self.next()
            operand = self.parse_unary()
            return BinOp(op=f"unary{tok.value}", left=Literal(value="0", kind="number",
                         start=tok.pos, end=tok.pos), right=operand,
                         start=tok.pos, end=self._end_of_last())
        return self.parse_primary()

    def parse_primary(self) -> Node:
        tok = self.peek()
        if tok.kind == "NUMBER":
            self.next()
            return Literal(value=tok.value, kind="number", start=tok.pos,
                           end=tok.pos + len(tok.value))
        if tok.kind == "STRING":
            self.next()
            return Literal(value=tok.value[1:-1].replace("''", "'"), kind="string",
                           start=tok.pos, end=tok.pos + len(tok.value))
        if self.accept_keyword("NULL"):
            return Literal(value="NULL", kind="null", start=tok.pos, end=tok.pos + 4)
        if self.at_keyword("TRUE", "FALSE"):
            self.next()
            return Literal(value=tok.value, kind="bool", start=tok.pos,
                           end=tok.pos + len(tok.value))
        if self.accept_keyword("EXISTS"):
            self.expect_punct("(")
            sub = self.parse_select()
            self.expect_punct(")")
            return ExistsOp(select=sub, start=tok.pos, end=self._end_of_last())
        if self.accept_keyword("CASE"):
            whens: list[tuple[Node, Node]] = []
            default: Node | None = None
            while self.accept_keyword("WHEN"):
                cond = self.parse_expr()
                self.expect_keyword("THEN")
                whens.append((cond, self.parse_expr()))
            if self.accept_keyword("ELSE"):
                default = self.parse_expr()
            self.expect_keyword("END")
            if not whens:
                raise ParseError("CASE requires at least one WHEN", self.sql, tok.pos)
            return CaseExpr(whens=whens, default=default, start=tok.pos,
                            end=self._end_of_last())
        if self.accept_punct("("):
            if self.at_keyword("SELECT", "WITH"):
                sub = self.parse_select()
                self.expect_punct(")")
                return ScalarSubquery(select=sub, start=tok.pos, end=self._end_of_last())
            expr = self.parse_expr()
            self.expect_punct(")")
            expr.start, expr.end = tok.pos, self._end_of_last()
            return expr
        if tok.kind == "IDENT":
            self.next()
            if self.at_punct("("):
                self.next()
                distinct = bool(self.accept_keyword("DISTINCT"))
                args: list[Node] = []
                inner = self.peek()
                if inner.kind == "OP" and inner.value == "*":
                    self.next()
                    args.append(Star(start=inner.pos, end=inner.pos + 1))
                elif not self.at_punct(")"):
                    args.append(self.parse_expr())
                    while self.accept_punct(","):
                        args.append(self.parse_expr())
                self.expect_punct(")")
                return FuncCall(name=tok.value.lower(), args=args, distinct=distinct,
                                start=tok.pos, end=self._end_of_last())
            qualifier = None
            name = tok.value
            if self.at_punct("."):
                self.next()
                nxt = self.peek()
                if nxt.kind == "OP" and nxt.value == "*":
                    self.next()
                    return Star(qualifier=name, start=tok.pos, end=self._end_of_last())
                qualifier = name
                name = self.expect_ident().value
            return ColumnRef(qualifier=qualifier, name=name, start=tok.pos,
                             end=self._end_of_last())
        raise ParseError(f"unexpected token {tok.value or 'end of input'!r}",
                         self.sql, tok.pos)


def parse_select_statement(sql: str) -> Select:
    """Parse one SELECT statement; raise ParseError otherwise."""
    if not sql or not sql.strip():
        raise ParseError("empty statement", sql, 0)
    return _Parser(sql).parse_statement()


def parse_expression(text: str) -> Node:
    """Parse a bare condition/expression, e.g. a WHERE predicate."""
    if not text or not text.strip():
        raise ParseError("empty expression", text, 0)
    parser = _Parser(text)
    expr = parser.parse_expr()
    tok = parser.peek()
    if tok.kind != "EOF":
        raise ParseError(f"unexpected trailing input: {tok.value!r}", text, tok.pos)
    return expr


def split_statements(text: str) -> list[str]:
    """Split a script on top-level semicolons, respecting quotes and comments."""
    parts: list[str] = []
    buf: list[str] = []
    i, n = 0, len(text)
    in_single = False
    while i < n:
        ch = text[i]
        if in_single:
            buf.append(ch)
            if ch == "'":
                if i + 1 < n and text[i + 1] == "'":
                    buf.append("'")
                    i += 2
                    continue
                in_single = False
            i += 1
            continue
        if text.startswith("--", i):
            j = text.find("\n", i)
            i = n if j < 0 else j + 1
            continue
        if text.startswith("/*", i):
            j = text.find("*/", i)
            i = n if j < 0 else j + 2
            continue
        if ch == "'":
            in_single = True
            buf.append(ch)
            i += 1
            continue
        if ch == ";":
            parts.append("".join(buf))
            buf = []
            i += 1
            continue
        buf.append(ch)
        i += 1
    parts.append("".join(buf))
    return [p.strip() for p in parts if p.strip()]
