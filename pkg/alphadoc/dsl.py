"""
Formulaic Alpha DSL
Parses alpha formulas into an immutable AST, renders them back to text and
evaluates them column-wise over cross-sections of signal values.

Grammar (EBNF):

    expr    = term , { ( "+" | "-" ) , term } ;
    term    = unary , { ( "*" | "/" ) , unary } ;
    unary   = "-" , unary | ( "log" | "ln" ) , "(" , expr , ")" | primary ;
    primary = number | identifier | "[" , display name , "]" | "(" , expr , ")" ;

Identifiers are canonical signal ids (case-insensitive). Display names such as
``[P/E]`` go through the alias table. ``·`` and ``×`` are read as ``*``,
``÷`` as ``/`` and ``−`` as ``-``. ``log`` is the natural logarithm.
"""

import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import ClassVar, Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .errors import AlphaSyntaxError, DuplicateAlphaError, OutputError, UnknownSignalError

# The ten existing signals, in canonical order
CANONICAL_SIGNALS: Tuple[str, ...] = (
    "PE", "PB", "ROA", "ROE", "FCF", "PCF", "EBITDA", "GM", "NM", "SPS",
)

SIGNAL_DISPLAY_NAMES: Dict[str, str] = {
    "PE": "Price/Earnings (P/E)",
    "PB": "Price/Book Value (P/B)",
    "ROA": "Return on Assets (ROA)",
    "ROE": "Return on Equity (ROE)",
    "FCF": "Free Cash Flow per Share (FCF)",
    "PCF": "Price/Cash Flow (P/CF)",
    "EBITDA": "Enterprise Value/EBITDA (EBITDA)",
    "GM": "Gross Margin (GM)",
    "NM": "Net Margin (NM)",
    "SPS": "Sales per Share (SPS)",
}

DEFAULT_ALIASES: Dict[str, str] = {
    "P/E": "PE",
    "P/B": "PB",
    "P/CF": "PCF",
    "EV/EBITDA": "EBITDA",
    "Price/Earnings": "PE",
    "Price/Book": "PB",
    "Price/Book Value": "PB",
    "Return on Assets": "ROA",
    "Return on Equity": "ROE",
    "Free Cash Flow per Share": "FCF",
    "Price/Cash Flow": "PCF",
    "Enterprise Value/EBITDA": "EBITDA",
    "Gross Margin": "GM",
    "Net Margin": "NM",
    "Sales per Share": "SPS",
}


# --- AST -------------------------------------------------------------------

@dataclass(frozen=True)
class Const:
    """Finite, non-negative literal. Negative numbers are Neg(Const)."""
    value: float
    precedence: ClassVar[int] = 4

    def __post_init__(self):
        value = float(self.value)
        if not math.isfinite(value) or value < 0:
            raise ValueError(f"Const must be finite and non-negative, got {self.value!r}")
        object.__setattr__(self, "value", value)


@dataclass(frozen=True)
class Signal:
    name: str
    precedence: ClassVar[int] = 4


@dataclass(frozen=True)
class Neg:
    operand: "AlphaExpr"
    precedence: ClassVar[int] = 3


@dataclass(frozen=True)
class Log:
    operand: "AlphaExpr"
    precedence: ClassVar[int] = 4


@dataclass(frozen=True)
class BinaryOp:
    left: "AlphaExpr"
    right: "AlphaExpr"
    symbol: ClassVar[str] = "?"
    precedence: ClassVar[int] = 0


@dataclass(frozen=True)
class Add(BinaryOp):
    symbol: ClassVar[str] = "+"
    precedence: ClassVar[int] = 1


@dataclass(frozen=True)
class Sub(BinaryOp):
    symbol: ClassVar[str] = "-"
    precedence: ClassVar[int] = 1


@dataclass(frozen=True)
class Mul(BinaryOp):
    symbol: ClassVar[str] = "*"
    precedence: ClassVar[int] = 2


@dataclass(frozen=True)
class Div(BinaryOp):
    symbol: ClassVar[str] = "/"
    precedence: ClassVar[int] = 2


AlphaExpr = Union[Const, Signal, Neg, Log, Add, Sub, Mul, Div]

_BINARY_NODES = {"+": Add, "-": Sub, "*": Mul, "/": Div}


def referenced_signals(expr: AlphaExpr) -> FrozenSet[str]:
    """Signal identifiers an expression reads"""
    if isinstance(expr, Signal):
        return frozenset([expr.name])
    if isinstance(expr, (Neg, Log)):
        return referenced_signals(expr.operand)
    if isinstance(expr, BinaryOp):
        return referenced_signals(expr.left) | referenced_signals(expr.right)
    return frozenset()


# --- Tokenizer / parser ----------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<bracket>\[[^\]]*\])
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/()·×÷−])
    """,
    re.VERBOSE,
)

# U+2212 is the typographic minus
_OPERATOR_SYNONYMS = {"·": "*", "×": "*", "÷": "/", "−": "-"}


@dataclass(frozen=True)
class Token:
    kind: str   # 'number', 'ident', 'bracket', 'op', 'end'
    text: str
    position: int


def tokenize(text: str) -> List[Token]:
    tokens: List[Token] = []
    position = 0
    while position < len(text):
        match = _TOKEN_RE.match(text, position)
        if match is None:
            raise AlphaSyntaxError(f"Unexpected character {text[position]!r}", position)
        kind = match.lastgroup
        if kind != "ws":
            value = match.group()
            if kind == "op":
                value = _OPERATOR_SYNONYMS.get(value, value)
            tokens.append(Token(kind, value, position))
        position = match.end()
    tokens.append(Token("end", "", len(text)))
    return tokens


class AlphaParser:
    """
    Recursive descent parser for alpha formulas.
    Precedence: unary minus and log bind tightest, then * /, then + -;
    binary operators are left-associative.
    """

    LOG_NAMES = ("log", "ln")

    def __init__(self, aliases: Optional[Mapping[str, str]] = None,
                 signals: Iterable[str] = CANONICAL_SIGNALS):
        self.signals = tuple(signals)
        self._by_upper = {name.upper(): name for name in self.signals}
        self.aliases = dict(DEFAULT_ALIASES)
        if aliases:
            self.aliases.update(aliases)
        self._tokens: List[Token] = []
        self._index = 0

    def parse(self, text: str) -> AlphaExpr:
        self._tokens = tokenize(text)
        self._index = 0
        if self._peek().kind == "end":
            raise AlphaSyntaxError("Empty formula", 0)
        expr = self._expr()
        token = self._peek()
        if token.kind != "end":
            raise AlphaSyntaxError(f"Unexpected token {token.text!r}", token.position)
        return expr

    # grammar rules

    def _expr(self) -> AlphaExpr:
        node = self._term()
        while self._peek().text in ("+", "-") and self._peek().kind == "op":
            symbol = self._advance().text
            node = _BINARY_NODES[symbol](node, self._term())
        return node

    def _term(self) -> AlphaExpr:
        node = self._unary()
        while self._peek().text in ("*", "/") and self._peek().kind == "op":
            symbol = self._advance().text
            node = _BINARY_NODES[symbol](node, self._unary())
        return node

    def _unary(self) -> AlphaExpr:
        token = self._peek()
        if token.kind == "op" and token.text == "-":
            self._advance()
            return Neg(self._unary())
        if token.kind == "ident" and token.text.lower() in self.LOG_NAMES \
                and self._peek(1).text == "(":
            self._advance()
            self._advance()
            inner = self._expr()
            self._expect(")")
            return Log(inner)
        return self._primary()

    def _primary(self) -> AlphaExpr:
        token = self._advance()
        if token.kind == "number":
            return Const(float(token.text))
        if token.kind == "ident":
            return Signal(self._resolve(token.text, token.position))
        if token.kind == "bracket":
            return Signal(self._resolve_display(token.text[1:-1].strip(), token.position))
        if token.kind == "op" and token.text == "(":
            inner = self._expr()
            self._expect(")")
            return inner
        if token.kind == "end":
            raise AlphaSyntaxError("Unexpected end of input", token.position)
        raise AlphaSyntaxError(f"Unexpected token {token.text!r}", token.position)

    # helpers

    def _resolve(self, name: str, position: int) -> str:
        canonical = self._by_upper.get(name.upper())
        if canonical is None:
            raise UnknownSignalError(name, position)
        return canonical

    def _resolve_display(self, name: str, position: int) -> str:
        if name in self.aliases:
            return self._resolve(self.aliases[name], position)
        return self._resolve(name, position)

    def _peek(self, offset: int = 0) -> Token:
        index = min(self._index + offset, len(self._tokens) - 1)
        return self._tokens[index]

    def _advance(self) -> Token:
        token = self._peek()
        if token.kind != "end":
            self._index += 1
        return token

    def _expect(self, text: str) -> None:
        token = self._peek()
        if token.text != text or token.kind != "op":
            where = "end of input" if token.kind == "end" else repr(token.text)
            raise AlphaSyntaxError(f"Expected {text!r} but found {where}", token.position)
        self._advance()


def parse_alpha(text: str, aliases: Optional[Mapping[str, str]] = None,
                signals: Iterable[str] = CANONICAL_SIGNALS) -> AlphaExpr:
    """Parse a formula string into an AlphaExpr"""
    return AlphaParser(aliases, signals).parse(text)


# --- Rendering -------------------------------------------------------------

def _format_number(value: float) -> str:
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def render_alpha(expr: AlphaExpr) -> str:
    """Render with the minimal parentheses that keep parse(render(e)) == e"""
    if isinstance(expr, Const):
        return _format_number(expr.value)
    if isinstance(expr, Signal):
        return expr.name
    if isinstance(expr, Log):
        return f"log({render_alpha(expr.operand)})"
    if isinstance(expr, Neg):
        inner = render_alpha(expr.operand)
        if expr.operand.precedence < Neg.precedence:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(expr, BinaryOp):
        left = render_alpha(expr.left)
        right = render_alpha(expr.right)
        if expr.left.precedence < expr.precedence:
            left = f"({left})"
        # left-associative: an equal-precedence right operand needs parentheses
        if expr.right.precedence <= expr.precedence:
            right = f"({right})"
        return f"{left} {expr.symbol} {right}"
    raise TypeError(f"Unknown AST node: {expr!r}")


# --- Evaluation ------------------------------------------------------------

def evaluate_columns(expr: AlphaExpr, columns: Mapping[str, np.ndarray], size: int) -> np.ndarray:
    """
    Evaluate element-wise over aligned column arrays.
    Division by zero, log of a non-positive value and every non-finite
    intermediate become NaN (absent) for that row.
    """
    if isinstance(expr, Const):
        return np.full(size, expr.value, dtype=float)
    if isinstance(expr, Signal):
        if expr.name not in columns:
            raise UnknownSignalError(expr.name)
        return np.asarray(columns[expr.name], dtype=float)
    with np.errstate(all="ignore"):
        if isinstance(expr, Neg):
            result = -evaluate_columns(expr.operand, columns, size)
        elif isinstance(expr, Log):
            operand = evaluate_columns(expr.operand, columns, size)
            result = np.where(operand > 0, np.log(np.where(operand > 0, operand, 1.0)), np.nan)
        elif isinstance(expr, BinaryOp):
            left = evaluate_columns(expr.left, columns, size)
            right = evaluate_columns(expr.right, columns, size)
            if isinstance(expr, Add):
                result = left + right
            elif isinstance(expr, Sub):
                result = left - right
            elif isinstance(expr, Mul):
                result = left * right
            else:
                result = np.where(right != 0, left / np.where(right != 0, right, 1.0), np.nan)
        else:
            raise TypeError(f"Unknown AST node: {expr!r}")
    return np.where(np.isfinite(result), result, np.nan)


def evaluate_frame(expr: AlphaExpr, frame: pd.DataFrame) -> pd.Series:
    """Evaluate over a DataFrame whose columns are signal ids"""
    columns = {name: frame[name].to_numpy(dtype=float) for name in referenced_signals(expr)
               if name in frame.columns}
    values = evaluate_columns(expr, columns, len(frame))
    return pd.Series(values, index=frame.index)


def eval_alpha(expr: AlphaExpr, cs) -> pd.Series:
    """
    Evaluate an expression on a CrossSection.
    Returns one value per company (index = company); NaN marks an absent entry.
    """
    labels = list(cs.labels)
    columns = {}
    for name in referenced_signals(expr):
        if name not in labels:
            raise UnknownSignalError(name)
        columns[name] = cs.signal_matrix[:, labels.index(name)]
    values = evaluate_columns(expr, columns, len(cs.companies))
    return pd.Series(values, index=pd.Index(cs.companies, name="ticker"), name=render_alpha(expr))


# --- Definitions and registry ----------------------------------------------

class Provenance(str, Enum):
    BUILTIN = "builtin"
    USER_SUPPLIED = "user"
    MINED = "mined"


@dataclass(frozen=True)
class AlphaDef:
    name: str
    abbreviation: str
    expr: AlphaExpr
    provenance: Provenance = Provenance.USER_SUPPLIED

    @property
    def formula(self) -> str:
        return render_alpha(self.expr)

    def to_record(self) -> Dict[str, str]:
        return {
            "name": self.name,
            "abbreviation": self.abbreviation,
            "formula": self.formula,
            "provenance": self.provenance.value,
        }

    @classmethod
    def from_record(cls, record: Mapping[str, str],
                    aliases: Optional[Mapping[str, str]] = None) -> "AlphaDef":
        return cls(
            name=record.get("name", record["abbreviation"]),
            abbreviation=record["abbreviation"],
            expr=parse_alpha(record["formula"], aliases),
            provenance=Provenance(record.get("provenance", Provenance.USER_SUPPLIED.value)),
        )


# name, abbreviation, formula; beta in RAPS is the fixed convenience constant 2
_BUILTIN_FORMULAS = (
    ("Profitable Valuation Score", "PVS", "ROE / PE"),
    ("Risk-Adjusted Performance Score", "RAPS", "ROE / (PE * 2)"),
    ("Efficiency Value Composite", "EVC", "(1 / ROA) * (1 / EBITDA) * (1 / PCF)"),
    ("Valuation Efficiency Composite Score", "VEC", "(PE + ROE + FCF) / 3"),
    ("Profitability Leverage Factor", "PLF", "ROE * GM / PE"),
    ("Investment Quality Score", "IQS", "ROE * (1 / PE) * (1 / PB) * log(SPS)"),
)


def builtin_alphas() -> List[AlphaDef]:
    """The six built-in candidate signals"""
    return [
        AlphaDef(name, abbreviation, parse_alpha(formula), Provenance.BUILTIN)
        for name, abbreviation, formula in _BUILTIN_FORMULAS
    ]


@dataclass
class AlphaRegistry:
    """Ordered set of AlphaDefs, unique by abbreviation"""
    alphas: List[AlphaDef] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for alpha in self.alphas:
            if alpha.abbreviation in seen:
                raise DuplicateAlphaError(f"Duplicate abbreviation: {alpha.abbreviation}")
            seen.add(alpha.abbreviation)

    def __iter__(self) -> Iterator[AlphaDef]:
        return iter(self.alphas)

    def __len__(self) -> int:
        return len(self.alphas)

    def __contains__(self, abbreviation: str) -> bool:
        return any(a.abbreviation == abbreviation for a in self.alphas)

    def get(self, abbreviation: str) -> Optional[AlphaDef]:
        for alpha in self.alphas:
            if alpha.abbreviation == abbreviation:
                return alpha
        return None

    def add(self, alpha: AlphaDef) -> None:
        if alpha.abbreviation in self:
            raise DuplicateAlphaError(f"Duplicate abbreviation: {alpha.abbreviation}")
        self.alphas.append(alpha)

    @classmethod
    def load(cls, path, aliases: Optional[Mapping[str, str]] = None) -> "AlphaRegistry":
        path = Path(path)
        if not path.exists():
            return cls()
        records = json.loads(path.read_text(encoding="utf-8"))
        return cls([AlphaDef.from_record(r, aliases) for r in records])

    def save(self, path) -> None:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(
                json.dumps([a.to_record() for a in self.alphas], indent=2) + "\n",
                encoding="utf-8",
            )
        except OSError as e:
            raise OutputError(f"Cannot write registry {path}: {e}") from e
