"""
Alpha Miner
Two-step prompting session against a chat-completion endpoint: request
definitions of the existing signals, then ask for one new formulaic signal
given those definitions and a sample of panel rows. Responses are parsed into
AlphaDefs. Every call goes through a Transport so sessions replay offline.
"""

import hashlib
import json
import logging
import re
import threading
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import requests

from .dsl import (
    CANONICAL_SIGNALS,
    DEFAULT_ALIASES,
    SIGNAL_DISPLAY_NAMES,
    AlphaDef,
    AlphaExpr,
    Provenance,
    parse_alpha,
    referenced_signals,
    render_alpha,
)
from .errors import AuthError, DslError, NoFixtureError, OutputError, PromptError, TransportError
from .panel import Panel, sample_rows

logger = logging.getLogger(__name__)

COT_TRIGGER = "Let's think step by step."

INSTRUCTIONS = (
    "You are a quantitative researcher building stock return-predictive signals. "
    "You are given the definitions of a set of existing financial signals and sample "
    "data for several companies: signal values at each date and the forward return "
    "realised after that date. Combine the existing signals into a new signal, which "
    "may be nonlinear, that you expect to predict future stock returns better than "
    "any single existing signal."
)

DEFAULT_QUERY = (
    "Create one new signal. Give it a descriptive name followed by its abbreviation "
    "in parentheses, explain your reasoning, and state its formula on its own line "
    "as `ABBR = expression`, using only the signal abbreviations {signals}, numbers, "
    "+ - * /, parentheses and log()."
)


# --- Prompts ---------------------------------------------------------------

def build_definitions_prompt(signals: Sequence[str]) -> str:
    """Step 1: ask for definition, return effect and preferred tendency per signal"""
    if not signals:
        raise PromptError("Definitions prompt needs at least one signal")
    lines = [
        "For each of the following financial signals, provide:",
        "- Definition: what the signal measures and how it is calculated.",
        "- Effect on predicting stock returns: how the signal relates to future returns.",
        "- Preferred tendency: whether higher or lower values are preferred.",
        "",
    ]
    for number, signal in enumerate(signals, 1):
        display = SIGNAL_DISPLAY_NAMES.get(signal, signal)
        lines.append(f"{number}. {display} [abbreviation: {signal}]")
    return "\n".join(lines)


def build_generation_prompt(definitions: str, sample: str, query: str) -> str:
    """Step 2: instructions, definitions, sample data and query, ending with the CoT trigger"""
    parts = {"definitions": definitions, "sample": sample, "query": query}
    cleaned = {}
    for name, text in parts.items():
        if text is None or not text.strip():
            raise PromptError(f"Generation prompt part '{name}' is empty")
        cleaned[name] = text.replace(COT_TRIGGER, "").strip()
        if not cleaned[name]:
            raise PromptError(f"Generation prompt part '{name}' is empty")
    sections = [
        "Instructions:",
        INSTRUCTIONS,
        "",
        "Definitions of the existing signals:",
        cleaned["definitions"],
        "",
        "Sample data:",
        cleaned["sample"],
        "",
        "Question:",
        cleaned["query"],
        "",
        COT_TRIGGER,
    ]
    return "\n".join(sections)


def default_query(signals: Sequence[str] = CANONICAL_SIGNALS) -> str:
    return DEFAULT_QUERY.format(signals=", ".join(signals))


@dataclass
class PromptBundle:
    step1_prompt: str
    step2_prompt: str
    metadata: Dict[str, Any] = field(default_factory=dict)


# --- Transports ------------------------------------------------------------

@dataclass(frozen=True)
class CompletionParams:
    model: str = "gpt-4"
    temperature: float = 0.7
    max_tokens: int = 2048

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def request_hash(prompt: str) -> str:
    """SHA-256 of the prompt text; names replay fixtures"""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def record_fixture(directory: Union[str, Path], prompt: str, params: CompletionParams, response: str,
                   request: Optional[Dict[str, Any]] = None,
                   raw_response: Optional[Dict[str, Any]] = None) -> Path:
    """Write `<prompt-hash>.json`; the file is a valid replay fixture"""
    directory = Path(directory)
    prompt_hash = request_hash(prompt)
    record: Dict[str, Any] = {
        "prompt_hash": prompt_hash,
        "prompt": prompt,
        "params": params.to_dict(),
        "response": response,
    }
    if request is not None:
        record["request"] = request
    if raw_response is not None:
        record["raw_response"] = raw_response
    path = directory / f"{prompt_hash}.json"
    try:
        directory.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(record, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
                        encoding="utf-8")
    except OSError as e:
        raise OutputError(f"Cannot write session log {path}: {e}") from e
    return path


class Transport(ABC):
    """Sends one prompt and returns the completion text"""

    @abstractmethod
    def send(self, prompt: str, params: CompletionParams) -> str:
        ...


class ReplayTransport(Transport):
    """Serves stored responses from a directory of `<prompt-hash>.json` files"""

    def __init__(self, directory: Union[str, Path]):
        self.directory = Path(directory)

    def send(self, prompt: str, params: CompletionParams) -> str:
        prompt_hash = request_hash(prompt)
        path = self.directory / f"{prompt_hash}.json"
        if not path.exists():
            raise NoFixtureError(prompt_hash, self.directory)
        try:
            record = json.loads(path.read_text(encoding="utf-8"))
            return record["response"]
        except (ValueError, KeyError) as e:
            raise TransportError(f"Malformed replay fixture {path}: {e}") from e


class ChatCompletionTransport(Transport):
    """
    Live chat-completion endpoint (`POST {endpoint}/chat/completions`).
    One request in flight at a time; successful calls are logged to `log_dir`.
    """

    def __init__(self, endpoint: str, api_key: Optional[str], log_dir: Optional[Union[str, Path]] = None,
                 timeout: float = 60.0):
        if not api_key:
            raise AuthError("No API credential available for the live transport")
        self.endpoint = endpoint.rstrip("/")
        self._api_key = api_key
        self.log_dir = Path(log_dir) if log_dir else None
        self.timeout = timeout
        self._lock = threading.Lock()

    @property
    def url(self) -> str:
        return f"{self.endpoint}/chat/completions"

    def send(self, prompt: str, params: CompletionParams) -> str:
        body = {
            "model": params.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        headers = {
            "Authorization": f"Bearer {self._api_key}",
            "Content-Type": "application/json",
        }
        with self._lock:
            try:
                response = requests.post(self.url, headers=headers, json=body, timeout=self.timeout)
            except requests.RequestException as e:
                raise TransportError(f"Request to {self.url} failed: {e}") from e

            status = response.status_code
            if status in (401, 403):
                raise AuthError(f"Endpoint rejected the credential (HTTP {status})", status)
            if not 200 <= status < 300:
                raise TransportError(f"Endpoint returned HTTP {status}: {response.text[:200]}", status)
            try:
                payload = response.json()
                text = payload["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as e:
                raise TransportError(f"Unexpected response body from {self.url}: {e}", status) from e

            if self.log_dir is not None:
                record_fixture(self.log_dir, prompt, params, text, request=body, raw_response=payload)
        return text


def complete(transport: Transport, prompt: str, params: Optional[CompletionParams] = None) -> str:
    """One completion through the given transport"""
    params = params or CompletionParams()
    logger.debug(f"Completion request {request_hash(prompt)[:12]} via {type(transport).__name__}")
    return transport.send(prompt, params)


# --- Response parsing ------------------------------------------------------

class ParseStatus(str, Enum):
    PARSED = "parsed"
    UNPARSABLE = "unparsable"


@dataclass
class MinedCandidate:
    name: str
    abbreviation: str
    formula_text: str
    expr: Optional[AlphaExpr]
    reasoning_text: str
    parse_status: ParseStatus
    warnings: List[str] = field(default_factory=list)

    @property
    def parsed(self) -> bool:
        return self.parse_status is ParseStatus.PARSED

    def to_alpha_def(self) -> AlphaDef:
        if not self.parsed:
            raise DslError(f"Candidate '{self.abbreviation or self.name}' did not parse: {self.formula_text!r}")
        return AlphaDef(self.name, self.abbreviation, self.expr, Provenance.MINED)

    def to_record(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "abbreviation": self.abbreviation,
            "formula_text": self.formula_text,
            "formula": render_alpha(self.expr) if self.expr is not None else None,
            "parse_status": self.parse_status.value,
            "warnings": list(self.warnings),
        }


_FORMULA_LINE = re.compile(r"^([A-Z][A-Z0-9]{1,11})\s*=\s*(.+?)\s*[.;]?$")
_HEADING = re.compile(r"^\s*#{1,6}\s*(.+?)\s*$", re.MULTILINE)
_BOLD = re.compile(r"\*\*(.+?)\*\*")
_FRAC = re.compile(r"\\frac\{([^{}]*)\}\{([^{}]*)\}")
_LATEX_OPS = {r"\cdot": "*", r"\times": "*", r"\div": "/", r"\log": "log", r"\ln": "ln",
              r"\left(": "(", r"\right)": ")", r"\left": "", r"\right": ""}


def _clean_line(line: str) -> str:
    line = line.replace("**", "").replace("`", "").replace("$", "")
    return re.sub(r"^\s*(?:[-*+>]\s+|\d+[.)]\s+)*", "", line).strip()


def _alias_pattern(table: Mapping[str, str]) -> "re.Pattern[str]":
    """Whole-name match of any display name, longest first"""
    names = sorted(table, key=len, reverse=True)
    alternatives = "|".join(re.escape(name) for name in names)
    return re.compile(rf"(?<![A-Za-z0-9_])(?:{alternatives})(?![A-Za-z0-9_])")


def normalize_formula(text: str, aliases: Optional[Mapping[str, str]] = None) -> str:
    """Rewrite display notation (P/E, LaTeX operators) into DSL syntax"""
    table = dict(DEFAULT_ALIASES)
    if aliases:
        table.update(aliases)
    result = text
    while _FRAC.search(result):
        result = _FRAC.sub(r"((\1) / (\2))", result)
    for latex, replacement in _LATEX_OPS.items():
        result = result.replace(latex, replacement)
    result = result.replace("{", "(").replace("}", ")")
    result = _alias_pattern(table).sub(lambda match: table[match.group(0)], result)
    return result.strip()


def _candidate_name(text: str, abbreviation: str) -> str:
    if abbreviation:
        named = re.search(
            r"([A-Z][\w\-]*(?:[ \t]+[A-Z][\w\-]*)*)[ \t]*\(\s*" + re.escape(abbreviation) + r"\s*\)",
            text.replace("**", ""),
        )
        if named:
            return named.group(1).strip()
    for pattern in (_HEADING, _BOLD):
        match = pattern.search(text)
        if match:
            return match.group(1).strip().strip("*#: ")
    return abbreviation


def parse_llm_response(text: str, aliases: Optional[Mapping[str, str]] = None) -> MinedCandidate:
    """
    Extract one candidate from a model response. The first `ABBR = expression`
    line that parses and references at least one signal wins; anything else
    yields an Unparsable candidate, never an exception.
    """
    warnings: List[str] = []
    matched: List[Tuple[str, str]] = []
    for raw_line in (text or "").splitlines():
        match = _FORMULA_LINE.match(_clean_line(raw_line))
        if match and match.group(1) not in CANONICAL_SIGNALS:
            matched.append((match.group(1), match.group(2)))

    parsed: List[Tuple[str, str, AlphaExpr]] = []
    for abbreviation, formula in matched:
        try:
            expr = parse_alpha(normalize_formula(formula, aliases), aliases)
        except DslError:
            continue
        if referenced_signals(expr):
            parsed.append((abbreviation, formula, expr))

    if parsed:
        abbreviation, formula, expr = parsed[0]
        if len(parsed) > 1:
            warnings.append(
                f"{len(parsed)} formula lines found; using the first ({abbreviation} = {formula})"
            )
        return MinedCandidate(_candidate_name(text, abbreviation), abbreviation, formula, expr,
                              text, ParseStatus.PARSED, warnings)

    if matched:
        abbreviation, formula = matched[0]
        warnings.append(f"Formula line '{abbreviation} = {formula}' could not be parsed")
    else:
        abbreviation, formula = "", ""
        warnings.append("No formula line found in the response")
    for warning in warnings:
        logger.warning(f"⚠️ {warning}")
    return MinedCandidate(_candidate_name(text or "", abbreviation), abbreviation, formula, None,
                          text or "", ParseStatus.UNPARSABLE, warnings)


# --- Session ---------------------------------------------------------------

class AlphaMiner:
    """Runs the two-step prompting protocol through a transport"""

    def __init__(self, transport: Transport, params: Optional[CompletionParams] = None,
                 aliases: Optional[Mapping[str, str]] = None, query: Optional[str] = None):
        self.transport = transport
        self.params = params or CompletionParams()
        self.aliases = dict(aliases or {})
        self.query = query

    def prompts(self, panel: Panel, seed: int, sample_size: int = 10,
                definitions: Optional[str] = None,
                signals: Optional[Sequence[str]] = None) -> PromptBundle:
        signals = list(signals or panel.signal_names)
        step1 = build_definitions_prompt(signals)
        if definitions is None:
            definitions = complete(self.transport, step1, self.params)
        sample = sample_rows(panel, sample_size, seed)
        step2 = build_generation_prompt(definitions, sample, self.query or default_query(signals))
        metadata = {
            "seed": seed,
            "sample_row_count": sample_size,
            "signals": signals,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        return PromptBundle(step1, step2, metadata)

    def mine(self, panel: Panel, seed: int, sample_size: int = 10,
             signals: Optional[Sequence[str]] = None) -> Tuple[PromptBundle, MinedCandidate]:
        logger.info(f"🤖 Mining one candidate (seed {seed}, {sample_size} sample rows)")
        bundle = self.prompts(panel, seed, sample_size, signals=signals)
        response = complete(self.transport, bundle.step2_prompt, self.params)
        candidate = parse_llm_response(response, self.aliases)
        if candidate.parsed:
            logger.info(f"✅ Mined {candidate.name} ({candidate.abbreviation}) = {render_alpha(candidate.expr)}")
        return bundle, candidate
