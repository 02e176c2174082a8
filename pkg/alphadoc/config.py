"""
Run Configuration
Flat `key = value` config files (dotenv syntax) with typed fields, CLI
overrides, signal file patterns and the display-name alias table.
Credentials are never read from the config file, only from the environment.
"""

import logging
import os
import re
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple, Union

import pathspec
import psutil
from dotenv import dotenv_values, load_dotenv

from .dsl import (
    CANONICAL_SIGNALS,
    DEFAULT_ALIASES,
    AlphaDef,
    AlphaRegistry,
    Provenance,
    builtin_alphas,
    parse_alpha,
)
from .errors import AuthError, ConfigError, DuplicateAlphaError
from .panel import Horizon

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

TRANSPORTS = ("replay", "live")
FORMULA_PREFIX = "formula."
CREDENTIAL_KEY = re.compile(r"(api[_-]?key|token|secret|password)$", re.IGNORECASE)


def default_workers() -> int:
    return psutil.cpu_count(logical=False) or 1


@dataclass(frozen=True)
class RunConfig:
    signal_files: Tuple[str, ...] = ()
    price_file: Optional[str] = None
    alias_file: Optional[str] = None
    sector_file: Optional[str] = None
    sectors: Tuple[str, ...] = ()
    horizon: Horizon = Horizon.THREE_MONTH
    baseline: Tuple[str, ...] = CANONICAL_SIGNALS
    candidates: Tuple[str, ...] = ("PVS", "RAPS", "EVC", "VEC", "PLF", "IQS")
    formulas: Mapping[str, str] = field(default_factory=dict)
    include_mined: bool = False
    registry_file: Optional[str] = None
    start_date: Optional[date] = None
    end_date: Optional[date] = None
    seed: Optional[int] = None
    sample_size: int = 10
    output_dir: str = "alphadoc-out"
    workers: int = field(default_factory=default_workers)
    transport: str = "replay"
    replay_dir: Optional[str] = None
    endpoint: str = "https://api.openai.com/v1"
    api_key_env: str = "OPENAI_API_KEY"
    model: str = "gpt-4"
    temperature: float = 0.7
    max_tokens: int = 2048
    timeout: float = 60.0
    dedup: bool = False
    data_driven_scale: bool = False
    query: Optional[str] = None
    base_dir: Path = field(default_factory=Path.cwd)

    def __post_init__(self):
        if self.start_date and self.end_date and self.start_date > self.end_date:
            raise ConfigError(f"start_date {self.start_date} is after end_date {self.end_date}")
        if self.transport not in TRANSPORTS:
            raise ConfigError(f"transport must be one of {', '.join(TRANSPORTS)}, got '{self.transport}'")
        unknown = [s for s in self.baseline if s not in CANONICAL_SIGNALS]
        if unknown:
            raise ConfigError(f"Unknown baseline signal(s): {', '.join(unknown)}")
        if not self.baseline:
            raise ConfigError("baseline must name at least one signal")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.sample_size < 0:
            raise ConfigError("sample_size must be non-negative")

    def path(self, value: Optional[PathLike]) -> Optional[Path]:
        """Resolve a configured path relative to the config file's directory"""
        if value is None:
            return None
        candidate = Path(value).expanduser()
        return candidate if candidate.is_absolute() else self.base_dir / candidate

    @property
    def output_path(self) -> Path:
        return self.path(self.output_dir)

    @property
    def registry_path(self) -> Path:
        if self.registry_file:
            return self.path(self.registry_file)
        return self.output_path / "candidates.json"

    @property
    def session_dir(self) -> Path:
        return self.output_path / "sessions"


# --- Parsing ---------------------------------------------------------------

def _as_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _as_list(value: Any) -> Tuple[str, ...]:
    if isinstance(value, (list, tuple)):
        items = value
    else:
        items = str(value).split(",")
    return tuple(item.strip() for item in items if str(item).strip())


def _as_date(value: Any) -> Optional[date]:
    if isinstance(value, date) or value is None:
        return value
    text = str(value).strip()
    return date.fromisoformat(text) if text else None


def _optional(convert: Callable[[Any], Any]) -> Callable[[Any], Any]:
    def inner(value):
        if value is None or (isinstance(value, str) and not value.strip()):
            return None
        return convert(value)
    return inner


_CONVERTERS: Dict[str, Callable[[Any], Any]] = {
    "signal_files": _as_list,
    "price_file": _optional(str),
    "alias_file": _optional(str),
    "sector_file": _optional(str),
    "sectors": _as_list,
    "horizon": Horizon.parse,
    "baseline": _as_list,
    "candidates": _as_list,
    "include_mined": _as_bool,
    "registry_file": _optional(str),
    "start_date": _as_date,
    "end_date": _as_date,
    "seed": _optional(int),
    "sample_size": int,
    "output_dir": str,
    "workers": int,
    "transport": lambda v: str(v).strip().lower(),
    "replay_dir": _optional(str),
    "endpoint": str,
    "api_key_env": str,
    "model": str,
    "temperature": float,
    "max_tokens": int,
    "timeout": float,
    "dedup": _as_bool,
    "data_driven_scale": _as_bool,
    "query": _optional(str),
}


def load_config(path: Optional[PathLike] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Read a flat config file and apply CLI overrides (None values are ignored).
    Unknown keys and credential-like keys are rejected.
    """
    raw: Dict[str, Any] = {}
    base_dir = Path.cwd()
    if path is not None:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"Config file not found: {config_path}")
        file_values = dotenv_values(config_path)
        for key, value in file_values.items():
            if CREDENTIAL_KEY.search(key):
                raise ConfigError(
                    f"{config_path}: '{key}' looks like a credential; put the secret in an "
                    "environment variable and name it with api_key_env"
                )
            if value is None:
                raise ConfigError(f"{config_path}: key '{key}' has no value")
        raw.update(file_values)
        base_dir = config_path.resolve().parent
        logger.debug(f"Loaded {len(file_values)} config key(s) from {config_path}")
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value

    kwargs: Dict[str, Any] = {"base_dir": base_dir}
    formulas: Dict[str, str] = {}
    for key, value in raw.items():
        if key.startswith(FORMULA_PREFIX):
            formulas[key[len(FORMULA_PREFIX):].strip()] = str(value).strip()
            continue
        if key not in _CONVERTERS:
            raise ConfigError(f"Unknown config key: '{key}'")
        try:
            kwargs[key] = _CONVERTERS[key](value)
        except ValueError as e:
            raise ConfigError(f"Invalid value for '{key}': {e}") from e
    kwargs["formulas"] = formulas
    return RunConfig(**kwargs)


def resolve_signal_files(config: RunConfig) -> List[Path]:
    """Match signal_files (gitwildmatch patterns) under the config directory"""
    if not config.signal_files:
        raise ConfigError("signal_files is not set")
    literal = [config.path(p) for p in config.signal_files if config.path(p).is_file()]
    patterns = [p for p in config.signal_files if not config.path(p).is_file()]
    matched: List[Path] = list(literal)
    if patterns:
        spec = pathspec.PathSpec.from_lines("gitwildmatch", patterns)
        candidates = sorted(
            p.relative_to(config.base_dir).as_posix()
            for p in config.base_dir.rglob("*") if p.is_file()
        )
        matched += [config.base_dir / name for name in spec.match_files(candidates)]
    files = sorted(set(matched))
    if not files:
        raise ConfigError(f"No signal files match: {', '.join(config.signal_files)}")
    return files


def load_aliases(path: Optional[PathLike] = None) -> Dict[str, str]:
    """Display name -> canonical id; built-in defaults plus an optional alias file"""
    aliases = dict(DEFAULT_ALIASES)
    if path is None:
        return aliases
    alias_path = Path(path)
    if not alias_path.is_file():
        raise ConfigError(f"Alias file not found: {alias_path}")
    for display, canonical in dotenv_values(alias_path).items():
        canonical = (canonical or "").strip()
        if canonical.upper() not in CANONICAL_SIGNALS:
            raise ConfigError(f"{alias_path}: alias '{display}' maps to unknown signal '{canonical}'")
        aliases[display] = canonical.upper()
    return aliases


def api_key(config: RunConfig) -> str:
    """Credential for the live transport, from the environment (or a local .env)"""
    load_dotenv()
    value = os.environ.get(config.api_key_env)
    if not value:
        raise AuthError(f"Environment variable {config.api_key_env} is not set")
    return value


def resolve_candidates(config: RunConfig, aliases: Optional[Mapping[str, str]] = None,
                       registry: Optional[AlphaRegistry] = None) -> List[AlphaDef]:
    """
    Candidate AlphaDefs in configured order: builtin abbreviations, inline
    `ABBR=formula` items, `formula.<ABBR>` keys, then mined registry entries.
    """
    builtins = {a.abbreviation: a for a in builtin_alphas()}
    resolved: Dict[str, AlphaDef] = {}

    def add(alpha: AlphaDef) -> None:
        if alpha.abbreviation in resolved:
            raise DuplicateAlphaError(f"Candidate '{alpha.abbreviation}' is configured twice")
        resolved[alpha.abbreviation] = alpha

    for item in config.candidates:
        if "=" in item:
            abbreviation, formula = (part.strip() for part in item.split("=", 1))
            add(AlphaDef(abbreviation, abbreviation, parse_alpha(formula, aliases), Provenance.USER_SUPPLIED))
        elif item in config.formulas:
            add(AlphaDef(item, item, parse_alpha(config.formulas[item], aliases), Provenance.USER_SUPPLIED))
        elif item in builtins:
            add(builtins[item])
        elif registry is not None and item in registry:
            add(registry.get(item))
        else:
            raise ConfigError(f"Unknown candidate '{item}'")
    for abbreviation, formula in config.formulas.items():
        if abbreviation not in resolved:
            add(AlphaDef(abbreviation, abbreviation, parse_alpha(formula, aliases), Provenance.USER_SUPPLIED))
    if config.include_mined and registry is not None:
        for alpha in registry:
            if alpha.abbreviation not in resolved:
                add(alpha)
    return list(resolved.values())

