"""
AlphaDoc Command Line Interface
Formulaic alpha research pipeline: ingest -> corr -> fmb -> mine -> report
"""

import json
import logging
import sys
import traceback
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import click

try:
    from rich.console import Console
    from rich.logging import RichHandler
    from rich.panel import Panel as RichPanel
    from rich import print as rprint
    from rich.progress import Progress, SpinnerColumn, TextColumn
    RICH_AVAILABLE = True
except ImportError:
    RICH_AVAILABLE = False
    Console = None

from . import __version__
from .config import (
    RunConfig,
    api_key,
    load_aliases,
    load_config,
    resolve_candidates,
    resolve_signal_files,
)
from .dsl import AlphaRegistry
from .errors import AlphaDocError, ConfigError, MissingInputError, OutputError, TransportError
from .fmb import BASELINE, FmbComparison, fmb_compare
from .metrics import CorrReport, avg_cross_sectional_corr
from .miner import (
    AlphaMiner,
    ChatCompletionTransport,
    CompletionParams,
    ReplayTransport,
    Transport,
    request_hash,
)
from .panel import PanelCache, load_panel, load_sector_map
from .report import BoxplotSpec, HeatmapSpec, emit_boxplot, emit_heatmap, summary_markdown

logger = logging.getLogger("alphadoc")

CORR_SETS = ("existing", "new", "combined")
ATTEMPTS_FILE = "mine_attempts.jsonl"
SUMMARY_FILE = "summary.md"
BOXPLOT_FILE = "boxplot_adj_r2.svg"


def corr_outputs(out: Path, name: str) -> List[Path]:
    """Files `corr` writes for one column set"""
    return [out / f"corr_{name}.csv", out / f"heatmap_{name}.svg", out / f"heatmap_{name}.csv"]


def configure_logging(verbose: bool = False) -> None:
    """Route package logs to stderr; DEBUG with --verbose"""
    logger.handlers.clear()
    if RICH_AVAILABLE:
        handler = RichHandler(console=Console(stderr=True), show_path=False, show_time=False)
    else:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    logger.addHandler(handler)
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    logger.propagate = False


class AlphaDocCLI:
    """Shared state and command implementations for the alphadoc CLI"""

    def __init__(self, config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None,
                 verbose: bool = False):
        self.config_path = config_path
        self.overrides = dict(overrides or {})
        self.verbose = verbose
        self.console = Console() if RICH_AVAILABLE else None

    # output helpers

    def print_banner(self):
        """Print the AlphaDoc banner"""
        if RICH_AVAILABLE:
            banner = (
                f"📊 AlphaDoc v{__version__} - Formulaic Alpha Research\n\n"
                "   Ingest • Correlate • Fama-MacBeth • Mine • Report"
            )
            rprint(RichPanel(banner, border_style="blue", padding=(1, 2)))
        else:
            click.echo(f"AlphaDoc v{__version__} - Formulaic Alpha Research")
            click.echo("=" * 60)

    def say(self, message: str, style: Optional[str] = None):
        if RICH_AVAILABLE and style:
            rprint(f"[{style}]{message}[/{style}]")
        else:
            click.echo(message)

    @contextmanager
    def _progress_context(self, description: str):
        """Spinner while a step runs (plain line without rich)"""
        if RICH_AVAILABLE:
            progress = Progress(
                SpinnerColumn(),
                TextColumn("[progress.description]{task.description}"),
                console=self.console,
                transient=True,
            )
            progress.start()
            progress.add_task(description)
            try:
                yield
            finally:
                progress.stop()
        else:
            click.echo(f"... {description}")
            yield

    def run(self, command: Callable[[RunConfig], int], **overrides) -> int:
        """Load config, run a command, map failures to exit codes"""
        try:
            config = load_config(self.config_path, {**self.overrides, **overrides})
            self.print_banner()
            return command(config)
        except AlphaDocError as e:
            if self.verbose:
                traceback.print_exc()
            self.say(f"❌ {type(e).__name__}: {e}", "red")
            return e.exit_code
        except KeyboardInterrupt:
            self.say("\n⏹️ Operation interrupted by user", "yellow")
            return 1
        except Exception as e:
            if self.verbose:
                traceback.print_exc()
            self.say(f"❌ Unexpected error: {e}", "red")
            return 1

    # shared steps

    def _evaluation_panel(self, config: RunConfig):
        panel = PanelCache(config.output_path).read()
        if config.sectors or config.start_date or config.end_date:
            panel = panel.restrict(config.sectors, config.start_date, config.end_date)
        return panel

    def _candidates(self, config: RunConfig):
        aliases = load_aliases(config.path(config.alias_file))
        registry = AlphaRegistry.load(config.registry_path, aliases)
        return resolve_candidates(config, aliases, registry)

    # commands

    def cmd_ingest(self, config: RunConfig) -> int:
        """Validate signal and price files and cache the panel"""
        signal_files = resolve_signal_files(config)
        if not config.price_file:
            raise ConfigError("price_file is not set")
        price_file = config.path(config.price_file)
        if not price_file.exists():
            raise MissingInputError([price_file])
        aliases = load_aliases(config.path(config.alias_file))
        sector_map = load_sector_map(config.path(config.sector_file)) if config.sector_file else None

        self.say(f"📁 Ingesting {len(signal_files)} signal file(s) and {price_file.name}", "cyan")
        with self._progress_context("Loading panel..."):
            panel = load_panel(signal_files, price_file, config.horizon, aliases, sector_map)
        manifest = PanelCache(config.output_path).write(panel)

        self.say(
            f"✅ {manifest['n_companies']} companies x {manifest['n_dates']} dates x "
            f"{len(manifest['signal_names'])} signals ({manifest['row_count']} rows)",
            "green",
        )
        self.say(f"   Date span: {manifest['date_span'][0]} .. {manifest['date_span'][1]}")
        missing = {k: v for k, v in manifest["missing"].items() if v}
        if missing:
            self.say(f"   Missing values: {missing}", "yellow")
        self.say(f"   Content hash: {manifest['content_hash'][:16]}")
        return 0

    def _remove_outputs(self, paths: List[Path]) -> None:
        for path in paths:
            if path.exists():
                try:
                    path.unlink()
                except OSError as e:
                    raise OutputError(f"Cannot remove stale output {path}: {e}") from e
                logger.info(f"🗑️ Removed stale {path.name}")

    def cmd_corr(self, config: RunConfig) -> int:
        """Averaged cross-sectional Spearman heatmaps for existing, new and combined signals"""
        panel = self._evaluation_panel(config)
        candidates = self._candidates(config)
        column_sets = {"existing": list(config.baseline)}
        if candidates:
            column_sets["new"] = list(candidates)
            column_sets["combined"] = list(config.baseline) + list(candidates)

        out = config.output_path
        for name in CORR_SETS:
            if name not in column_sets:
                self._remove_outputs(corr_outputs(out, name))
        for name, columns in column_sets.items():
            with self._progress_context(f"Correlating {name} signals..."):
                report = avg_cross_sectional_corr(panel, columns, config.workers)
            report.to_csv(out / f"corr_{name}.csv")
            spec = HeatmapSpec.from_corr(report, config.data_driven_scale,
                                         title=f"Average Spearman correlation ({name} signals)")
            emit_heatmap(spec, out / f"heatmap_{name}.svg")
            self.say(f"✅ {name}: {len(report.per_date)} dates, {len(report.skipped_dates)} skipped", "green")
            for label, rho in report.return_correlations().items():
                self.say(f"   {label:<10} rho(return) = {rho: .4f}")
        return 0

    def cmd_fmb(self, config: RunConfig) -> int:
        """Fama-MacBeth comparison of the baseline against baseline + each candidate"""
        panel = self._evaluation_panel(config)
        candidates = self._candidates(config)
        with self._progress_context("Running Fama-MacBeth regressions..."):
            comparison = fmb_compare(panel, list(config.baseline), candidates, config.workers)
        comparison.write(config.output_path)
        emit_boxplot(BoxplotSpec.from_comparison(comparison, "Adjusted R-squared by model"),
                     config.output_path / BOXPLOT_FILE)

        baseline_median = comparison.summary[BASELINE].median
        for model in comparison.models():
            median = comparison.summary[model].median
            marker = "" if model == BASELINE else f" ({median - baseline_median:+.4f} vs baseline)"
            self.say(f"   {model:<10} median adj. R2 = {median:.4f}{marker}")
        for model, reason in comparison.failures.items():
            self.say(f"⚠️ {model} failed: {reason}", "yellow")
        return 0

    def _transport(self, config: RunConfig) -> Transport:
        if config.transport == "replay":
            if not config.replay_dir:
                raise ConfigError("replay transport needs replay_dir")
            return ReplayTransport(config.path(config.replay_dir))
        return ChatCompletionTransport(config.endpoint, api_key(config), config.session_dir, config.timeout)

    def _record_attempt(self, config: RunConfig, record: Dict[str, Any]) -> None:
        path = config.output_path / ATTEMPTS_FILE
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a", encoding="utf-8") as handle:
            handle.write(json.dumps(record, sort_keys=True) + "\n")

    def cmd_mine(self, config: RunConfig) -> int:
        """Mine one candidate through the configured transport and register it"""
        if config.seed is None:
            raise ConfigError("mine samples panel rows and needs a seed (--seed or seed = ...)")
        panel = self._evaluation_panel(config)
        aliases = load_aliases(config.path(config.alias_file))
        params = CompletionParams(config.model, config.temperature, config.max_tokens)
        miner = AlphaMiner(self._transport(config), params, aliases, config.query)

        attempt: Dict[str, Any] = {
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "seed": config.seed,
            "transport": config.transport,
        }
        try:
            with self._progress_context("Prompting for a new signal..."):
                bundle, candidate = miner.mine(panel, config.seed, config.sample_size, list(config.baseline))
        except TransportError as e:
            attempt.update(status="transport_error", error=f"{type(e).__name__}: {e}")
            self._record_attempt(config, attempt)
            raise
        attempt.update(status=candidate.parse_status.value,
                       prompt_hash=request_hash(bundle.step2_prompt),
                       candidate=candidate.to_record())

        if not candidate.parsed:
            self._record_attempt(config, attempt)
            self.say(f"⚠️ Response not parsable: {candidate.formula_text or 'no formula line'}", "yellow")
            return 0

        registry = AlphaRegistry.load(config.registry_path, aliases)
        alpha = candidate.to_alpha_def()
        existing = registry.get(alpha.abbreviation)
        if existing is not None and config.dedup and existing.expr == alpha.expr:
            attempt["registered"] = None
            self.say(f"ℹ️ {alpha.abbreviation} = {alpha.formula} already registered", "cyan")
        else:
            if existing is not None:
                alpha = self._renamed(alpha, registry)
            registry.add(alpha)
            registry.save(config.registry_path)
            attempt["registered"] = alpha.abbreviation
            self.say(f"✅ {alpha.name} ({alpha.abbreviation}) = {alpha.formula}", "green")
        for warning in candidate.warnings:
            self.say(f"⚠️ {warning}", "yellow")
        self._record_attempt(config, attempt)
        return 0

    @staticmethod
    def _renamed(alpha, registry: AlphaRegistry):
        suffix = 2
        while f"{alpha.abbreviation}{suffix}" in registry:
            suffix += 1
        return type(alpha)(alpha.name, f"{alpha.abbreviation}{suffix}", alpha.expr, alpha.provenance)

    def cmd_report(self, config: RunConfig) -> int:
        """Summarise correlation and Fama-MacBeth outputs into summary.md"""
        out = config.output_path
        corr_files = [out / f"corr_{name}.csv" for name in CORR_SETS]
        fmb_files = [out / name for name in (FmbComparison.ADJ_R2_FILE, FmbComparison.SUMMARY_FILE,
                                             FmbComparison.GAMMAS_FILE, FmbComparison.FAILURES_FILE)]
        missing: List[Path] = [p for p in fmb_files if not p.exists()]
        if not corr_files[0].exists():
            missing.insert(0, corr_files[0])
        if missing:
            raise MissingInputError(missing)

        corr_path = corr_files[2] if corr_files[2].exists() else corr_files[0]
        text = summary_markdown(CorrReport.from_csv(corr_path), FmbComparison.from_directory(out))
        (out / SUMMARY_FILE).write_text(text + "\n", encoding="utf-8")
        self.say(f"📄 Summary written to {out / SUMMARY_FILE}", "green")
        return 0


# --- click surface ---------------------------------------------------------

def _exit(ctx: click.Context, code: int) -> None:
    ctx.exit(code)


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="Flat key = value run config")
@click.option("--out", "output_dir", type=click.Path(file_okay=False), default=None,
              help="Output directory (overrides output_dir)")
@click.option("--seed", type=int, default=None, help="Random seed for row sampling")
@click.option("--workers", type=int, default=None, help="Worker threads (default: physical cores)")
@click.option("--verbose", "-v", is_flag=True, help="Debug logging and tracebacks on failure")
@click.version_option(__version__, prog_name="AlphaDoc")
@click.pass_context
def main(ctx, config_path, output_dir, seed, workers, verbose):
    """AlphaDoc - evaluate and mine formulaic alpha signals"""
    configure_logging(verbose)
    overrides = {"output_dir": output_dir, "seed": seed, "workers": workers}
    ctx.obj = AlphaDocCLI(config_path, overrides, verbose)


@main.command()
@click.option("--horizon", type=click.Choice(["1M", "3M"]), default=None, help="Forward return horizon")
@click.pass_context
def ingest(ctx, horizon):
    """Validate signal/price files and cache the panel"""
    cli: AlphaDocCLI = ctx.obj
    _exit(ctx, cli.run(cli.cmd_ingest, horizon=horizon))


@main.command()
@click.option("--data-driven-scale/--fixed-scale", default=None,
              help="Colour scale from the data instead of [-1, 1]")
@click.pass_context
def corr(ctx, data_driven_scale):
    """Averaged cross-sectional Spearman correlation heatmaps"""
    cli: AlphaDocCLI = ctx.obj
    _exit(ctx, cli.run(cli.cmd_corr, data_driven_scale=data_driven_scale))


@main.command()
@click.option("--candidates", default=None, help="Comma-separated builtin abbreviations or ABBR=formula")
@click.pass_context
def fmb(ctx, candidates):
    """Fama-MacBeth baseline vs candidate comparison"""
    cli: AlphaDocCLI = ctx.obj
    _exit(ctx, cli.run(cli.cmd_fmb, candidates=candidates))


@main.command()
@click.option("--transport", type=click.Choice(["replay", "live"]), default=None)
@click.option("--replay-dir", type=click.Path(file_okay=False), default=None)
@click.option("--dedup/--no-dedup", default=None, help="Skip candidates already in the registry")
@click.pass_context
def mine(ctx, transport, replay_dir, dedup):
    """Mine one new candidate formula"""
    cli: AlphaDocCLI = ctx.obj
    _exit(ctx, cli.run(cli.cmd_mine, transport=transport, replay_dir=replay_dir, dedup=dedup))


@main.command()
@click.pass_context
def report(ctx):
    """Write summary.md from corr and fmb outputs"""
    cli: AlphaDocCLI = ctx.obj
    _exit(ctx, cli.run(cli.cmd_report))


if __name__ == "__main__":
    main()
