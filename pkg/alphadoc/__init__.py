"""
AlphaDoc - Formulaic Alpha Research Engine

Evaluates formulaic alpha signals on a company x date panel of financial
signals and mines new ones with a language model:
- Panel ingestion with forward returns and a versioned parquet cache
- A small formula language over the canonical signals
- Averaged cross-sectional Spearman correlation heatmaps
- Fama-MacBeth baseline vs candidate comparison on adjusted R-squared
- Record/replay prompting sessions for new candidate signals

License: MIT
"""

__version__ = "0.1.0"
__author__ = "AlphaDoc Developers"

from .dsl import AlphaDef, AlphaRegistry, builtin_alphas, parse_alpha, render_alpha
from .panel import Panel, PanelCache, cross_section, load_panel, sample_rows
from .metrics import avg_cross_sectional_corr, ols, spearman, spearman_matrix
from .fmb import fmb_compare, risk_premia, step1_betas, step2_cross_sectional
from .miner import AlphaMiner, ChatCompletionTransport, ReplayTransport, parse_llm_response
from .report import emit_boxplot, emit_heatmap, summary_markdown
from .cli import main

__all__ = [
    "AlphaDef",
    "AlphaRegistry",
    "builtin_alphas",
    "parse_alpha",
    "render_alpha",
    "Panel",
    "PanelCache",
    "cross_section",
    "load_panel",
    "sample_rows",
    "avg_cross_sectional_corr",
    "ols",
    "spearman",
    "spearman_matrix",
    "fmb_compare",
    "risk_premia",
    "step1_betas",
    "step2_cross_sectional",
    "AlphaMiner",
    "ChatCompletionTransport",
    "ReplayTransport",
    "parse_llm_response",
    "emit_boxplot",
    "emit_heatmap",
    "summary_markdown",
    "main",
]
