"""Pairwise visual-perception judging, aggregation and correlation reporting."""

from .aggregate import (
    ComparisonMatrix,
    ScoreVector,
    accumulate,
    bradley_terry_scores,
    build_matrices,
    rank_from_scores,
    win_rate_scores,
)
from .dataset import DatasetIndex, ImageItem, load_manifest, normalize_score, partition_by_category
from .judge import JudgeConfig, PairJudge, SimulatedBackend, VerdictCache, judge_pair, simulated_judge
from .metrics import CorrelationReport, build_report, pearson, spearman
from .principles import PRINCIPLES, Principle
from .prompt import PromptTemplate, VerdictSet, default_template, parse_verdicts, render_prompt
from .report import RunSummary, emit_radar, emit_summary, emit_table
from .schedule import PairTask, Schedule, full_round_robin, sampled_pairs, with_order_balancing

__version__ = "0.1.0"
