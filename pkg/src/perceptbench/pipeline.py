"""End-to-end orchestration: ingest, schedule, judge, aggregate, correlate, report.

Every stage persists its output under ``<output>/state`` so aggregation and
reporting can be re-run without touching the judge.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Mapping

from .aggregate import (
    BRADLEY_TERRY,
    METHODS,
    WIN_RATE,
    ComparisonMatrix,
    ScoreVector,
    build_matrices,
    score_matrix,
)
from .dataset import DatasetIndex, load_manifest, partition_by_category
from .errors import (
    ConfigError,
    EncodingError,
    ImageTooLarge,
    InfeasibleBudget,
    JudgeError,
    MissingCredential,
    MissingLatentScore,
    PerceptBenchError,
    TooFewItems,
)
from .judge import Backend, JudgeConfig, PairJudge, VerdictCache, make_backend
from .metrics import CorrelationReport, build_report
from .principles import PRINCIPLES
from .prompt import PromptTemplate, VerdictSet, default_template, load_template
from .report import CategoryCounts, RunSummary, emit_radar, emit_summary, emit_table
from .schedule import Schedule, build_schedule, parse_schedule_mode

log = logging.getLogger(__name__)

STATE_DIR = "state"


@dataclass(frozen=True)
class RunConfig:
    manifest: str
    output: str = "out"
    cache_dir: str | None = None
    categories: tuple[str, ...] = ()
    schedule: str = "full"
    order_balanced: bool = False
    seed: int = 0
    judge: JudgeConfig = field(default_factory=JudgeConfig)
    methods: tuple[str, ...] = (WIN_RATE,)
    epsilon: float = 0.01
    max_iter: int = 10_000
    tol: float = 1e-10
    template: str | None = None
    downscale: bool = False
    emit_schedule: bool = False
    emit_matrices: bool = False

    def __post_init__(self):
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown scoring method {m!r}")
        if not self.methods:
            raise ConfigError("at least one scoring method is required")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        try:
            parse_schedule_mode(self.schedule)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def output_dir(self) -> Path:
        return Path(self.output)

    @property
    def state_dir(self) -> Path:
        return self.output_dir / STATE_DIR

    @property
    def cache_path(self) -> Path:
        base = Path(self.cache_dir) if self.cache_dir else self.output_dir / "cache"
        return base / "verdicts.jsonl"

    def load_template(self) -> PromptTemplate:
        return load_template(self.template) if self.template else default_template()

    def semantic_dict(self) -> dict[str, Any]:
        """Everything that changes results; paths for outputs and caches excluded."""
        return {
            "manifest": str(Path(self.manifest).resolve()),
            "categories": sorted(self.categories),
            "schedule": self.schedule,
            "order_balanced": self.order_balanced,
            "seed": self.seed,
            "judge": self.judge.semantic_dict(),
            "methods": sorted(self.methods),
            "epsilon": self.epsilon,
            "max_iter": self.max_iter,
            "tol": self.tol,
            "template_hash": self.load_template().content_hash(),
            "downscale": self.downscale,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.semantic_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def to_dict(self) -> dict[str, Any]:
        doc = asdict(self)
        doc["categories"] = list(self.categories)
        doc["methods"] = list(self.methods)
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "RunConfig":
        doc = dict(doc)
        doc["judge"] = JudgeConfig(**doc["judge"])
        doc["categories"] = tuple(doc.get("categories", ()))
        doc["methods"] = tuple(doc.get("methods", (WIN_RATE,)))
        return cls(**doc)


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


# --- ingest / plan ----------------------------------------------------------------


def ingest(config: RunConfig) -> DatasetIndex:
    index = load_manifest(config.manifest, config.judge.max_image_dimension, config.downscale)
    if config.categories:
        unknown = sorted(set(config.categories) - set(index.categories))
        if unknown:
            raise ConfigError(f"categories not in manifest: {', '.join(unknown)}")
        keep = set(config.categories)
        index = DatasetIndex(index.dataset, index.score_range, tuple(i for i in index.items if i.category in keep))
    return index


def plan(config: RunConfig, index: DatasetIndex) -> list[Schedule]:
    mode, budget = parse_schedule_mode(config.schedule)
    schedules = []
    for category, items in partition_by_category(index):
        if len(items) < 2:
            raise TooFewItems(f"category {category!r} has {len(items)} item(s); a pair needs 2")
        schedules.append(build_schedule(items, category, mode, budget, config.seed, config.order_balanced))
    return schedules


def latent_scores(index: DatasetIndex) -> dict[str, dict[str, float]]:
    """Latent per-principle scores for the simulated judge.

    An item's explicit ``latent`` mapping wins; otherwise its normalized
    ground truth is used for every principle.
    """
    out = {}
    for item in index.items:
        scores: dict[str, float] = {}
        if item.ground_truth_norm is not None:
            scores = {p.value: item.ground_truth_norm for p in PRINCIPLES}
        if item.latent:
            scores.update({k.upper(): v for k, v in item.latent.items()})
        if scores:
            out[item.id] = scores
    return out


def validate(config: RunConfig) -> list[Diagnostic]:
    """Check a configuration without running anything; returns diagnostics."""
    diags: list[Diagnostic] = []
    jc = config.judge
    try:
        config.load_template()
    except (PerceptBenchError, OSError) as exc:
        diags.append(Diagnostic(getattr(exc, "code", "TemplateError"), str(exc)))

    if jc.backend == "live":
        if not jc.endpoint_url:
            diags.append(Diagnostic("ConfigError", "live judge needs --endpoint"))
        if not os.environ.get(jc.credential_env_var_name):
            diags.append(Diagnostic(MissingCredential.code, f"environment variable {jc.credential_env_var_name} is not set"))

    try:
        index = load_manifest(config.manifest, max_dimension=None)
    except PerceptBenchError as exc:
        diags.append(Diagnostic(exc.code, str(exc)))
        return diags

    limit = jc.max_image_dimension
    if not config.downscale:
        for item in index.items:
            if max(item.width, item.height) > limit:
                diags.append(
                    Diagnostic(ImageTooLarge.code, f"item {item.id!r} is {item.width}x{item.height}, over the {limit}px limit")
                )

    unknown = sorted(set(config.categories) - set(index.categories))
    for cat in unknown:
        diags.append(Diagnostic("ConfigError", f"category {cat!r} is not in the manifest"))
    mode, budget = parse_schedule_mode(config.schedule)
    latent = latent_scores(index) if jc.backend == "simulated" else {}
    for category, items in partition_by_category(index):
        if config.categories and category not in config.categories:
            continue
        n = len(items)
        if n < 2:
            diags.append(Diagnostic(TooFewItems.code, f"category {category!r} has {n} item(s)"))
        elif mode == "sampled" and not 1 <= (budget or 0) <= n - 1:
            diags.append(
                Diagnostic(InfeasibleBudget.code, f"category {category!r}: k={budget} must lie in [1, {n - 1}]")
            )
        if jc.backend == "simulated":
            for item in items:
                if set(latent.get(item.id, {})) < {p.value for p in PRINCIPLES}:
                    diags.append(
                        Diagnostic(MissingLatentScore.code, f"item {item.id!r} has no ground truth or complete latent scores")
                    )
    return diags


# --- judging -------------------------------------------------------------------------


@dataclass
class JudgeOutcome:
    verdicts: dict[str, list[VerdictSet]]
    failures: list[dict[str, Any]]
    counts: dict[str, CategoryCounts]
    backend_calls: int
    wall_time_s: float


def _write_json(path: Path, doc: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"missing stage output {path}; run the earlier stage first") from None


def judge_schedules(
    config: RunConfig,
    index: DatasetIndex,
    schedules: list[Schedule],
    backend: Backend,
    template: PromptTemplate,
) -> JudgeOutcome:
    cache = VerdictCache(config.cache_path)
    judge = PairJudge(config.judge, template, backend, cache, dataset=index.dataset)
    items = index.by_id()

    @lru_cache(maxsize=512)
    def image(item_id: str) -> bytes:
        return items[item_id].read_bytes()

    def work(category: str, pos: int):
        task = sched_by_cat[category].tasks[pos]
        try:
            images = (image(task.first), image(task.second))
            vs, cached = judge.judge(task, images, category)
            return vs, cached, None
        except (JudgeError, ImageTooLarge, EncodingError, OSError) as exc:
            log.warning("pair (%s, %s) in %r failed: %s", task.first, task.second, category, exc)
            return None, False, {
                "category": category,
                "first": task.first,
                "second": task.second,
                "error": getattr(exc, "code", type(exc).__name__),
                "message": str(exc),
            }

    sched_by_cat = {s.category: s for s in schedules}
    start = time.perf_counter()
    jobs = [(s.category, pos) for s in schedules for pos in range(len(s.tasks))]
    with ThreadPoolExecutor(max_workers=config.judge.concurrency_limit) as pool:
        results = list(pool.map(lambda job: work(*job), jobs))
    elapsed = time.perf_counter() - start

    verdicts: dict[str, list[VerdictSet]] = {s.category: [] for s in schedules}
    counts = {s.category: CategoryCounts(scheduled=len(s.tasks)) for s in schedules}
    failures = []
    for (category, _), (vs, cached, failure) in zip(jobs, results):
        c = counts[category]
        if vs is None:
            c.failed += 1
            failures.append(failure)
            continue
        c.judged += 1
        c.cached += int(cached)
        verdicts[category].append(vs)
    return JudgeOutcome(verdicts, failures, counts, judge.backend_calls, elapsed)


def run_judge_stage(config: RunConfig, backend: Backend | None = None) -> JudgeOutcome:
    template = config.load_template()
    if backend is None and config.judge.backend == "live":
        # fail fast on endpoint/credential problems before touching the dataset
        backend = make_backend(config.judge)
    index = ingest(config)
    schedules = plan(config, index)
    if backend is None:
        backend = make_backend(config.judge, latent_scores(index))

    state = config.state_dir
    _write_json(state / "run_config.json", config.to_dict())
    _write_json(state / "schedules.json", [s.to_dict() for s in schedules])
    if config.emit_schedule:
        _write_json(config.output_dir / "schedule.json", [s.to_dict() for s in schedules])

    outcome = judge_schedules(config, index, schedules, backend, template)

    with open(state / "verdicts.jsonl", "w", encoding="utf-8") as fh:
        for category in sorted(outcome.verdicts):
            for vs in outcome.verdicts[category]:
                fh.write(json.dumps({"category": category, "verdicts": vs.to_dict()}, sort_keys=True) + "\n")
    with open(state / "failures.jsonl", "w", encoding="utf-8") as fh:
        for failure in outcome.failures:
            fh.write(json.dumps(failure, sort_keys=True) + "\n")
    _write_json(
        state / "judge_summary.json",
        {
            "categories": {k: asdict(v) for k, v in outcome.counts.items()},
            "backend_calls": outcome.backend_calls,
            "wall_time_s": outcome.wall_time_s,
        },
    )
    log.info(
        "judged %d pairs (%d from cache, %d failed, %d backend calls)",
        sum(c.judged for c in outcome.counts.values()),
        sum(c.cached for c in outcome.counts.values()),
        len(outcome.failures),
        outcome.backend_calls,
    )
    return outcome


def load_verdicts(config: RunConfig) -> dict[str, list[VerdictSet]]:
    path = config.state_dir / "verdicts.jsonl"
    if not path.exists():
        raise ConfigError(f"missing stage output {path}; run `judge` first")
    out: dict[str, list[VerdictSet]] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            doc = json.loads(line)
            out.setdefault(doc["category"], []).append(VerdictSet.from_dict(doc["verdicts"]))
    return out


# --- aggregate / report --------------------------------------------------------------


def aggregate_stage(config: RunConfig, index: DatasetIndex | None = None) -> list[ScoreVector]:
    index = index or ingest(config)
    schedules = [Schedule.from_dict(d) for d in _read_json(config.state_dir / "schedules.json")]
    verdicts = load_verdicts(config)
    scores: list[ScoreVector] = []
    matrices: list[ComparisonMatrix] = []
    for sched in schedules:
        ids = list(sched.item_ids)
        for m in build_matrices(ids, verdicts.get(sched.category, []), sched.category).values():
            matrices.append(m)
            for method in config.methods:
                scores.append(score_matrix(m, method, config.epsilon, config.max_iter, config.tol))
    _write_json(config.state_dir / "scores.json", [s.to_dict() for s in scores])
    if config.emit_matrices:
        _write_json(
            config.output_dir / "matrices.json",
            {"matrices": [m.to_dict() for m in matrices], "scores": [s.to_dict() for s in scores]},
        )
    return scores


def _suffix(method: str, config: RunConfig) -> str:
    return "" if method == config.methods[0] else f"_{method}"


def report_stage(config: RunConfig, index: DatasetIndex | None = None) -> tuple[CorrelationReport, RunSummary]:
    index = index or ingest(config)
    scores = [ScoreVector.from_dict(d) for d in _read_json(config.state_dir / "scores.json")]
    report = build_report(scores, index)
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "correlations.json", report.to_dict())
    for method in config.methods:
        sfx = _suffix(method, config)
        (out / f"report{sfx}.csv").write_text(emit_table(report, "csv", method), encoding="utf-8")
        (out / f"report{sfx}.md").write_text(emit_table(report, "markdown", method), encoding="utf-8")
        for metric in ("plcc", "srocc"):
            (out / f"radar_{metric}{sfx}.svg").write_text(emit_radar(report, metric, method), encoding="utf-8")

    judged = _read_json(config.state_dir / "judge_summary.json")
    summary = RunSummary(
        dataset=index.dataset,
        schedule_mode=config.schedule,
        judge_backend=config.judge.backend,
        model_id=config.judge.effective_model_id,
        config_hash=config.config_hash(),
        order_balanced=config.order_balanced,
        categories={k: CategoryCounts(**v) for k, v in judged["categories"].items()},
        backend_calls=judged["backend_calls"],
        wall_time_s=round(judged["wall_time_s"], 3),
    )
    (out / "summary.json").write_text(emit_summary(summary), encoding="utf-8")
    return report, summary


def run(config: RunConfig, backend: Backend | None = None) -> RunSummary:
    run_judge_stage(config, backend)
    index = ingest(config)
    aggregate_stage(config, index)
    _, summary = report_stage(config, index)
    return summary


def load_run_config(output: str | os.PathLike) -> RunConfig:
    return RunConfig.from_dict(_read_json(Path(output) / STATE_DIR / "run_config.json"))

