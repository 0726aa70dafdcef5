"""Experiment orchestration: sweeps, normalization to naive, reports, timing."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import MetricSpec, QueryInstance, Ranking
from .exact import DEFAULT_BUDGET, BudgetExceeded, exact_vrisk_opt
from .ingest import (
    MovieLensOptions,
    NoiseConfig,
    load_canonical,
    load_movielens,
    load_trec_diversity,
    perturb_intents,
)
from .metrics import TargetLevel, compute_targets, delta_normalize, v_iw, v_std, vrisk
from .rankers import (
    DiversifierConfig,
    TfidfSimilarity,
    calibrated_rerank,
    ia_select,
    iw_greedy,
    mmr,
    naive_rank,
    vrisker,
    xquad,
)
from .stats import SignificanceResult, apply_holm, paired_test

ALL_METHODS = ("naive", "iw_greedy", "vrisker", "xquad", "mmr", "ia_select", "cr", "exact")
SWEEP_AXES = ("metric", "beta", "k", "noise", "target_alpha", "lambda", "tiebreak")
LOADERS = ("canonical", "trec", "movielens")
CSV_COLUMNS = ("method", "query_id", "grid", "vrisk", "v_std", "v_iw", "delta_risk", "delta_std", "delta_iw")
VALUE_COLUMNS = CSV_COLUMNS[3:]
Z95 = 1.959963984540054


@dataclass(frozen=True)
class Settings:
    """Knobs of one grid point."""

    k: int = 10
    beta: float = 0.10
    metric: str = "avgrel"
    target: str = "oracle"
    target_alpha: float = 1.0
    lam: float = 0.5
    noise_sigma2: float = 0.0
    tie_break: str = "iw"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be positive, got {self.k}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        MetricSpec(self.metric)
        if self.target not in ("oracle", "scaled_oracle"):
            raise ValueError(f"target must be oracle or scaled_oracle, got {self.target!r}")
        DiversifierConfig(lam=self.lam, tie_break=self.tie_break)
        NoiseConfig(self.noise_sigma2)
        TargetLevel("scaled_oracle", self.target_alpha)

    @property
    def spec(self) -> MetricSpec:
        return MetricSpec(self.metric)

    @property
    def target_level(self) -> TargetLevel:
        if self.target == "oracle" and self.target_alpha == 1.0:
            return TargetLevel("oracle")
        return TargetLevel("scaled_oracle", self.target_alpha)


def _apply_axis(base: Settings, axis: Optional[str], value) -> Settings:
    if axis is None:
        return base
    if axis == "metric":
        return replace(base, metric=str(value))
    if axis == "beta":
        return replace(base, beta=float(value))
    if axis == "k":
        return replace(base, k=int(value))
    if axis == "noise":
        return replace(base, noise_sigma2=float(value))
    if axis == "target_alpha":
        return replace(base, target="scaled_oracle", target_alpha=float(value))
    if axis == "lambda":
        return replace(base, lam=float(value))
    if axis == "tiebreak":
        return replace(base, tie_break=str(value))
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def _grid_label(value) -> str:
    return value if isinstance(value, str) else repr(value)


@dataclass(frozen=True)
class ExperimentPlan:
    data: Optional[str] = None
    loader: str = "canonical"
    methods: tuple[str, ...] = ("naive", "vrisker")
    sweep: Optional[str] = None
    grid: tuple = ()
    base: Settings = Settings()
    seed: int = 0
    workers: int = 1
    timing: bool = False
    exact_budget: int = DEFAULT_BUDGET
    topics: Optional[str] = None
    movielens: MovieLensOptions = MovieLensOptions()
    instances: Optional[tuple[QueryInstance, ...]] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        unknown = [m for m in self.methods if m not in ALL_METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; expected a subset of {ALL_METHODS}")
        if not self.methods:
            raise ValueError("no methods requested")
        if len(set(self.methods)) != len(self.methods):
            raise ValueError("methods listed twice")
        if self.loader not in LOADERS:
            raise ValueError(f"unknown loader {self.loader!r}")
        if self.sweep is not None:
            if self.sweep not in SWEEP_AXES:
                raise ValueError(f"unknown sweep axis {self.sweep!r}; expected one of {SWEEP_AXES}")
            if len(self.grid) == 0:
                raise ValueError("a sweep needs a non-empty grid")
        if self.data is None and self.instances is None:
            raise ValueError("plan needs a dataset path or preloaded instances")
        if self.workers < 1:
            raise ValueError("workers must be positive")
        self.grid_points()  # validates every grid value

    def grid_points(self) -> list[tuple[str, Settings]]:
        if self.sweep is None:
            return [("default", self.base)]
        return [(_grid_label(v), _apply_axis(self.base, self.sweep, v)) for v in self.grid]

    def grid_settings(self) -> list[Settings]:
        return [s for _, s in self.grid_points()]


def load_dataset(plan: ExperimentPlan) -> list[QueryInstance]:
    if plan.instances is not None:
        return sorted(plan.instances, key=lambda i: i.query_id)
    if plan.loader == "canonical":
        return load_canonical(plan.data)
    if plan.loader == "trec":
        return load_trec_diversity(plan.data, plan.topics)
    path = Path(plan.data)
    if path.is_dir():
        return load_movielens(path / "ratings.csv", path / "movies.csv", plan.movielens)
    raise ValueError("movielens loader expects a directory holding ratings.csv and movies.csv")


def _seed_for(seed: int, query_id: str, grid: str, purpose: str) -> np.random.SeedSequence:
    tag = zlib.crc32(f"{query_id}\x00{grid}\x00{purpose}".encode())
    return np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, tag])


def _rank(method: str, seen: QueryInstance, s: Settings, targets, cfg: DiversifierConfig, budget: int, sim_cache) -> Ranking:
    spec = s.spec
    if method == "naive":
        return naive_rank(seen, s.k)
    if method == "iw_greedy":
        return iw_greedy(seen, s.k, spec)
    if method == "vrisker":
        return vrisker(seen, s.k, s.beta, spec, targets, cfg)
    if method == "xquad":
        return xquad(seen, s.k, cfg)
    if method == "mmr":
        if "sim" not in sim_cache:
            sim_cache["sim"] = TfidfSimilarity.for_instance(seen)
        return mmr(seen, s.k, sim_cache["sim"], cfg)
    if method == "ia_select":
        return ia_select(seen, s.k)
    if method == "cr":
        return calibrated_rerank(seen, s.k, cfg)
    if method == "exact":
        return exact_vrisk_opt(seen, s.k, s.beta, spec, targets, budget=budget)[0]
    raise AssertionError(method)


@dataclass(frozen=True)
class Row:
    method: str
    query_id: str
    grid: str
    vrisk: float
    v_std: float
    v_iw: float
    delta_risk: Optional[float]
    delta_std: Optional[float]
    delta_iw: Optional[float]


def _query_rows(args) -> tuple[list[Row], list[dict], dict]:
    """Rankings and evaluations of one query at every grid point."""
    inst, plan = args
    rows: list[Row] = []
    errors: list[dict] = []
    times: dict[tuple[str, str], float] = {}
    sim_cache: dict = {}
    for label, s in plan.grid_points():
        spec = s.spec
        targets = compute_targets(inst, spec, s.k, s.target_level)
        seen = inst
        if s.noise_sigma2 > 0:
            rng = np.random.default_rng(_seed_for(plan.seed, inst.query_id, label, "noise"))
            seen = perturb_intents(inst, NoiseConfig(s.noise_sigma2, plan.seed), rng)
        tb_seed = None
        if s.tie_break == "random":
            tb_seed = int(_seed_for(plan.seed, inst.query_id, label, "tiebreak").generate_state(1)[0])
        cfg = DiversifierConfig(lam=s.lam, tie_break=s.tie_break, seed=tb_seed)

        evals = {}
        for method in dict.fromkeys(("naive",) + tuple(plan.methods)):
            t0 = time.perf_counter()
            try:
                r = _rank(method, seen, s, targets, cfg, plan.exact_budget, sim_cache)
            except BudgetExceeded as e:
                errors.append({"method": method, "query_id": inst.query_id, "grid": label, "error": str(e)})
                continue
            times[(method, label)] = (time.perf_counter() - t0) * 1000.0
            evals[method] = (
                vrisk(inst, r, spec, targets, s.beta).vrisk,
                v_std(inst, r, spec),
                v_iw(inst, r, spec),
            )
        base = evals["naive"]
        for method in plan.methods:
            if method not in evals:
                continue
            vr, vs, vi = evals[method]
            rows.append(
                Row(
                    method,
                    inst.query_id,
                    label,
                    vr,
                    vs,
                    vi,
                    delta_normalize(vr, base[0]),
                    delta_normalize(vs, base[1]),
                    delta_normalize(vi, base[2]),
                )
            )
    return rows, errors, times


@dataclass
class ExperimentReport:
    rows: list[Row]
    methods: tuple[str, ...]
    grid: tuple[str, ...]
    plan: Optional[dict] = None
    errors: list[dict] = field(default_factory=list)
    timings: Optional[dict[str, dict[str, float]]] = None  # method -> grid -> mean ms/query
    significance: list[SignificanceResult] = field(default_factory=list)

    def values(self, method: str, column: str, grid: Optional[str] = None) -> dict[tuple[str, str], Optional[float]]:
        return {
            (r.query_id, r.grid): getattr(r, column)
            for r in self.rows
            if r.method == method and (grid is None or r.grid == grid)
        }

    def aggregates(self) -> dict:
        """Mean, 95% CI half-width, count and exclusions per method, grid, column."""
        out: dict = {}
        for method in self.methods:
            out[method] = {}
            for g in self.grid:
                sel = [r for r in self.rows if r.method == method and r.grid == g]
                if not sel:
                    continue
                stats = {}
                for col in VALUE_COLUMNS:
                    vals = [getattr(r, col) for r in sel]
                    kept = np.array([v for v in vals if v is not None], dtype=float)
                    stats[col] = _summary(kept, len(vals) - kept.size)
                out[method][g] = stats
        return out

    # -- persistence -------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.method, r.query_id, r.grid] + [_fmt(getattr(r, c)) for c in VALUE_COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, path) -> "ExperimentReport":
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != CSV_COLUMNS:
                raise ValueError(f"{path}: not a report CSV (header {header})")
            for lineno, rec in enumerate(reader, 2):
                if len(rec) != len(CSV_COLUMNS):
                    raise ValueError(f"{path}:{lineno}: expected {len(CSV_COLUMNS)} fields")
                vals = [float(x) if x != "" else None for x in rec[3:]]
                rows.append(Row(rec[0], rec[1], rec[2], *vals))
        methods = tuple(dict.fromkeys(r.method for r in rows))
        grid = tuple(dict.fromkeys(r.grid for r in rows))
        return cls(rows, methods, grid)

    def summary(self) -> dict:
        doc = {
            "methods": list(self.methods),
            "grid": list(self.grid),
            "n_queries": len({r.query_id for r in self.rows}),
            "aggregates": self.aggregates(),
            "errors": self.errors,
            "significance": [asdict(s) for s in self.significance],
        }
        if self.plan is not None:
            doc["plan"] = self.plan
        if self.timings is not None:
            doc["runtime_ms_per_query"] = self.timings
        return doc


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else repr(float(x))


def _summary(x: np.ndarray, excluded: int) -> dict:
    n = int(x.size)
    if n == 0:
        return {"mean": None, "ci95": None, "n": 0, "excluded": excluded}
    mean = float(x.mean())
    half = float(Z95 * x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return {"mean": mean, "ci95": half, "n": n, "excluded": excluded}


def _plan_dict(plan: ExperimentPlan) -> dict:
    return {
        "data": plan.data,
        "loader": plan.loader,
        "methods": list(plan.methods),
        "sweep": plan.sweep,
        "grid": [_grid_label(v) for v in plan.grid],
        "settings": asdict(plan.base),
        "seed": plan.seed,
    }


def run_experiment(plan: ExperimentPlan) -> ExperimentReport:
    """Rank and evaluate every query at every grid point.

    Rankers see the (optionally noised) intent distribution; evaluation
    always uses the true one. Results are reduced in query-id order, so the
    report does not depend on the number of workers.
    """
    instances = load_dataset(plan)
    jobs = [(inst, plan) for inst in instances]
    workers = 1 if plan.timing else plan.workers
    if workers > 1 and len(jobs) > 1:
        light = replace(plan, instances=()) if plan.instances is not None else plan
        jobs = [(inst, light) for inst, _ in jobs]
        with ProcessPoolExecutor(max_workers=min(workers, os.cpu_count() or 1)) as pool:
            results = list(pool.map(_query_rows, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_query_rows(j) for j in jobs]
    rows: list[Row] = []
    errors: list[dict] = []
    acc: dict[tuple[str, str], list[float]] = {}
    for r, e, t in results:
        rows.extend(r)
        errors.extend(e)
        for key, ms in t.items():
            acc.setdefault(key, []).append(ms)
    labels = tuple(label for label, _ in plan.grid_points())
    timings = None
    if plan.timing:
        timings = {
            m: {g: float(np.mean(acc[(m, g)])) for g in labels if (m, g) in acc} for m in plan.methods
        }
    return ExperimentReport(rows, tuple(plan.methods), labels, _plan_dict(plan), errors, timings)


def significance(
    report: ExperimentReport,
    method_a: str,
    method_b: str,
    metric: str = "vrisk",
    B: int = 100_000,
    seed: int = 0,
    grid: Optional[str] = None,
) -> SignificanceResult:
    """Paired tests of ``metric`` between two methods over shared queries."""
    if metric not in VALUE_COLUMNS:
        raise ValueError(f"unknown metric column {metric!r}")
    for m in (method_a, method_b):
        if m not in report.methods:
            raise ValueError(f"method {m!r} is not in the report")
    if grid is None:
        if len(report.grid) != 1:
            raise ValueError("report has several grid points; pick one")
        grid = report.grid[0]
    a = report.values(method_a, metric, grid)
    b = report.values(method_b, metric, grid)
    keys = sorted(k for k in a.keys() & b.keys() if a[k] is not None and b[k] is not None)
    d = [a[k] - b[k] for k in keys]
    return paired_test(method_a, method_b, metric, grid, d, B, seed)


def significance_all(
    report: ExperimentReport,
    pairs: Sequence[tuple[str, str]],
    metrics: Sequence[str] = ("vrisk", "v_std"),
    B: int = 100_000,
    alpha: float = 0.05,
    seed: int = 0,
) -> list[SignificanceResult]:
    """Every pair, metric and grid point, Holm-adjusted as one family."""
    results = []
    for i, (a, b) in enumerate(pairs):
        for metric in metrics:
            for g in report.grid:
                results.append(significance(report, a, b, metric, B, seed + i, g))
    return apply_holm(results, alpha)


def measure_runtime(
    plan: ExperimentPlan,
    warmup: int = 1,
    repeats: int = 5,
    groups: int = 5,
) -> dict[str, float]:
    """Median-of-means wall-clock ms per query and method, single worker.

    Each repeat times every query once per method. The per-query mean of a
    repeat is one sample; samples are split into ``groups`` whose means are
    combined by their median. Warmup passes are discarded.
    """
    if warmup < 1:
        raise ValueError("at least one warmup pass is required")
    instances = load_dataset(plan)
    s = plan.base
    spec = s.spec
    cfg = DiversifierConfig(lam=s.lam, tie_break=s.tie_break, seed=plan.seed)
    prepared = [(inst, compute_targets(inst, spec, s.k, s.target_level)) for inst in instances]
    out = {}
    for method in plan.methods:
        samples = []
        for rep in range(warmup + repeats):
            t0 = time.perf_counter()
            for inst, targets in prepared:
                _rank(method, inst, s, targets, cfg, plan.exact_budget, {})
            if rep >= warmup:
                samples.append((time.perf_counter() - t0) * 1000.0 / max(1, len(prepared)))
        chunks = np.array_split(np.array(samples), min(groups, len(samples)))
        out[method] = float(np.median([c.mean() for c in chunks]))
    return out


def emit_report(report: ExperimentReport, out_dir, formats: Sequence[str] = ("csv", "json")) -> list[Path]:
    """Write ``report.csv`` and ``summary.json`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        p = out / "report.csv"
        p.write_text(report.to_csv(), encoding="utf-8")
        written.append(p)
    if "json" in formats:
        p = out / "summary.json"
        p.write_text(json.dumps(report.summary(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written.append(p)
    return written


def summary_table(report: ExperimentReport) -> str:
    """Plain-text table of mean normalized values per method and grid point."""
    agg = report.aggregates()
    head = f"{'grid':>10} {'method':>10} {'dRisk':>8} {'dStd':>8} {'dIW':>8} {'VRisk':>10} {'excl':>5}"
    lines = [head, "-" * len(head)]
    for g in report.grid:
        for m in report.methods:
            st = agg.get(m, {}).get(g)
            if st is None:
                continue
            lines.append(
                f"{g:>10} {m:>10} {_cell(st['delta_risk']['mean'])} {_cell(st['delta_std']['mean'])} "
                f"{_cell(st['delta_iw']['mean'])} {_cell(st['vrisk']['mean'], 10, 4)} {st['delta_risk']['excluded']:>5}"
            )
    return "\n".join(lines)


def _cell(x, width=8, prec=1) -> str:
    return f"{'-':>{width}}" if x is None else f"{x:>{width}.{prec}f}"
