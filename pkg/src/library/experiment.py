import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import NamedTuple
import numpy as np
import pandas as pd
from pydantic import BaseModel, Extra, ValidationError, validator
from .calculus import operator_abs_bound_check, rk_oracle, rk_partition
from .compactness import c_compact_net
from .lattice import CellGrid, StepElement, bool_to_bits
from .narrow import exhaustive_min_defect, narrow_split
from .operators import RK_MODES, OAOperator, check_orthogonal_additivity, operator_from_spec
from .utils.config import settings
from .utils.errors import GridTooCoarseError, NumericError, PropertyViolationError, SpecError
from .utils.rounding import STRATEGIES, RoundingProblem, round_weights
from .utils.serialization import dump_json, element_from_spec, load_json
from .utils.sweep import SweepGrid

experiment_logger = logging.getLogger("experiment")
experiment_logger.setLevel(logging.DEBUG)
experiment_logger.addHandler(logging.NullHandler())

PIPELINES = ("oa-check", "rk-oracle", "c-compact", "narrow", "rounding-bench")
CSV_COLUMNS = ["experiment", "n_cells", "epsilon", "metric", "value", "seed", "runtime_ms"]
ORACLE_TOLERANCE = 1e-9


class ExperimentSpec(BaseModel):
    """
    Experiment file: which pipelines to run for which operator and element over a sweep of grids
    """
    name: str
    pipelines: list[str]
    operator: dict
    element: dict = {"constant": 1.0}
    epsilons: list[float] = [0.1]
    grid_refinements: list[int]
    strategy: str = "greedy_nullspace"
    seed: int = 0
    trials: int = 100
    rounding_dim: int = 3
    allow_coarse: bool = False
    workers: int = 1
    output: str | None = None

    class Config:
        extra = Extra.forbid

    @validator("pipelines")
    def _known_pipelines(cls, v):
        if not v:
            raise ValueError("at least one pipeline is required")
        unknown = [p for p in v if p not in PIPELINES]
        if unknown:
            raise ValueError(f"unknown pipelines {unknown}, expected some of {list(PIPELINES)}")
        return v

    @validator("epsilons")
    def _positive_epsilons(cls, v):
        if not v:
            raise ValueError("at least one epsilon is required")
        if any(e <= 0 for e in v):
            raise ValueError("epsilons must be positive")
        return v

    @validator("grid_refinements")
    def _ascending_refinements(cls, v):
        if not v:
            raise ValueError("the sweep needs at least one grid")
        if any(n < 1 for n in v):
            raise ValueError("grids need at least one cell")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("grid refinements must be strictly ascending")
        return v

    @validator("strategy")
    def _known_strategy(cls, v):
        if v not in STRATEGIES:
            raise ValueError(f"unknown strategy {v!r}, expected one of {list(STRATEGIES)}")
        return v

    @validator("trials", "rounding_dim", "workers")
    def _positive_count(cls, v):
        if v < 1:
            raise ValueError("must be at least 1")
        return v


def load_experiment_spec(path: str | Path) -> ExperimentSpec:
    """
    Reads and validates an experiment file, an operator given as a path is read relative to the file
    :param path: JSON experiment spec
    :returns: ExperimentSpec
    """
    path = Path(path)
    document = load_json(path)
    if not isinstance(document, dict):
        raise SpecError("Experiment spec must be a JSON object")
    if isinstance(document.get("operator"), str):
        operator_path = path.parent / document["operator"]
        if not operator_path.is_file():
            raise SpecError(f"Operator file {document['operator']!r} does not exist", field="operator")
        document["operator"] = load_json(operator_path)
    try:
        return ExperimentSpec.parse_obj(document)
    except ValidationError as e:
        first = e.errors()[0]
        raise SpecError(first["msg"], field=".".join(str(p) for p in first["loc"]))


class ResultCollector:
    """
    Gathers result rows from concurrent pipeline tasks, one writer at a time
    Rows are ordered by task key on output, so the CSV does not depend on completion order
    """

    def __init__(self, logger: logging.Logger):
        self._lock = threading.Lock()
        self._rows: dict[int, list[dict]] = {}
        self._logger: logging.Logger = logger

    @staticmethod
    def _serialized(func):
        """
        Holds the collector lock for the decorated call, partial writes are dropped on error
        """

        def execute(self, key: int, *args, **kwargs):
            with self._lock:
                self._logger.debug(f"Collector write begin for task {key}")
                try:
                    res = func(self, key, *args, **kwargs)
                except Exception:
                    self._rows.pop(key, None)
                    self._logger.debug(f"Collector write rollback for task {key}")
                    raise
                self._logger.debug(f"Collector write commit for task {key}")
            return res
        return execute

    @_serialized
    def add_rows(self, key: int, rows: list[dict]):
        self._rows.setdefault(key, []).extend(rows)

    def to_frame(self) -> pd.DataFrame:
        rows = [row for key in sorted(self._rows) for row in self._rows[key]]
        return pd.DataFrame(rows, columns=CSV_COLUMNS)


class RunResult(NamedTuple):
    csv_path: Path
    json_path: Path
    frame: pd.DataFrame


# region pipelines

class _Task:
    """One (grid, pipeline) cell of the sweep"""

    def __init__(self, spec: ExperimentSpec, n_cells: int, pipeline: str, timing: bool):
        self.spec = spec
        self.n_cells = n_cells
        self.pipeline = pipeline
        self.timing = timing
        self.grid = CellGrid.uniform(n_cells)
        self.operator: OAOperator = operator_from_spec(spec.operator, self.grid)
        self.element: StepElement = element_from_spec(spec.element, self.grid)
        self.rows: list[dict] = []
        self._started = time.perf_counter()

    def row(self, metric: str, value: float, epsilon: float | None = None):
        runtime = int(round((time.perf_counter() - self._started) * 1000)) if self.timing else 0
        self.rows.append({"experiment": self.spec.name, "n_cells": self.n_cells,
                          "epsilon": np.nan if epsilon is None else float(epsilon), "metric": metric,
                          "value": float(value), "seed": self.spec.seed, "runtime_ms": runtime})
        self._started = time.perf_counter()


def _oa_check(task: _Task):
    report = check_orthogonal_additivity(task.operator, task.spec.trials, task.spec.seed)
    task.row("max_violation", report.max_violation)
    task.row("zero_maps_to_zero", float(report.zero_maps_to_zero))
    if not report.passed:
        raise PropertyViolationError(f"orthogonal additivity violated by {report.max_violation:.3g} "
                                     f"on {task.n_cells} cells")


def _random_small_element(task: _Task, rng: np.random.Generator) -> StepElement:
    """x restricted to at most ORACLE_CAP random support cells"""
    support = task.element.support_indices
    keep = rng.permutation(support)[:min(support.size, settings.oracle_cap)]
    bits = bool_to_bits(np.isin(np.arange(task.n_cells), keep))
    return task.element.restrict(bits)


def _rk_oracle(task: _Task):
    rng = np.random.default_rng(task.spec.seed)
    gap = 0.0
    samples = [_random_small_element(task, rng) for _ in range(task.spec.trials)]
    for x in samples:
        for mode in RK_MODES:
            gap = max(gap, float(np.max(np.abs(rk_partition(task.operator, None, x, mode)
                                               - rk_oracle(task.operator, None, x, mode)), initial=0.0)))
    bound = operator_abs_bound_check(task.operator, samples)
    task.row("max_oracle_gap", gap)
    task.row("abs_bound_violations", bound.violations)
    if gap > ORACLE_TOLERANCE or not bound.passed:
        raise PropertyViolationError(f"calculus check failed on {task.n_cells} cells: oracle gap {gap:.3g}, "
                                     f"{bound.violations} bound violations")


def _c_compact(task: _Task):
    mode = "exhaustive" if task.element.support_size <= settings.exact_split_cap else "sampled"
    for epsilon in task.spec.epsilons:
        net = c_compact_net(task.operator, task.element, epsilon, mode=mode, seed=task.spec.seed)
        task.row("net_size", net.size, epsilon)
        task.row("covered_fraction", net.covered_fraction, epsilon)


def _narrow(task: _Task):
    for epsilon in task.spec.epsilons:
        try:
            split = narrow_split(task.operator, task.element, epsilon, task.spec.strategy, task.spec.seed)
        except GridTooCoarseError as e:
            if not task.spec.allow_coarse:
                raise
            task.row("grid_too_coarse", e.min_norm, epsilon)
            continue
        task.row("defect", split.defect, epsilon)
        task.row("parts", split.parts, epsilon)
    if task.element.support_size <= settings.exact_split_cap:
        task.row("min_defect", exhaustive_min_defect(task.operator, task.element)[0])


def _rounding_bench(task: _Task):
    rng = np.random.default_rng(task.spec.seed)
    n = min(task.n_cells, settings.brute_rounding_cap)
    worst_brute, worst_greedy, gap = 0.0, 0.0, np.inf
    for norm_kind in ("sup", "l1", "l2"):
        for _ in range(task.spec.trials):
            problem = RoundingProblem(rng.normal(size=(n, task.spec.rounding_dim)), rng.random(n), norm_kind)
            bound = problem.bound()
            brute = round_weights(problem, "brute", task.spec.seed)
            greedy = round_weights(problem, "greedy_nullspace", task.spec.seed)
            worst_brute = max(worst_brute, brute.residual_norm / bound)
            worst_greedy = max(worst_greedy, greedy.residual_norm / bound)
            gap = min(gap, greedy.residual_norm - brute.residual_norm)
    task.row("brute_bound_ratio", worst_brute)
    task.row("greedy_bound_ratio", worst_greedy)
    task.row("greedy_minus_brute_min", gap)
    if gap < -1e-12:
        raise PropertyViolationError(f"greedy rounding beat the brute-force minimum by {-gap:.3g}")


_PIPELINE_FUNCS = {"oa-check": _oa_check, "rk-oracle": _rk_oracle, "c-compact": _c_compact,
                   "narrow": _narrow, "rounding-bench": _rounding_bench}

# endregion


def _write_csv(frame: pd.DataFrame, path: Path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# generated {pd.Timestamp.now('UTC').isoformat()}\n")
        frame.to_csv(f, index=False, lineterminator="\n")


def _summary(spec: ExperimentSpec, frame: pd.DataFrame, failure: BaseException | None) -> dict:
    metrics = {}
    for metric, group in frame.groupby("metric", sort=True):
        values = group["value"].to_numpy(dtype=float)
        metrics[metric] = {"min": float(np.min(values)), "max": float(np.max(values)), "last": float(values[-1])}
    return {"experiment": spec.name, "pipelines": list(spec.pipelines), "grid_refinements": list(spec.grid_refinements),
            "epsilons": list(spec.epsilons), "seed": spec.seed, "rows": int(frame.shape[0]), "metrics": metrics,
            "status": "ok" if failure is None else failure.__class__.__name__}


def run(spec: ExperimentSpec, timing: bool = False, result_dir: str | Path | None = None) -> RunResult:
    """
    Runs every pipeline on every grid of the sweep and writes <output>.csv and <output>.json
    Outputs are written before a failure is re-raised; the first failure in sweep order wins
    :param spec: validated experiment
    :param timing: record runtimes, 0 is written otherwise so reruns are identical
    :param result_dir: output directory, defaults to the configured RESULT_DIR
    :returns: RunResult
    """
    result_dir = Path(settings.result_dir if result_dir is None else result_dir)
    result_dir.mkdir(parents=True, exist_ok=True)
    collector = ResultCollector(experiment_logger)
    failures: dict[int, BaseException] = {}

    def execute(key: int, params: dict):
        task = _Task(spec, params["n_cells"], params["pipeline"], timing)
        experiment_logger.info(f"{spec.name}: {task.pipeline} on {task.n_cells} cells")
        try:
            _PIPELINE_FUNCS[task.pipeline](task)
        except (AssertionError, GridTooCoarseError, NumericError) as e:
            experiment_logger.error(f"Exception/Error {e.__class__.__name__} occured during {task.pipeline} "
                                    f"on {task.n_cells} cells | message: {str(e)}")
            failures[key] = e
        finally:
            collector.add_rows(key, task.rows)

    sweep = SweepGrid({"pipeline": list(spec.pipelines), "n_cells": list(spec.grid_refinements)})
    with ThreadPoolExecutor(max_workers=spec.workers) as pool:
        futures = [pool.submit(execute, key, params) for key, params in enumerate(sweep)]
        for future in futures:
            future.result()

    frame = collector.to_frame()
    failure = failures[min(failures)] if failures else None
    stem = spec.output or spec.name
    csv_path, json_path = result_dir / f"{stem}.csv", result_dir / f"{stem}.json"
    _write_csv(frame, csv_path)
    dump_json(_summary(spec, frame, failure), json_path)
    experiment_logger.info(f"{spec.name}: {frame.shape[0]} rows written to {csv_path}")
    if failure is not None:
        raise failure
    return RunResult(csv_path, json_path, frame)


# region report

def _trend(values: list[float]) -> str:
    decreasing = all(b <= a for a, b in zip(values, values[1:]))
    return "yes" if decreasing and (len(values) == 1 or values[-1] < values[0] or values[-1] == 0) else "no"


def report(csv_path: str | Path, plot: str | Path | None = None) -> str:
    """
    Text summary of a results CSV: min and median of every metric per grid size, grouped by experiment
    :param csv_path: CSV written by run()
    :param plot: optional PNG path for a plot of the min defect against the grid size
    :returns: summary text
    """
    csv_path = Path(csv_path)
    if not csv_path.is_file():
        raise SpecError(f"Results file {str(csv_path)!r} does not exist")
    frame = pd.read_csv(csv_path, comment="#")
    missing = [c for c in CSV_COLUMNS if c not in frame.columns]
    if missing:
        raise SpecError(f"Results file misses columns {missing}")

    lines = []
    for experiment, group in frame.groupby("experiment", sort=True):
        lines.append(f"experiment {experiment}")
        for metric, rows in group.groupby("metric", sort=True):
            stats = rows.groupby("n_cells", sort=True)["value"].agg(["min", "median"])
            for n_cells, stat in stats.iterrows():
                lines.append(f"  {metric:<24} n_cells={int(n_cells):<6} min={stat['min']:.6g} "
                             f"median={stat['median']:.6g}")
            if metric == "defect":
                lines.append(f"  defect → 0 trend: {_trend(stats['min'].tolist())}")
    text = "\n".join(lines)

    if plot is not None:
        _plot_defects(frame, Path(plot))
    return text


def _plot_defects(frame: pd.DataFrame, path: Path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 5))
    defects = frame[frame["metric"] == "defect"]
    for experiment, group in defects.groupby("experiment", sort=True):
        stats = group.groupby("n_cells", sort=True)["value"].min()
        ax.plot(stats.index, stats.values, marker="o", label=str(experiment))
    ax.set_xscale("log", base=2)
    ax.set_yscale("symlog", linthresh=1e-12)
    ax.set_xlabel("n_cells")
    ax.set_ylabel("min defect")
    ax.set_title("Narrow split defect")
    if not defects.empty:
        ax.legend()
    fig.savefig(path)
    plt.close(fig)
    experiment_logger.info(f"Plot saved to {path}")

# endregion
