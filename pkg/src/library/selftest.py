"""
Invariant suite behind `main.py selftest`
Every check is seeded and untimed, so two runs write the same CSV apart from the header line
"""
import hashlib
import logging
from pathlib import Path
from typing import Callable, NamedTuple
import numpy as np
import pandas as pd
from .calculus import operator_abs_bound_check, partition_objective, rk_oracle, rk_partition, rk_two_term, \
    is_operator_fragment
from .compactness import am_compact_probe, c_compact_net, fragment_band_probe, fragment_images, halving_chain, \
    lateral_vanishing_check, net_covers
from .interval_model import IntervalFunction, interval_fragments
from .lattice import CellGrid, FragmentMask, StepElement, enumerate_fragments, freudenthal_approx, is_fragment, \
    is_fragment_by_parts, refine_decompositions
from .narrow import exhaustive_min_defect, narrow_split
from .operators import RK_MODES, BandMultiplication, NemytskiiOperator, NormFunctional, UrysohnOperator, \
    check_orthogonal_additivity
from .utils.config import settings
from .utils.errors import GridTooCoarseError, PropertyViolationError
from .utils.kernels import NemytskiiFunction, UrysohnKernel
from .utils.rounding import RoundingProblem, round_weights

selftest_logger = logging.getLogger("selftest")
selftest_logger.setLevel(logging.DEBUG)
selftest_logger.addHandler(logging.NullHandler())

TOLERANCE = 1e-9
SINGULAR_KERNEL = "Piecewise((0, Eq(r, 0)), (r**(-2), True))"


class SelftestResult(NamedTuple):
    csv_path: Path
    digest: str
    frame: pd.DataFrame
    failures: list[str]


class _Rows:
    def __init__(self, seed: int):
        self.seed = seed
        self.rows: list[dict] = []

    def add(self, metric: str, value: float, n_cells: int = 0, epsilon: float | None = None):
        self.rows.append({"experiment": "selftest", "n_cells": n_cells,
                          "epsilon": np.nan if epsilon is None else float(epsilon), "metric": metric,
                          "value": float(value), "seed": self.seed, "runtime_ms": 0})


def _require(condition: bool, message: str):
    if not condition:
        raise PropertyViolationError(message)


def _random_element(rng: np.random.Generator, grid: CellGrid, zero_share: float = 0.25) -> StepElement:
    return StepElement(grid, rng.normal(size=grid.n_cells) * (rng.random(grid.n_cells) >= zero_share))


def _random_partition(rng: np.random.Generator, x: StepElement, max_parts: int = 4) -> list[FragmentMask]:
    labels = rng.integers(0, max_parts, size=x.grid.n_cells)
    return [FragmentMask.from_cells(x, np.flatnonzero(labels == k)) for k in range(max_parts)]


# region checks

def _check_additivity(rows: _Rows, rng: np.random.Generator):
    grid = CellGrid.uniform(8)
    operators = [UrysohnOperator(UrysohnKernel("r*(1 + s*t)"), grid, CellGrid.uniform(4)),
                 NemytskiiOperator(NemytskiiFunction("r**3 - r"), grid),
                 NormFunctional(grid),
                 BandMultiplication.from_expression(grid, "1 - 2*t")]
    for op in operators:
        report = check_orthogonal_additivity(op, 1000, rows.seed)
        rows.add(f"oa_max_violation_{op.kind}", report.max_violation, grid.n_cells)
        _require(report.passed, f"{op.kind} is not orthogonally additive: {report.max_violation:.3g}")


def _check_calculus(rows: _Rows, rng: np.random.Generator):
    gap, two_term_excess = 0.0, -np.inf
    for _ in range(200):
        grid = CellGrid.uniform(int(rng.integers(2, 7)))
        first = NemytskiiOperator(NemytskiiFunction("r*sin(3*t) + r**2"), grid)
        second = BandMultiplication(grid, rng.normal(size=grid.n_cells))
        x = _random_element(rng, grid)
        for mode in RK_MODES:
            gap = max(gap, float(np.max(np.abs(rk_partition(first, second, x, mode)
                                               - rk_oracle(first, second, x, mode)))))
        two_term_excess = max(two_term_excess, float(np.max(rk_two_term(first, second, x, "sup")
                                                            - rk_partition(first, second, x, "sup"))))
    rows.add("rk_max_oracle_gap", gap)
    rows.add("rk_two_term_excess", two_term_excess)
    _require(gap <= TOLERANCE, f"rk_partition and rk_oracle differ by {gap:.3g}")
    _require(two_term_excess <= TOLERANCE, "two-term value exceeds the partition value")

    violations = 0
    grid = CellGrid.uniform(6)
    first = UrysohnOperator(UrysohnKernel("r*(s - t) + r**2"), grid, CellGrid.uniform(3))
    second = UrysohnOperator(UrysohnKernel("r*cos(s + t)"), grid, CellGrid.uniform(3))
    for _ in range(500):
        x = _random_element(rng, grid)
        parts_a, parts_b = _random_partition(rng, x), _random_partition(rng, x)
        finer = [mask for row in refine_decompositions(x, parts_a, parts_b) for mask in row]
        for mode in RK_MODES:
            va = partition_objective(first, second, x, parts_a, mode).objective
            vb = partition_objective(first, second, x, parts_b, mode).objective
            vf = partition_objective(first, second, x, finer, mode).objective
            if mode == "inf":
                violations += int(np.any(vf > np.minimum(va, vb) + TOLERANCE))
            else:
                violations += int(np.any(vf < np.maximum(va, vb) - TOLERANCE))
    rows.add("refinement_violations", violations)
    _require(violations == 0, f"refinement monotonicity failed {violations} times")

    samples = [_random_element(rng, grid) for _ in range(500)]
    bound = operator_abs_bound_check(first, samples)
    rows.add("abs_bound_violations", bound.violations)
    _require(bound.passed, f"|Tx| <= |T|(x) failed on {bound.violations} samples")


def _check_rounding(rows: _Rows, rng: np.random.Generator):
    worst_brute, worst_greedy, gap = 0.0, 0.0, np.inf
    for trial in range(1000):
        n, dim = int(rng.integers(1, 21)), int(rng.integers(1, 6))
        problem = RoundingProblem(rng.normal(size=(n, dim)), rng.random(n), ("sup", "l1", "l2")[trial % 3])
        brute = round_weights(problem, "brute", rows.seed)
        greedy = round_weights(problem, "greedy_nullspace", rows.seed)
        worst_brute = max(worst_brute, brute.residual_norm / problem.bound())
        worst_greedy = max(worst_greedy, greedy.residual_norm / problem.bound())
        gap = min(gap, greedy.residual_norm - brute.residual_norm)
    rows.add("rounding_brute_bound_ratio", worst_brute)
    rows.add("rounding_greedy_bound_ratio", worst_greedy)
    rows.add("rounding_greedy_minus_brute_min", gap)
    _require(gap >= -1e-12, "greedy rounding beat the brute-force minimum")


def _check_narrow_exact(rows: _Rows, rng: np.random.Generator):
    for n in range(2, 17, 2):
        grid = CellGrid.uniform(n)
        split = narrow_split(NormFunctional(grid), StepElement.constant(grid, 1.0), 1.5 / n, "brute", rows.seed)
        rows.add("norm_functional_defect", split.defect, n, 1.5 / n)
        _require(split.defect == 0.0, f"defect {split.defect!r} on {n} cells")

    grid = CellGrid.uniform(3)
    op, x = NormFunctional(grid), StepElement.constant(grid, 1.0)
    best, _ = exhaustive_min_defect(op, x)
    rows.add("norm_functional_min_defect", best, 3)
    _require(abs(best - 1 / 3) <= 1e-12, f"minimum defect {best!r} on 3 cells")
    split = narrow_split(op, x, 0.4, "brute", rows.seed)
    rows.add("norm_functional_defect", split.defect, 3, 0.4)
    try:
        narrow_split(op, x, 0.3, "brute", rows.seed)
    except GridTooCoarseError:
        rows.add("grid_too_coarse", 1.0, 3, 0.3)
    else:
        raise PropertyViolationError("epsilon 0.3 on 3 cells did not report a coarse grid")


def _check_narrow_convergence(rows: _Rows, rng: np.random.Generator):
    kernel = UrysohnKernel("r*(1 + s*t)")
    defects = []
    for n in (8, 16, 32, 64, 128):
        grid = CellGrid.uniform(n)
        op, x = UrysohnOperator(kernel, grid, CellGrid.uniform(4)), StepElement.constant(grid, 1.0)
        epsilon = 1.01 * op.effective_dim * float(np.max(op.range.norm(op.cell_images(x))))
        split = narrow_split(op, x, epsilon, "sequential", rows.seed)
        defects.append(split.defect)
        rows.add("urysohn_defect", split.defect, n, epsilon)
        _require(split.defect < epsilon, f"defect {split.defect:.3g} not below {epsilon:.3g} on {n} cells")
    decreasing = all(b < a for a, b in zip(defects, defects[1:]))
    rows.add("urysohn_defect_decreasing", float(decreasing))
    _require(decreasing, f"defects {defects} do not fall strictly with the grid size")
    _require(defects[-1] < 0.05 * op.norm_of(x), "final defect is not below 5% of |Tx|")


def _check_nets(rows: _Rows, rng: np.random.Generator):
    grid = CellGrid.uniform(8)
    x = StepElement.constant(grid, 1.0)
    for op in (NormFunctional(grid), UrysohnOperator(UrysohnKernel("r**2*(1 + s)"), grid, CellGrid.uniform(4))):
        _, images = fragment_images(op, x)
        sizes = []
        for epsilon in (0.05, 0.1, 0.2, 0.3, 0.4):
            net = c_compact_net(op, x, epsilon)
            covered = net_covers(net, images, op.range.metric)
            rows.add(f"net_size_{op.kind}", net.size, 8, epsilon)
            _require(covered == 1.0, f"exhaustive net of {op.kind} covers only {covered:.3f}")
            sizes.append(net.size)
        _require(all(b <= a for a, b in zip(sizes, sizes[1:])), f"net size of {op.kind} grows with epsilon")

    single = CellGrid.uniform(1)
    singular = NemytskiiOperator(NemytskiiFunction(SINGULAR_KERNEL), single)
    _, images = fragment_images(singular, StepElement.constant(single, 1.0))
    rows.add("singular_fragment_images", images.shape[0], 1)
    _require(sorted(images[:, 0].tolist()) == [0.0, 1.0], "fragment images of x = 1 are not {0, 1}")
    probe = am_compact_probe(singular, (StepElement.zeros(single), StepElement.constant(single, 1.0)), 0.5,
                             k=256, seed=rows.seed)
    rows.add("singular_unbounded", float(probe.unbounded), 1)
    _require(probe.unbounded, "order interval images of 1/r**2 were not flagged unbounded")

    chain = lateral_vanishing_check(NormFunctional(grid), x, halving_chain, steps=3, delta=0.2)
    rows.add("norm_functional_chain_final", chain.norms[-1], 8)
    _require(np.allclose(chain.norms, chain.measures, rtol=0, atol=1e-15), "chain norms differ from measures")
    _require(chain.vanished, "chain images did not drop below delta")


def _check_band_probe(rows: _Rows, rng: np.random.Generator):
    grid = CellGrid.uniform(8)
    op = UrysohnOperator(UrysohnKernel("r*(1 + s*t)"), grid, CellGrid.uniform(4))
    fragment = op.restrict_input(0b00001111)
    samples = [_random_element(rng, grid) for _ in range(100)]
    _require(is_operator_fragment(fragment, op, samples), "input restriction is not an operator fragment")
    _require(not is_operator_fragment(0.5 * op, op, samples), "T/2 was taken for a fragment of T")
    report = fragment_band_probe(op, fragment, StepElement.constant(grid, 1.0), 0.1, samples=samples)
    rows.add("band_probe_operator_net", report.operator_net_size, 8, 0.1)
    rows.add("band_probe_fragment_net", report.fragment_net_size, 8, 0.1)
    rows.add("band_probe_max_overlap", report.max_overlap, 8)


def _check_freudenthal(rows: _Rows, rng: np.random.Generator):
    worst = 0.0
    for _ in range(100):
        grid = CellGrid.uniform(int(rng.integers(1, 9)))
        v = StepElement(grid, rng.random(grid.n_cells) * (rng.random(grid.n_cells) >= 0.2))
        u = StepElement(grid, v.values * rng.random(grid.n_cells) * 3)
        n = int(rng.integers(1, 65))
        s_n, s_next = freudenthal_approx(v, u, n), freudenthal_approx(v, u, n + 1)
        gap = u.values - s_n.values
        _require(bool(np.all(gap >= 0)) and bool(np.all(gap <= v.values / n + 1e-12)), "0 <= u - s_n <= v/n failed")
        _require(bool(np.all(s_next.values >= s_n.values)), "s_n is not monotone in n")
        worst = max(worst, float(np.max(gap * n - v.values, initial=-np.inf)))
    rows.add("freudenthal_worst_scaled_gap", worst)


def _check_lattice(rows: _Rows, rng: np.random.Generator):
    count = 0
    for _ in range(20):
        grid = CellGrid.uniform(int(rng.integers(1, 9)))
        x = _random_element(rng, grid)
        for mask in enumerate_fragments(x):
            y = mask.element
            _require(is_fragment(y, x) and is_fragment_by_parts(y, x), "enumerated mask is not a fragment")
            count += 1
    rows.add("fragments_checked", count)


def _check_interval_model(rows: _Rows, rng: np.random.Generator):
    for m in range(1, 5):
        points = np.linspace(0.0, 1.0, 2 * m + 1)
        values = np.zeros(points.size)
        values[1::2] = rng.random(m) + 0.1
        model = interval_fragments(IntervalFunction(points, values))
        selectors = model.all_selectors()
        functions = [s.function for s in selectors]
        for i, g in enumerate(functions):
            _require(g.is_disjoint(model.base - g), "selected function is not a fragment")
            _require(all(not (g == h) for h in functions[i + 1:]), "selection is not injective")
        for _ in range(50):
            family = [selectors[k] for k in np.flatnonzero(rng.random(len(selectors)) < 0.3)]
            sup, inf = model.family_sup(family), model.family_inf(family)
            _require(all(s.precedes(sup) for s in family), "family_sup is not an upper bound")
            _require(all(sup.precedes(u) for u in selectors if all(s.precedes(u) for s in family)),
                     "family_sup is not the least upper bound")
            _require(all(inf.precedes(s) for s in family), "family_inf is not a lower bound")
            _require(all(l.precedes(inf) for l in selectors if all(l.precedes(s) for s in family)),
                     "family_inf is not the greatest lower bound")
        rows.add("interval_selectors", len(selectors), m)


CHECKS: list[tuple[str, Callable]] = [
    ("lattice", _check_lattice),
    ("freudenthal", _check_freudenthal),
    ("interval_model", _check_interval_model),
    ("additivity", _check_additivity),
    ("calculus", _check_calculus),
    ("rounding", _check_rounding),
    ("narrow_exact", _check_narrow_exact),
    ("narrow_convergence", _check_narrow_convergence),
    ("nets", _check_nets),
    ("band_probe", _check_band_probe),
]

# endregion


def csv_digest(path: str | Path) -> str:
    """sha256 of the CSV without its first (timestamp) line"""
    lines = Path(path).read_bytes().split(b"\n", 1)
    return hashlib.sha256(lines[1] if len(lines) > 1 else b"").hexdigest()


def run_selftest(seed: int | None = None, result_dir: str | Path | None = None) -> SelftestResult:
    """
    Runs every check, writes selftest.csv and returns its digest
    A failing check is logged and recorded, the remaining checks still run
    :param seed: master seed, defaults to the configured seed
    :param result_dir: output directory, defaults to the configured RESULT_DIR
    :returns: SelftestResult
    """
    seed = settings.default_seed if seed is None else seed
    result_dir = Path(settings.result_dir if result_dir is None else result_dir)
    result_dir.mkdir(parents=True, exist_ok=True)
    rows = _Rows(seed)
    failures = []
    for index, (name, check) in enumerate(CHECKS):
        selftest_logger.info(f"Selftest check {name}")
        try:
            check(rows, np.random.default_rng([seed, index]))
        except AssertionError as e:
            selftest_logger.error(f"Exception/Error {e.__class__.__name__} occured during selftest {name} "
                                  f"| message: {str(e)}")
            failures.append(f"{name}: {e}")
            rows.add(f"failed_{name}", 1.0)

    frame = pd.DataFrame(rows.rows)
    csv_path = result_dir / "selftest.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# generated {pd.Timestamp.now('UTC').isoformat()}\n")
        frame.to_csv(f, index=False, lineterminator="\n")
    digest = csv_digest(csv_path)
    selftest_logger.info(f"Selftest finished with {len(failures)} failures, digest {digest}")
    return SelftestResult(csv_path, digest, frame, failures)
