import logging
from dataclasses import dataclass, field
from typing import Iterator
import numpy as np
from .lattice import FragmentMask, StepElement, fragment_indicators, is_decomposition
from .operators import RK_MODES, LatticeOperator, OAOperator, ZeroOperator, combine_cell_images
from .utils.config import settings
from .utils.errors import ContractError, GridMismatchError, SupportTooLargeError

calculus_logger = logging.getLogger("calculus")
calculus_logger.setLevel(logging.DEBUG)
calculus_logger.addHandler(logging.NullHandler())

BOUND_TOLERANCE = 1e-9

# enumeration chunks for rk_two_term, 2**_LOW_BITS rows at a time
_LOW_BITS = 12


@dataclass(frozen=True)
class DecompositionValue:
    """
    Objective of one disjoint decomposition of x, e.g. sum_i Tx_i v Sx_i
    """
    element: StepElement
    partition: list[FragmentMask]
    objective: np.ndarray
    mode: str

    @property
    def n_parts(self) -> int:
        return len(self.partition)


def _check_pair(first: OAOperator, second: OAOperator, x: StepElement):
    if first.input_grid != second.input_grid:
        raise GridMismatchError("Operators live on different input grids")
    if first.range != second.range:
        raise ContractError(f"Operators have different ranges: {first.range!r} vs {second.range!r}")
    if x.grid != first.input_grid:
        raise GridMismatchError(f"Element grid {x.grid!r} does not match the operators")


def _or_zero(first: OAOperator, second: OAOperator | None) -> OAOperator:
    return ZeroOperator(first.input_grid, first.range) if second is None else second


def lattice_operator(first: OAOperator, second: OAOperator | None = None, mode: str = "abs") -> LatticeOperator:
    """
    Assembled operator of a Riesz-Kantorovich quantity
    lattice_operator(T) is |T|, lattice_operator(T, mode="plus") is T+, lattice_operator(T, S, "sup") is T v S
    """
    return LatticeOperator(first, _or_zero(first, second), mode)


def partition_objective(first: OAOperator, second: OAOperator | None, x: StepElement,
                        partition: list[FragmentMask], mode: str) -> DecompositionValue:
    """
    Value of a single decomposition, every part evaluated directly
    :param first: T
    :param second: S, None for the zero operator
    :param x: element
    :param partition: disjoint decomposition of x
    :param mode: one of RK_MODES
    :returns: DecompositionValue
    """
    second = _or_zero(first, second)
    _check_pair(first, second, x)
    if not is_decomposition(x, partition):
        raise ContractError("partition is not a disjoint decomposition of x")
    objective = first.range.zero()
    for part in partition:
        y = part.element
        objective = objective + combine_cell_images(first.evaluate(y), second.evaluate(y), mode)
    return DecompositionValue(x, list(partition), objective, mode)


def rk_partition(first: OAOperator, second: OAOperator | None, x: StepElement, mode: str) -> np.ndarray:
    """
    Riesz-Kantorovich value at the finest decomposition, one part per support cell
    Refining never lowers the sup-type objectives nor raises the inf objective, so this is the optimum
    :param first: T
    :param second: S, None for the zero operator
    :param x: element
    :param mode: sup, inf, abs, plus or minus (the last three of T - S)
    :returns: range vector
    """
    second = _or_zero(first, second)
    _check_pair(first, second, x)
    if mode not in RK_MODES:
        raise ContractError(f"Unknown mode {mode!r}, expected one of {RK_MODES}")
    if x.is_zero:
        return first.range.zero()
    return combine_cell_images(first.cell_images(x), second.cell_images(x), mode).sum(axis=0)


def rk_two_term(first: OAOperator, second: OAOperator | None, x: StepElement, mode: str,
                cap: int | None = None) -> np.ndarray:
    """
    sup (or inf) of Ty + S(x - y) over every fragment y of x, componentwise
    :param first: T
    :param second: S, None for the zero operator
    :param x: element
    :param mode: sup or inf
    :param cap: largest support allowed, defaults to the configured exact split cap
    :returns: range vector
    """
    second = _or_zero(first, second)
    _check_pair(first, second, x)
    if mode not in ("sup", "inf"):
        raise ContractError(f"Two-term formula supports sup and inf, got {mode!r}")
    cap = settings.exact_split_cap if cap is None else cap
    if x.support_size > cap:
        raise SupportTooLargeError(x.support_size, cap, "two-term split")
    if x.is_zero:
        return first.range.zero()

    reduce = np.max if mode == "sup" else np.min
    a, b = first.cell_images(x), second.cell_images(x)
    # Ty + S(x - y) = S(x) + sum over cells of y of (a_c - b_c)
    base, diff = b.sum(axis=0), a - b
    k = diff.shape[0]
    low = min(k, _LOW_BITS)
    low_sums = fragment_indicators(low).astype(float) @ diff[:low]
    high_sums = fragment_indicators(k - low).astype(float) @ diff[low:]
    best = None
    for high in high_sums:
        chunk = reduce(low_sums + high, axis=0)
        best = chunk if best is None else reduce(np.stack([best, chunk]), axis=0)
    return base + best


# region oracle

def set_partitions(items: list) -> Iterator[list[list]]:
    """
    Every set partition of items exactly once, Bell(len(items)) of them
    The first item goes into each block of a partition of the rest, or into a block of its own
    """
    if not items:
        yield []
        return
    if len(items) == 1:
        yield [[items[0]]]
        return
    first = items[0]
    for smaller in set_partitions(items[1:]):
        for n, block in enumerate(smaller):
            yield smaller[:n] + [[first] + block] + smaller[n + 1:]
        yield [[first]] + smaller


def rk_oracle(first: OAOperator, second: OAOperator | None, x: StepElement, mode: str,
              cap: int | None = None) -> np.ndarray:
    """
    Optimum over all set partitions of the support of x, every block evaluated directly
    Independent of the single-cell shortcut of rk_partition(), used to cross-check it
    :param cap: largest support allowed, defaults to the configured oracle cap
    :returns: range vector
    """
    second = _or_zero(first, second)
    _check_pair(first, second, x)
    if mode not in RK_MODES:
        raise ContractError(f"Unknown mode {mode!r}, expected one of {RK_MODES}")
    cap = settings.oracle_cap if cap is None else cap
    if x.support_size > cap:
        raise SupportTooLargeError(x.support_size, cap, "partition oracle")

    cache: dict[int, np.ndarray] = {}

    def block_value(bits: int) -> np.ndarray:
        if bits not in cache:
            y = x.restrict(bits)
            cache[bits] = combine_cell_images(first.evaluate(y), second.evaluate(y), mode)
        return cache[bits]

    reduce = np.minimum if mode == "inf" else np.maximum
    best = None
    count = 0
    for partition in set_partitions([1 << int(j) for j in x.support_indices]):
        value = first.range.zero()
        for block in partition:
            value = value + block_value(sum(block))
        best = value if best is None else reduce(best, value)
        count += 1
    calculus_logger.debug(f"Oracle scanned {count} partitions with {len(cache)} distinct blocks")
    return best

# endregion


@dataclass(frozen=True)
class AbsBoundReport:
    samples: int
    violations: int
    max_excess: float
    records: list = field(default_factory=list, compare=False)

    @property
    def passed(self) -> bool:
        return self.violations == 0


def operator_abs_bound_check(operator: OAOperator, samples: list[StepElement]) -> AbsBoundReport:
    """
    Checks |Tx| <= |T|(x) componentwise on every sample
    :param operator: T
    :param samples: elements on the input grid
    :returns: AbsBoundReport, records hold (index, excess) for each violating sample
    """
    violations, worst, records = 0, 0.0, []
    for i, x in enumerate(samples):
        excess = float(np.max(np.abs(operator.evaluate(x)) - rk_partition(operator, None, x, "abs")))
        worst = max(worst, excess)
        if excess > BOUND_TOLERANCE:
            violations += 1
            records.append((i, excess))
    if violations:
        calculus_logger.warning(f"|Tx| <= |T|(x) violated on {violations} of {len(samples)} samples")
    return AbsBoundReport(len(samples), violations, worst, records)


def fragment_overlap(second: OAOperator, first: OAOperator, x: StepElement) -> np.ndarray:
    """(|S| ^ |T - S|)(x) at the finest decomposition"""
    _check_pair(first, second, x)
    if x.is_zero:
        return first.range.zero()
    s = second.cell_images(x)
    return np.minimum(np.abs(s), np.abs(first.cell_images(x) - s)).sum(axis=0)


def is_operator_fragment(second: OAOperator, first: OAOperator, x_samples: list[StepElement]) -> bool:
    """
    S is a fragment of T when |S| ^ |T - S| = 0, checked on the samples within 1e-9
    :param second: candidate fragment S
    :param first: T
    :param x_samples: elements on the common input grid
    """
    for x in x_samples:
        overlap = fragment_overlap(second, first, x)
        if np.any(overlap > BOUND_TOLERANCE):
            calculus_logger.debug(f"Not a fragment: overlap {float(np.max(overlap)):.3g} on {x!r}")
            return False
    return True
