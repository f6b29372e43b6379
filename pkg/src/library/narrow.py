"""
Narrow splits: for x and epsilon find complementary fragments x1, x2 of x with |T x1 - T x2| < epsilon
Partition x into parts with small images, round the weights 1/2 of the part images to 0-1 and
collect the parts rounded to 1 into x1
"""
import logging
import math
from dataclasses import dataclass
import numpy as np
from scipy.linalg import orth
from .compactness import c_compact_net, fragment_images
from .lattice import FragmentMask, StepElement
from .operators import OAOperator, ProjectedOperator
from .utils.config import settings
from .utils.errors import ContractError, GridTooCoarseError, NarrowSplitError
from .utils.rounding import RoundingProblem, round_weights

narrow_logger = logging.getLogger("narrow")
narrow_logger.setLevel(logging.DEBUG)
narrow_logger.addHandler(logging.NullHandler())

# ranges of at most this dimension are never reduced
IDENTITY_REDUCTION_DIM = 4
_REDUCTION_SLACK = 1e-12


@dataclass(frozen=True)
class NarrowSplit:
    """
    Complementary fragments x1, x2 of x and the defect |T x1 - T x2|
    """
    x1: FragmentMask
    x2: FragmentMask
    defect: float
    epsilon: float
    parts: int
    strategy: str

    def to_record(self) -> dict:
        return {"x1": self.x1.to_hex(), "x2": self.x2.to_hex(), "defect": self.defect, "epsilon": self.epsilon,
                "parts": self.parts, "strategy": self.strategy}


def _cell_norms(operator: OAOperator, x: StepElement) -> np.ndarray:
    return np.asarray(operator.range.norm(operator.cell_images(x)), dtype=float).reshape(-1)


def extract_small_fragment(operator: OAOperator, x: StepElement, epsilon: float) -> tuple[FragmentMask, FragmentMask]:
    """
    Decomposition x = y + z with z a nonzero fragment of small image, |T z| < epsilon
    z is the single support cell of smallest image, so y is nonzero whenever x has two or more support cells
    :param operator: T
    :param x: nonzero element
    :param epsilon: positive threshold
    :returns: (y, z) as complementary masks
    """
    if x.is_zero:
        raise ContractError("x must be nonzero")
    if epsilon <= 0:
        raise ContractError(f"epsilon must be positive, got {epsilon}")
    norms = _cell_norms(operator, x)
    best = int(np.argmin(norms))
    cell = int(x.support_indices[best])
    if norms[best] >= epsilon:
        raise GridTooCoarseError(f"no single cell has image norm below {epsilon}", float(norms[best]), cell)
    z = FragmentMask(x, 1 << cell)
    return z.complement(), z


def epsilon_partition(operator: OAOperator, x: StepElement, epsilon: float, strict: bool = False) -> list[FragmentMask]:
    """
    Greedy decomposition of x into parts with |T x_i| <= epsilon (< epsilon when strict)
    Cells are absorbed in support order; a part is closed when the next cell would break the bound
    :param operator: T
    :param x: element
    :param epsilon: positive threshold
    :param strict: require strictly smaller part norms
    :returns: disjoint masks whose union is the support of x
    """
    if epsilon <= 0:
        raise ContractError(f"epsilon must be positive, got {epsilon}")
    if x.is_zero:
        return []

    def fits(bits: int) -> bool:
        value = operator.norm_of(x.restrict(bits))
        return value < epsilon if strict else value <= epsilon

    norms = _cell_norms(operator, x)
    for cell, value in zip(x.support_indices, norms):
        if not (value < epsilon if strict else value <= epsilon):
            raise GridTooCoarseError(f"cell {int(cell)} alone has image norm {value:.6g} against {epsilon:.6g}",
                                     float(value), int(cell))

    parts, current = [], 0
    for cell in x.support_indices:
        candidate = current | (1 << int(cell))
        if current and not fits(candidate):
            parts.append(FragmentMask(x, current))
            candidate = 1 << int(cell)
        current = candidate
    parts.append(FragmentMask(x, current))
    narrow_logger.debug(f"epsilon partition at {epsilon:.6g}: {len(parts)} parts from {x.support_size} cells")
    return parts


def narrow_split(operator: OAOperator, x: StepElement, epsilon: float, strategy: str = "greedy_nullspace",
                 seed: int | None = None) -> NarrowSplit:
    """
    Complementary fragments x1, x2 of x with |T x1 - T x2| < epsilon
    Parts are cut at epsilon / dim, so rounding the weights 1/2 leaves a defect below dim * max|T x_i| < epsilon
    :param operator: T, its effective_dim is the dimension used in the threshold
    :param x: element
    :param epsilon: positive target
    :param strategy: rounding strategy, brute, greedy_nullspace or sequential
    :param seed: rounding seed, defaults to the configured seed
    :returns: NarrowSplit
    """
    if epsilon <= 0:
        raise ContractError(f"epsilon must be positive, got {epsilon}")
    full = FragmentMask.full(x)
    if x.is_zero:
        return NarrowSplit(full, full.complement(), 0.0, float(epsilon), 0, strategy)
    if x.support_size == 1:
        # an atom with nonzero image admits no narrow split
        value = operator.norm_of(x)
        if value > 0:
            raise GridTooCoarseError(f"x is a single cell with nonzero image norm {value:.6g}", value,
                                     int(x.support_indices[0]))
        return NarrowSplit(full, full.complement(), 0.0, float(epsilon), 1, strategy)

    dim = operator.effective_dim
    parts = epsilon_partition(operator, x, epsilon / dim, strict=True)
    vectors = np.array([operator.evaluate(p.element) for p in parts])
    problem = RoundingProblem(vectors, np.full(len(parts), 0.5), operator.range.norm_kind, dim=dim)
    theta, residual = round_weights(problem, strategy, seed)

    bits = 0
    for part, chosen in zip(parts, theta):
        if chosen:
            bits |= part.bits
    x1 = FragmentMask(x, bits)
    x2 = x1.complement()
    defect = operator.range.norm(operator.evaluate(x1.element) - operator.evaluate(x2.element))
    if defect >= epsilon:
        narrow_logger.error(f"Split defect {defect!r} is not below {epsilon!r} ({len(parts)} parts, {strategy})")
        raise NarrowSplitError(f"split defect {defect:.6g} is not below epsilon {epsilon:.6g}")
    narrow_logger.debug(f"Narrow split of {operator.kind}: {len(parts)} parts, rounding residual {residual:.3g}, "
                        f"defect {defect:.6g} < {epsilon:.6g}")
    return NarrowSplit(x1, x2, defect, float(epsilon), len(parts), strategy)


def exhaustive_min_defect(operator: OAOperator, x: StepElement, cap: int | None = None) -> tuple[float, FragmentMask]:
    """
    Smallest |T y - T(x - y)| over every fragment y of x, ties go to the smallest bit pattern
    :returns: (defect, y)
    """
    patterns, images = fragment_images(operator, x, cap)
    total = images[-1]
    defects = np.asarray(operator.range.norm(2 * images - total), dtype=float).reshape(-1)
    best = int(np.argmin(defects))
    support = x.support_indices
    return float(defects[best]), FragmentMask(x, sum(1 << int(c) for c in support[patterns[best]]))


def finite_rank_reduce(operator: OAOperator, x: StepElement, delta: float, mode: str = "exhaustive",
                       k: int = 512, seed: int | None = None) -> OAOperator:
    """
    Operator G with images in a low-dimensional subspace and |T y - G y| <= delta for every fragment y of x
    G projects T orthogonally onto the span of an l2 net of T(F_x); ranges of dimension <= 4 are kept as they are
    :param operator: T
    :param x: element
    :param delta: positive approximation bound
    :param mode: net mode, exhaustive or sampled (the bound is then checked on the sampled fragments)
    :param k: sample count in sampled mode
    :param seed: seed in sampled mode
    :returns: G, T itself or a ProjectedOperator
    """
    if delta <= 0:
        raise ContractError(f"delta must be positive, got {delta}")
    space = operator.range
    if space.dim <= IDENTITY_REDUCTION_DIM:
        return operator

    # sup <= l2 and l1 <= sqrt(d) l2, so an l2 net at this radius bounds the range norm by delta
    radius = delta / math.sqrt(space.dim) if space.norm_kind == "l1" else delta
    net = c_compact_net(operator, x, radius, mode=mode, k=k, seed=seed, metric="euclidean")
    centers = np.array([c for _, c in net.centers])
    basis = orth(centers.T).T if np.any(centers) else np.zeros((0, space.dim))
    reduced = ProjectedOperator(operator, basis)

    if mode == "exhaustive":
        _, images = fragment_images(operator, x)
    else:
        rng = np.random.default_rng(settings.default_seed if seed is None else seed)
        images = (rng.random((k, x.support_size)) < 0.5).astype(float) @ operator.cell_images(x)
    projected = images @ (basis.T @ basis)
    worst = float(np.max(space.norm(images - projected))) if images.shape[0] else 0.0
    if worst > delta + _REDUCTION_SLACK:
        raise NarrowSplitError(f"finite-rank reduction error {worst:.6g} exceeds delta {delta:.6g}")
    narrow_logger.debug(f"Reduced {operator.kind} from dimension {space.dim} to rank {reduced.rank}, "
                        f"error {worst:.3g} <= {delta:.3g}")
    return reduced


def narrow_split_reduced(operator: OAOperator, x: StepElement, epsilon: float, strategy: str = "greedy_nullspace",
                         seed: int | None = None, mode: str = "exhaustive") -> NarrowSplit:
    """
    Narrow split through a finite-rank reduction G of T at epsilon/4
    G is split at epsilon/2 with its own rank as dimension, and
    |T x1 - T x2| <= |G x1 - G x2| + |T x1 - G x1| + |T x2 - G x2| < epsilon
    :returns: NarrowSplit whose defect is measured with T
    """
    reduced = finite_rank_reduce(operator, x, epsilon / 4, mode=mode, seed=seed)
    if reduced is operator:
        return narrow_split(operator, x, epsilon, strategy, seed)

    split = narrow_split(reduced, x, epsilon / 2, strategy, seed)
    defect = operator.range.norm(operator.evaluate(split.x1.element) - operator.evaluate(split.x2.element))
    if defect >= epsilon:
        raise NarrowSplitError(f"reduced split defect {defect:.6g} is not below epsilon {epsilon:.6g}")
    narrow_logger.debug(f"Reduced split: defect {defect:.6g} for T, {split.defect:.6g} for G")
    return NarrowSplit(split.x1, split.x2, defect, float(epsilon), split.parts, strategy)
