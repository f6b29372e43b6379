import logging
from dataclasses import dataclass, field
from typing import Callable
import numpy as np
from scipy.spatial.distance import cdist, pdist
from .calculus import fragment_overlap, is_operator_fragment
from .lattice import FragmentMask, StepElement, assert_same_grid, fragment_indicators
from .operators import OAOperator
from .utils.config import settings
from .utils.errors import ContractError, NumericError, SupportTooLargeError

compact_logger = logging.getLogger("compact")
compact_logger.setLevel(logging.DEBUG)
compact_logger.addHandler(logging.NullHandler())

NET_MODES = ("exhaustive", "sampled")
_METRIC_ORDERS = {"chebyshev": np.inf, "cityblock": 1, "euclidean": 2}
# dyadic levels approached from each end of an order interval
PROBE_LEVELS = 20


@dataclass(frozen=True)
class EpsNet:
    """
    Finite epsilon-net of T(F_x): every covered image lies within epsilon of a center
    """
    epsilon: float
    centers: list[tuple[FragmentMask, np.ndarray]]
    covered_fraction: float
    mode: str
    n_images: int

    @property
    def size(self) -> int:
        return len(self.centers)

    def to_record(self) -> dict:
        return {"epsilon": self.epsilon, "net_size": self.size, "covered_fraction": self.covered_fraction,
                "mode": self.mode, "n_images": self.n_images}


def _patterns_to_masks(x: StepElement, patterns: np.ndarray) -> list[FragmentMask]:
    """Rows of 0-1 patterns over the support positions of x, as masks"""
    support = x.support_indices
    return [FragmentMask(x, sum(1 << int(c) for c in support[row])) for row in patterns.astype(bool)]


def fragment_images(operator: OAOperator, x: StepElement, cap: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """
    Images of every fragment of x, as sums of single-cell images
    :param operator: T
    :param x: element
    :param cap: largest support allowed, defaults to the configured exact split cap
    :returns: (patterns, images), row k of patterns is the 0-1 pattern of k over the support of x
    """
    cap = settings.exact_split_cap if cap is None else cap
    if x.support_size > cap:
        raise SupportTooLargeError(x.support_size, cap, "exhaustive fragment images")
    patterns = fragment_indicators(x.support_size)
    return patterns, patterns.astype(float) @ operator.cell_images(x)


def _row_distances(a: np.ndarray, b: np.ndarray, metric: str) -> np.ndarray:
    """Distance between matching rows of a and b"""
    if metric in _METRIC_ORDERS:
        return np.linalg.norm(a - b, ord=_METRIC_ORDERS[metric], axis=1)
    return np.array([cdist(u[None, :], v[None, :], metric=metric)[0, 0] for u, v in zip(a, b)])


def recentre(images: np.ndarray, owner: np.ndarray, metric: str) -> tuple[np.ndarray, float]:
    """
    Moves every center to the member of its cluster closest to the cluster's bounding-box midpoint
    :param images: points, one per row
    :param owner: cluster label of every row, labels are 0..m-1
    :param metric: scipy.spatial.distance metric name
    :returns: (new center rows indexed by label, largest distance of a row to its new center)
    """
    order = np.argsort(owner, kind="stable")
    labels, starts = np.unique(owner[order], return_index=True)
    lower = np.minimum.reduceat(images[order], starts, axis=0)
    upper = np.maximum.reduceat(images[order], starts, axis=0)
    midpoints = np.empty((int(labels.max()) + 1, images.shape[1]))
    midpoints[labels] = (lower + upper) / 2
    offsets = _row_distances(images, midpoints[owner], metric)
    # by label, then offset, then row
    ranked = np.lexsort((np.arange(owner.size), offsets, owner))
    _, first = np.unique(owner[ranked], return_index=True)
    centers = np.zeros(midpoints.shape[0], dtype=int)
    centers[labels] = ranked[first]
    radius = float(np.max(_row_distances(images, images[centers[owner]], metric)))
    return centers, radius


def farthest_point_net(images: np.ndarray, epsilon: float, metric: str) -> tuple[list[int], np.ndarray]:
    """
    Farthest-point traversal started at row 0, stopped at the first prefix that covers every row within epsilon,
    either as it is or after recentring each of its clusters
    Prefixes and their recentred versions do not depend on epsilon, so the net size is monotone in epsilon
    :param images: points, one per row
    :param epsilon: covering radius
    :param metric: scipy.spatial.distance metric name
    :returns: (chosen row indices, distance of every row to the chosen row covering it)
    """
    chosen = [0]
    dist = cdist(images, images[:1], metric=metric)[:, 0]
    owner = np.zeros(images.shape[0], dtype=int)
    while True:
        far = int(np.argmax(dist))
        if dist[far] <= epsilon:
            return chosen, dist
        centers, radius = recentre(images, owner, metric)
        if radius <= epsilon:
            rows = [int(c) for c in centers]
            return rows, _row_distances(images, images[centers[owner]], metric)
        step = cdist(images, images[far:far + 1], metric=metric)[:, 0]
        owner = np.where(step < dist, len(chosen), owner)
        chosen.append(far)
        dist = np.minimum(dist, step)


def c_compact_net(operator: OAOperator, x: StepElement, epsilon: float, mode: str = "exhaustive",
                  k: int = 512, seed: int | None = None, metric: str | None = None) -> EpsNet:
    """
    Greedy epsilon-net of the fragment images T(F_x)
    :param operator: T
    :param x: element
    :param epsilon: covering radius, positive
    :param mode: exhaustive (every fragment, support within the cap) or sampled
    :param k: number of random masks in sampled mode, the same number is held out to measure coverage
    :param seed: seed for sampled mode, defaults to the configured seed
    :param metric: scipy distance metric, defaults to the one of the range norm
    :returns: EpsNet
    """
    if epsilon <= 0:
        raise ContractError(f"epsilon must be positive, got {epsilon}")
    if mode not in NET_MODES:
        raise ContractError(f"Unknown net mode {mode!r}, expected one of {NET_MODES}")
    metric = operator.range.metric if metric is None else metric

    if mode == "exhaustive":
        patterns, images = fragment_images(operator, x)
        chosen, _ = farthest_point_net(images, epsilon, metric)
        covered = 1.0
    else:
        rng = np.random.default_rng(settings.default_seed if seed is None else seed)
        cells = operator.cell_images(x)
        # the empty fragment leads so the traversal starts at T(0) = 0
        patterns = np.vstack([np.zeros((1, x.support_size), dtype=bool),
                              rng.random((k, x.support_size)) < 0.5])
        images = patterns.astype(float) @ cells
        chosen, _ = farthest_point_net(images, epsilon, metric)
        held_out = (rng.random((k, x.support_size)) < 0.5).astype(float) @ cells
        nearest = cdist(held_out, images[chosen], metric=metric).min(axis=1)
        covered = float(np.mean(nearest <= epsilon))

    masks = _patterns_to_masks(x, patterns[chosen])
    net = EpsNet(float(epsilon), [(m, images[i].copy()) for m, i in zip(masks, chosen)], covered, mode, images.shape[0])
    compact_logger.debug(f"{mode} net of {operator.kind}: {net.size} centers for {net.n_images} images at {epsilon}")
    return net


def net_covers(net: EpsNet, images: np.ndarray, metric: str) -> float:
    """Fraction of images within net.epsilon of a center"""
    centers = np.array([c for _, c in net.centers])
    return float(np.mean(cdist(images, centers, metric=metric).min(axis=1) <= net.epsilon))


# region AM-compactness

@dataclass(frozen=True)
class AMProbeReport:
    samples: int
    diameter: float
    net_size: int
    max_norm: float
    level_norms: list[float]
    unbounded: bool

    def to_record(self) -> dict:
        return {"samples": self.samples, "diameter": self.diameter, "net_size": self.net_size,
                "max_norm": self.max_norm, "unbounded": self.unbounded}


def _safe_norm(operator: OAOperator, x: StepElement) -> float:
    try:
        return operator.norm_of(x)
    except NumericError:
        return float("inf")


def am_compact_probe(operator: OAOperator, order_interval: tuple[StepElement, StepElement], epsilon: float,
                     k: int = 256, seed: int | None = None) -> AMProbeReport:
    """
    Samples the order interval [lower, upper] and walks towards both ends on dyadic levels
    An image norm above the configured threshold with a nondecreasing tail flags an unbounded image
    :param operator: T
    :param order_interval: (lower, upper) with lower <= upper
    :param epsilon: radius of the net built on the sampled images
    :param k: number of uniform samples
    :param seed: defaults to the configured seed
    :returns: AMProbeReport
    """
    lower, upper = order_interval
    assert_same_grid(lower, upper)
    if np.any(lower.values > upper.values):
        raise ContractError("Order interval needs lower <= upper")
    if epsilon <= 0:
        raise ContractError(f"epsilon must be positive, got {epsilon}")
    rng = np.random.default_rng(settings.default_seed if seed is None else seed)
    width = upper.values - lower.values

    images = []
    for u in rng.random((k, lower.grid.n_cells)):
        try:
            images.append(operator.evaluate(StepElement(lower.grid, lower.values + u * width)))
        except NumericError:
            compact_logger.debug("Sample overflowed, counted through the level walk")
    images = np.array(images).reshape(-1, operator.range.dim)
    finite = images[np.all(np.isfinite(images), axis=1)]
    diameter = float(np.max(pdist(finite, metric=operator.range.metric))) if finite.shape[0] > 1 else 0.0
    net_size = len(farthest_point_net(np.vstack([operator.range.zero()[None, :], finite]), epsilon,
                                        operator.range.metric)[0])

    level_norms = []
    for level in range(PROBE_LEVELS + 1):
        step = 2.0 ** -level * width
        level_norms.append(max(_safe_norm(operator, StepElement(lower.grid, lower.values + step)),
                               _safe_norm(operator, StepElement(lower.grid, upper.values - step))))
    sample_norms = operator.range.norm(finite) if finite.shape[0] else np.zeros(1)
    max_norm = max(float(np.max(sample_norms)), max(level_norms))
    tail = np.array(level_norms[-5:])
    unbounded = bool(np.any(np.isinf(tail)) or
                     (tail[-1] > settings.unbounded_threshold and np.all(np.diff(tail) >= 0)))

    report = AMProbeReport(len(images), diameter, net_size, max_norm, level_norms, unbounded)
    compact_logger.debug(f"AM probe of {operator.kind}: {report.to_record()}")
    return report

# endregion


# region lateral convergence

ChainBuilder = Callable[[StepElement, int], list[FragmentMask]]


def halving_chain(x: StepElement, steps: int) -> list[FragmentMask]:
    """y_n keeps the first ceil(s / 2**n) support cells of x, n = 0..steps"""
    support = x.support_indices
    chain = []
    for n in range(steps + 1):
        keep = -(-support.size // 2 ** n)
        chain.append(FragmentMask.from_cells(x, support[:keep]))
    return chain


def empty_chain(x: StepElement, steps: int) -> list[FragmentMask]:
    return [FragmentMask.empty(x) for _ in range(steps + 1)]


def validate_chain(chain: list[FragmentMask]):
    """Raises ContractError unless y_{n+1} is a fragment of y_n for every n"""
    for n in range(len(chain) - 1):
        if not chain[n + 1].issubset(chain[n]):
            raise ContractError(f"Chain is not nested at step {n + 1}")


@dataclass(frozen=True)
class VanishingReport:
    measures: list[float]
    norms: list[float]
    delta: float | None
    first_below: int | None
    records: list = field(default_factory=list, compare=False)

    @property
    def vanished(self) -> bool:
        return self.first_below is not None

    def to_record(self) -> dict:
        return {"steps": len(self.norms), "final_norm": self.norms[-1] if self.norms else 0.0,
                "first_below": self.first_below, "vanished": self.vanished}


def lateral_vanishing_check(operator: OAOperator, x: StepElement, chain_builder: ChainBuilder = halving_chain,
                            steps: int = 8, delta: float | None = None) -> VanishingReport:
    """
    Image norms along a nested chain of fragments y_0 >= y_1 >= ... of x
    :param operator: T
    :param x: element
    :param chain_builder: callable (x, steps) -> list of FragmentMask
    :param steps: chain length minus one
    :param delta: threshold, the report gives the first index with |T y_n| < delta
    :returns: VanishingReport with the decay curve
    """
    chain = chain_builder(x, steps)
    for mask in chain:
        if mask.base != x:
            raise ContractError("Chain masks must be fragments of x")
    validate_chain(chain)

    measures = [m.measure for m in chain]
    norms = [operator.norm_of(m.element) for m in chain]
    first_below = None
    if delta is not None:
        first_below = next((n for n, v in enumerate(norms) if v < delta), None)
    records = [{"step": n, "measure": m, "norm": v} for n, (m, v) in enumerate(zip(measures, norms))]
    compact_logger.debug(f"Lateral chain of {operator.kind}: norms {norms}")
    return VanishingReport(measures, norms, delta, first_below, records)

# endregion


@dataclass(frozen=True)
class BandProbeReport:
    operator_net_size: int
    fragment_net_size: int
    max_overlap: float
    finite: bool

    def to_record(self) -> dict:
        return {"operator_net_size": self.operator_net_size, "fragment_net_size": self.fragment_net_size,
                "max_overlap": self.max_overlap, "finite": self.finite}


def fragment_band_probe(operator: OAOperator, fragment: OAOperator, x: StepElement, epsilon: float,
                        samples: list[StepElement] | None = None, seed: int | None = None) -> BandProbeReport:
    """
    Nets of T and of an operator fragment S of T at the same epsilon
    :param operator: T
    :param fragment: S, must satisfy |S| ^ |T - S| = 0
    :param x: element the nets are built for
    :param epsilon: covering radius
    :param samples: elements for the fragment check, defaults to x and 20 random elements
    :param seed: seed of the random samples
    :returns: BandProbeReport
    """
    if samples is None:
        rng = np.random.default_rng(settings.default_seed if seed is None else seed)
        samples = [x] + [StepElement(x.grid, rng.normal(size=x.grid.n_cells)) for _ in range(20)]
    if not is_operator_fragment(fragment, operator, samples):
        raise ContractError("S is not a fragment of T: |S| ^ |T - S| does not vanish")

    t_net = c_compact_net(operator, x, epsilon)
    s_net = c_compact_net(fragment, x, epsilon)
    overlap = max(float(np.max(fragment_overlap(fragment, operator, y))) for y in samples)
    report = BandProbeReport(t_net.size, s_net.size, overlap, t_net.size > 0 and s_net.size > 0)
    compact_logger.debug(f"Band probe: {report.to_record()}")
    return report
