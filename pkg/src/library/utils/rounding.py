"""
0-1 rounding of weighted vector sums
Given v_1..v_n in a space of dimension d and weights 0 <= lambda_i <= 1, pick theta_i in {0, 1} with
|sum (lambda_i - theta_i) v_i| <= (d/2) max |v_i|
"""
import logging
from typing import NamedTuple
import numpy as np
from scipy.linalg import null_space
from .config import settings
from .errors import ContractError, RoundingBoundError, SupportTooLargeError

rounding_logger = logging.getLogger("rounding")
rounding_logger.setLevel(logging.DEBUG)
rounding_logger.addHandler(logging.NullHandler())

STRATEGIES = ("brute", "greedy_nullspace", "sequential")

_SNAP = 1e-12
_BOUND_SLACK = 1e-12
# brute force enumerates 2**_LOW_BITS patterns per chunk
_LOW_BITS = 12

_NORM_ORDERS = {"sup": np.inf, "l1": 1, "l2": 2}


class RoundingResult(NamedTuple):
    theta: np.ndarray
    residual_norm: float


class RoundingProblem:
    """
    Vectors v_i (rows), weights lambda_i and the norm the residual is measured in
    """

    def __init__(self, vectors, weights, norm_kind: str = "sup", dim: int | None = None):
        """
        :param vectors: array of shape (n, d)
        :param weights: n reals in [0, 1]
        :param norm_kind: sup, l1 or l2
        :param dim: dimension of a subspace holding every v_i, defaults to d
        """
        vectors = np.array(vectors, dtype=float)
        if vectors.ndim == 1:
            vectors = vectors[:, None]
        weights = np.array(weights, dtype=float).reshape(-1)
        if vectors.ndim != 2 or vectors.shape[0] != weights.size:
            raise ContractError(f"Need one weight per vector, got {weights.size} weights for {vectors.shape} vectors")
        if np.any(weights < 0) or np.any(weights > 1):
            raise ContractError("Weights must lie in [0, 1]")
        if not np.all(np.isfinite(vectors)):
            raise ContractError("Vectors must be finite")
        if norm_kind not in _NORM_ORDERS:
            raise ContractError(f"Unknown norm {norm_kind!r}")
        self._vectors: np.ndarray = vectors
        self._weights: np.ndarray = weights
        self._norm_kind: str = norm_kind
        self._dim: int = vectors.shape[1] if dim is None else int(dim)

    @property
    def vectors(self) -> np.ndarray:
        return self._vectors

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def norm_kind(self) -> str:
        return self._norm_kind

    @property
    def n(self) -> int:
        return self._weights.size

    @property
    def dim(self) -> int:
        return self._dim

    def norm(self, v: np.ndarray):
        return np.linalg.norm(v, ord=_NORM_ORDERS[self._norm_kind], axis=-1)

    def residual(self, theta) -> np.ndarray:
        """sum (lambda_i - theta_i) v_i"""
        return (self._weights - np.asarray(theta, dtype=float)) @ self._vectors

    def residual_norm(self, theta) -> float:
        return float(self.norm(self.residual(theta)))

    def bound(self) -> float:
        """(dim/2) * max |v_i|"""
        if self.n == 0:
            return 0.0
        return self._dim / 2 * float(np.max(self.norm(self._vectors)))


def _brute(problem: RoundingProblem, free: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """
    Exhaustive minimization over the free variables, the others stay as given in theta
    Ties go to the smallest bit pattern, bit j of a pattern is free[j]
    """
    fixed = theta.copy()
    fixed[free] = 0.0
    target = problem.residual(fixed)
    vectors = problem.vectors[free]
    k = free.size
    low = min(k, _LOW_BITS)
    patterns_low = ((np.arange(2 ** low)[:, None] >> np.arange(low)) & 1).astype(float)
    low_sums = patterns_low @ vectors[:low]

    best_norm, best_pattern = np.inf, 0
    for high in range(2 ** (k - low)):
        high_bits = ((high >> np.arange(k - low)) & 1).astype(float)
        norms = problem.norm(target - high_bits @ vectors[low:] - low_sums)
        i = int(np.argmin(norms))
        if norms[i] < best_norm:
            best_norm, best_pattern = norms[i], (high << low) | i
    fixed[free] = (best_pattern >> np.arange(k)) & 1
    return fixed


def _greedy_nullspace(problem: RoundingProblem, seed: int) -> np.ndarray:
    """
    Moves the fractional weights along null-space directions of their vectors, which keeps the
    residual at zero, until each move pins a variable to 0 or 1; the few variables left are brute-forced
    """
    rng = np.random.default_rng(seed)
    theta = problem.weights.copy()
    steps = 0
    while True:
        theta[theta < _SNAP] = 0.0
        theta[theta > 1 - _SNAP] = 1.0
        free = np.flatnonzero((theta > 0) & (theta < 1))
        if free.size == 0:
            break
        basis = null_space(problem.vectors[free].T, rcond=1e-10)
        if basis.shape[1] == 0:
            break
        direction = basis @ rng.normal(size=basis.shape[1])
        direction /= np.max(np.abs(direction))
        values = theta[free]
        with np.errstate(divide="ignore", invalid="ignore"):
            limits = np.where(direction > 0, (1 - values) / direction,
                              np.where(direction < 0, -values / direction, np.inf))
        hit = int(np.argmin(limits))
        theta[free] = np.clip(values + limits[hit] * direction, 0.0, 1.0)
        theta[free[hit]] = 1.0 if direction[hit] > 0 else 0.0
        steps += 1

    free = np.flatnonzero((theta > 0) & (theta < 1))
    rounding_logger.debug(f"Null-space walk fixed variables in {steps} steps, {free.size} left fractional")
    if free.size > settings.brute_rounding_cap:
        # only reachable for very high dimensions, nearest rounding keeps the (dim/2) bound
        theta[free] = (theta[free] >= 0.5).astype(float)
        return theta
    if free.size:
        theta = _brute(problem, free, theta)
    return theta


def _sequential(problem: RoundingProblem) -> np.ndarray:
    """
    Rounds the vectors in order, each theta_i picks the value that keeps the running residual smaller
    Ties go to theta_i = 0
    """
    theta = np.zeros(problem.n)
    running = np.zeros(problem.vectors.shape[1])
    for i, (vector, weight) in enumerate(zip(problem.vectors, problem.weights)):
        low, high = running + weight * vector, running + (weight - 1) * vector
        if problem.norm(high) < problem.norm(low):
            theta[i], running = 1.0, high
        else:
            running = low
    return theta


def round_weights(problem: RoundingProblem, strategy: str = "brute", seed: int | None = None) -> RoundingResult:
    """
    Rounds the weights to theta in {0, 1}^n keeping |sum (lambda_i - theta_i) v_i| small
    :param problem: RoundingProblem
    :param strategy: brute (global minimizer, n <= configured cap), greedy_nullspace or sequential
        (deterministic running balance, falls back to greedy_nullspace when the bound is missed)
    :param seed: seed for the null-space direction mixing, defaults to the configured seed
    :returns: RoundingResult(theta, residual_norm)
    """
    if strategy not in STRATEGIES:
        raise ContractError(f"Unknown rounding strategy {strategy!r}, expected one of {STRATEGIES}")
    seed = settings.default_seed if seed is None else seed

    if np.all((problem.weights == 0) | (problem.weights == 1)):
        theta = problem.weights.copy()
    elif strategy == "brute":
        if problem.n > settings.brute_rounding_cap:
            raise SupportTooLargeError(problem.n, settings.brute_rounding_cap, "brute rounding")
        theta = _brute(problem, np.arange(problem.n), np.zeros(problem.n))
    elif strategy == "sequential":
        theta = _sequential(problem)
        if problem.residual_norm(theta) > problem.bound():
            rounding_logger.warning("Sequential rounding missed the bound, falling back to the null-space walk")
            theta = _greedy_nullspace(problem, seed)
    else:
        theta = _greedy_nullspace(problem, seed)

    theta = theta.astype(int)
    residual = problem.residual_norm(theta)
    bound = problem.bound()
    if residual > bound + _BOUND_SLACK * max(1.0, bound):
        rounding_logger.error(f"Rounding residual {residual!r} exceeds the bound {bound!r} ({strategy})")
        raise RoundingBoundError(f"{strategy} rounding residual {residual:.6g} exceeds (dim/2)*max|v_i| = {bound:.6g}")
    rounding_logger.debug(f"{strategy} rounding of {problem.n} vectors: residual {residual:.6g}, bound {bound:.6g}")
    return RoundingResult(theta, residual)
