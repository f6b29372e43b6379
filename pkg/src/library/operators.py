import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
import numpy as np
from overrides import override
from .lattice import CellGrid, StepElement, bits_to_bool, bool_to_bits
from .utils.config import settings
from .utils.errors import ContractError, GridMismatchError, SpecError, UnsupportedOperationError
from .utils.kernels import CoefficientFunction, NemytskiiFunction, UrysohnKernel
from .utils.serialization import grid_from_spec, grid_to_spec

operators_logger = logging.getLogger("operators")
operators_logger.setLevel(logging.DEBUG)
operators_logger.addHandler(logging.NullHandler())

ADDITIVITY_TOLERANCE = 1e-9

# norm kind: (numpy norm order, scipy.spatial.distance metric)
NORM_KINDS: dict = {"sup": (np.inf, "chebyshev"), "l1": (1, "cityblock"), "l2": (2, "euclidean")}

# per-cell combination rules of the Riesz-Kantorovich quantities, a = T(x*1_c), b = S(x*1_c)
RK_MODES: tuple = ("sup", "inf", "abs", "plus", "minus")


def combine_cell_images(a: np.ndarray, b: np.ndarray, mode: str) -> np.ndarray:
    """
    Componentwise value of one cell of a decomposition
    :param a: images under T, any shape
    :param b: images under S, same shape
    :param mode: sup (Ta v Sb), inf (Ta ^ Sb), abs |Ta - Sb|, plus (Ta - Sb)+, minus (Ta - Sb)-
    """
    match mode:
        case "sup":
            return np.maximum(a, b)
        case "inf":
            return np.minimum(a, b)
        case "abs":
            return np.abs(a - b)
        case "plus":
            return np.maximum(a - b, 0.0)
        case "minus":
            return np.maximum(b - a, 0.0)
    raise ContractError(f"Unknown mode {mode!r}, expected one of {RK_MODES}")


class RangeSpace:
    """
    Finite-dimensional normed range R^dim, ordered componentwise
    """

    def __init__(self, dim: int, norm_kind: str = "sup"):
        """
        :param dim: dimension, at least 1
        :param norm_kind: sup, l1 or l2
        """
        if int(dim) < 1:
            raise ContractError(f"Range dimension must be at least 1, got {dim}")
        if norm_kind not in NORM_KINDS:
            raise SpecError(f"Unknown norm {norm_kind!r}, expected one of {list(NORM_KINDS)}", field="range.norm")
        self._dim: int = int(dim)
        self._norm_kind: str = norm_kind

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def norm_kind(self) -> str:
        return self._norm_kind

    @property
    def metric(self) -> str:
        """Name of the matching scipy.spatial.distance metric"""
        return NORM_KINDS[self._norm_kind][1]

    def norm(self, v):
        """
        :param v: vector of length dim, or a stack of them along the last axis
        :returns: float for a single vector, array of norms otherwise
        """
        v = np.asarray(v, dtype=float)
        norms = np.linalg.norm(v, ord=NORM_KINDS[self._norm_kind][0], axis=-1)
        return float(norms) if v.ndim == 1 else norms

    def distance(self, a, b):
        return self.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))

    def zero(self) -> np.ndarray:
        return np.zeros(self._dim)

    def to_spec(self) -> dict:
        return {"dim": self._dim, "norm": self._norm_kind}

    def __eq__(self, other) -> bool:
        if not isinstance(other, RangeSpace):
            return NotImplemented
        return self._dim == other._dim and self._norm_kind == other._norm_kind

    def __hash__(self) -> int:
        return hash((self._dim, self._norm_kind))

    def __repr__(self) -> str:
        return f"RangeSpace(dim={self._dim}, norm_kind={self._norm_kind!r})"


class OAOperator(ABC):
    """
    Orthogonally additive map from StepElements on a fixed input grid into a RangeSpace
    Subclasses work on raw value arrays, the public methods check the grid
    """

    KIND: str = ""

    def __init__(self, input_grid: CellGrid, range_space: RangeSpace):
        self._input_grid: CellGrid = input_grid
        self._range: RangeSpace = range_space

    # region properties

    @property
    def kind(self) -> str:
        return self.KIND

    @property
    def input_grid(self) -> CellGrid:
        return self._input_grid

    @property
    def range(self) -> RangeSpace:
        return self._range

    @property
    def effective_dim(self) -> int:
        """Dimension of a subspace holding every image, used by the rounding bound"""
        return self._range.dim

    # endregion

    def _check_input(self, x: StepElement):
        if x.grid != self._input_grid:
            raise GridMismatchError(f"{self.kind} operator expects {self._input_grid!r}, got {x.grid!r}")

    def evaluate(self, x: StepElement) -> np.ndarray:
        """
        :param x: element on the input grid
        :returns: T(x), vector of length range.dim
        """
        self._check_input(x)
        return np.asarray(self._evaluate(x.values), dtype=float).reshape(self._range.dim)

    def cell_images(self, x: StepElement) -> np.ndarray:
        """
        Images of the single-cell fragments of x, T(x) is their sum
        :param x: element on the input grid
        :returns: array of shape (support_size, range.dim), rows follow x.support_indices
        """
        self._check_input(x)
        cells = x.support_indices
        if cells.size == 0:
            return np.zeros((0, self._range.dim))
        return np.asarray(self._cell_images(cells, x.values[cells]), dtype=float)

    def norm_of(self, x: StepElement) -> float:
        return self._range.norm(self.evaluate(x))

    @abstractmethod
    def _evaluate(self, values: np.ndarray) -> np.ndarray:
        """
        :param values: one value per input cell
        :returns: image vector
        """

    @abstractmethod
    def _cell_images(self, cells: np.ndarray, values: np.ndarray) -> np.ndarray:
        """
        :param cells: input cell indices
        :param values: the element's value on those cells, all nonzero
        :returns: one image row per cell
        """

    @abstractmethod
    def to_spec(self) -> dict:
        """JSON-ready description that operator_from_spec() turns back into an equal operator"""

    def positive_part_decomposition(self) -> "tuple[OAOperator, OAOperator]":
        raise UnsupportedOperationError(f"Operators of kind {self.kind!r} have no kernel decomposition")

    def restrict_input(self, bits: int) -> "InputRestrictedOperator":
        return InputRestrictedOperator(self, bits)

    # region vector space structure

    def __add__(self, other: "OAOperator") -> "CombinedOperator":
        return CombinedOperator([(1.0, self), (1.0, other)])

    def __sub__(self, other: "OAOperator") -> "CombinedOperator":
        return CombinedOperator([(1.0, self), (-1.0, other)])

    def __neg__(self) -> "CombinedOperator":
        return CombinedOperator([(-1.0, self)])

    def __mul__(self, coefficient: float) -> "CombinedOperator":
        return CombinedOperator([(float(coefficient), self)])

    __rmul__ = __mul__

    # endregion

    def __eq__(self, other) -> bool:
        if not isinstance(other, OAOperator):
            return NotImplemented
        return self.to_spec() == other.to_spec()

    def __hash__(self) -> int:
        return hash((self.kind, self._input_grid, self._range))

    def __repr__(self) -> str:
        return f"{type(self).__name__}(n_cells={self._input_grid.n_cells}, range={self._range!r})"


# region kinds

class UrysohnOperator(OAOperator):
    """
    (Tx)(s) = sum_t K(s, t, x_t) * mu_t, midpoint quadrature on the cell centers
    A one-cell output grid gives the Urysohn integral functional
    """

    KIND = "urysohn"

    def __init__(self, kernel: UrysohnKernel, input_grid: CellGrid, output_grid: CellGrid, norm_kind: str = "sup"):
        """
        :param kernel: K(s, t, r) with K(s, t, 0) = 0
        :param input_grid: grid of the variable t
        :param output_grid: grid of the variable s, one range coordinate per cell
        :param norm_kind: norm of the range
        """
        super().__init__(input_grid, RangeSpace(output_grid.n_cells, norm_kind))
        self._kernel: UrysohnKernel = kernel
        self._output_grid: CellGrid = output_grid

    @classmethod
    def functional(cls, kernel: UrysohnKernel, input_grid: CellGrid, norm_kind: str = "sup") -> "UrysohnOperator":
        return cls(kernel, input_grid, CellGrid.uniform(1), norm_kind)

    @property
    def kernel(self) -> UrysohnKernel:
        return self._kernel

    @property
    def output_grid(self) -> CellGrid:
        return self._output_grid

    @override
    def _cell_images(self, cells: np.ndarray, values: np.ndarray) -> np.ndarray:
        s = self._output_grid.centers[None, :]
        t = self._input_grid.centers[cells][:, None]
        k = self._kernel(s, t, values[:, None])
        k = np.where(values[:, None] != 0, k, 0.0)
        return k * self._input_grid.weights[cells][:, None]

    @override
    def _evaluate(self, values: np.ndarray) -> np.ndarray:
        cells = np.flatnonzero(values)
        if cells.size == 0:
            return self._range.zero()
        return self._cell_images(cells, values[cells]).sum(axis=0)

    @override
    def positive_part_decomposition(self) -> "tuple[UrysohnOperator, UrysohnOperator]":
        return (UrysohnOperator(self._kernel.positive_part(), self._input_grid, self._output_grid, self._range.norm_kind),
                UrysohnOperator(self._kernel.negative_part(), self._input_grid, self._output_grid, self._range.norm_kind))

    @override
    def to_spec(self) -> dict:
        return {"kind": self.KIND, "kernel": self._kernel.source, "input_grid": grid_to_spec(self._input_grid),
                "output_grid": grid_to_spec(self._output_grid), "range": self._range.to_spec()}


class NemytskiiOperator(OAOperator):
    """
    (Tx)_t = N(t, x_t) on the cell centers, the range is the grid itself
    """

    KIND = "nemytskii"

    def __init__(self, function: NemytskiiFunction, grid: CellGrid, norm_kind: str = "sup"):
        super().__init__(grid, RangeSpace(grid.n_cells, norm_kind))
        self._function: NemytskiiFunction = function

    @property
    def function(self) -> NemytskiiFunction:
        return self._function

    def _pointwise(self, cells: np.ndarray, values: np.ndarray) -> np.ndarray:
        out = self._function(self._input_grid.centers[cells], values)
        return np.where(values != 0, out, 0.0)

    @override
    def _evaluate(self, values: np.ndarray) -> np.ndarray:
        return self._pointwise(np.arange(values.size), values)

    @override
    def _cell_images(self, cells: np.ndarray, values: np.ndarray) -> np.ndarray:
        out = np.zeros((cells.size, self._range.dim))
        out[np.arange(cells.size), cells] = self._pointwise(cells, values)
        return out

    @override
    def positive_part_decomposition(self) -> "tuple[NemytskiiOperator, NemytskiiOperator]":
        return (NemytskiiOperator(self._function.positive_part(), self._input_grid, self._range.norm_kind),
                NemytskiiOperator(self._function.negative_part(), self._input_grid, self._range.norm_kind))

    @override
    def to_spec(self) -> dict:
        return {"kind": self.KIND, "kernel": self._function.source, "input_grid": grid_to_spec(self._input_grid),
                "range": self._range.to_spec()}


class NormFunctional(OAOperator):
    """
    N(x) = sum_t |x_t| * mu_t, the L1 norm as a positive OA functional
    """

    KIND = "norm_functional"

    def __init__(self, grid: CellGrid, norm_kind: str = "sup"):
        super().__init__(grid, RangeSpace(1, norm_kind))

    @override
    def _evaluate(self, values: np.ndarray) -> np.ndarray:
        return np.array([math.fsum(np.abs(values) * self._input_grid.weights)])

    @override
    def _cell_images(self, cells: np.ndarray, values: np.ndarray) -> np.ndarray:
        return (np.abs(values) * self._input_grid.weights[cells])[:, None]

    @override
    def to_spec(self) -> dict:
        return {"kind": self.KIND, "input_grid": grid_to_spec(self._input_grid), "range": self._range.to_spec()}


class BandMultiplication(OAOperator):
    """
    Tx = x * S(x) with S the band preserving multiplier by w, so (Tx)_t = x_t * w_t * x_t
    """

    KIND = "band_multiplication"

    def __init__(self, grid: CellGrid, weights, norm_kind: str = "sup"):
        """
        :param grid: input grid, also the range
        :param weights: one finite real per cell
        """
        super().__init__(grid, RangeSpace(grid.n_cells, norm_kind))
        weights = np.array(weights, dtype=float).reshape(-1)
        if weights.size != grid.n_cells or not np.all(np.isfinite(weights)):
            raise ContractError(f"Need {grid.n_cells} finite weights, got {weights.size}")
        weights.setflags(write=False)
        self._weights: np.ndarray = weights

    @classmethod
    def from_expression(cls, grid: CellGrid, source: str, norm_kind: str = "sup") -> "BandMultiplication":
        """
        :param source: weight w(t) as a sympy expression, sampled at the cell centers
        """
        return cls(grid, CoefficientFunction(source)(grid.centers), norm_kind)

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @override
    def _evaluate(self, values: np.ndarray) -> np.ndarray:
        return values * (self._weights * values)

    @override
    def _cell_images(self, cells: np.ndarray, values: np.ndarray) -> np.ndarray:
        out = np.zeros((cells.size, self._range.dim))
        out[np.arange(cells.size), cells] = values * (self._weights[cells] * values)
        return out

    @override
    def positive_part_decomposition(self) -> "tuple[BandMultiplication, BandMultiplication]":
        return (BandMultiplication(self._input_grid, np.maximum(self._weights, 0.0), self._range.norm_kind),
                BandMultiplication(self._input_grid, np.maximum(-self._weights, 0.0), self._range.norm_kind))

    @override
    def to_spec(self) -> dict:
        return {"kind": self.KIND, "weights": self._weights.tolist(), "input_grid": grid_to_spec(self._input_grid),
                "range": self._range.to_spec()}

# endregion


# region derived operators

class CombinedOperator(OAOperator):
    """
    Linear combination sum_k c_k * T_k of operators with a common input grid and range
    """

    KIND = "combination"

    def __init__(self, terms: list[tuple[float, OAOperator]]):
        if not terms:
            raise ContractError("A combination needs at least one term")
        first = terms[0][1]
        for _, op in terms[1:]:
            if op.input_grid != first.input_grid:
                raise GridMismatchError("Combined operators must share the input grid")
            if op.range != first.range:
                raise ContractError(f"Combined operators must share the range, got {first.range!r} and {op.range!r}")
        super().__init__(first.input_grid, first.range)
        self._terms: list[tuple[float, OAOperator]] = [(float(c), op) for c, op in terms]

    @property
    def terms(self) -> list[tuple[float, OAOperator]]:
        return list(self._terms)

    @override
    def _evaluate(self, values: np.ndarray) -> np.ndarray:
        return sum(c * op._evaluate(values) for c, op in self._terms)

    @override
    def _cell_images(self, cells: np.ndarray, values: np.ndarray) -> np.ndarray:
        return sum(c * op._cell_images(cells, values) for c, op in self._terms)

    @override
    def to_spec(self) -> dict:
        return {"kind": self.KIND, "terms": [{"coefficient": c, "operator": op.to_spec()} for c, op in self._terms]}


class ZeroOperator(OAOperator):
    KIND = "zero"

    @override
    def _evaluate(self, values: np.ndarray) -> np.ndarray:
        return self._range.zero()

    @override
    def _cell_images(self, cells: np.ndarray, values: np.ndarray) -> np.ndarray:
        return np.zeros((cells.size, self._range.dim))

    @override
    def positive_part_decomposition(self) -> "tuple[ZeroOperator, ZeroOperator]":
        return self, self

    @override
    def to_spec(self) -> dict:
        return {"kind": self.KIND, "input_grid": grid_to_spec(self._input_grid), "range": self._range.to_spec()}


class InputRestrictedOperator(OAOperator):
    """
    S(x) = T(x * 1_A) for a fixed cell set A, a fragment of T in the operator lattice
    """

    KIND = "restricted"

    def __init__(self, operator: OAOperator, bits: int):
        """
        :param operator: T
        :param bits: bitset of the kept input cells A
        """
        super().__init__(operator.input_grid, operator.range)
        self._operator: OAOperator = operator
        self._bits: int = bits & ((1 << operator.input_grid.n_cells) - 1)
        self._mask: np.ndarray = bits_to_bool(self._bits, operator.input_grid.n_cells)

    @property
    def operator(self) -> OAOperator:
        return self._operator

    @property
    def bits(self) -> int:
        return self._bits

    @property
    def effective_dim(self) -> int:
        return self._operator.effective_dim

    @override
    def _evaluate(self, values: np.ndarray) -> np.ndarray:
        return self._operator._evaluate(np.where(self._mask, values, 0.0))

    @override
    def _cell_images(self, cells: np.ndarray, values: np.ndarray) -> np.ndarray:
        out = np.array(self._operator._cell_images(cells, values), dtype=float)
        out[~self._mask[cells]] = 0.0
        return out

    @override
    def positive_part_decomposition(self) -> "tuple[InputRestrictedOperator, InputRestrictedOperator]":
        plus, minus = self._operator.positive_part_decomposition()
        return InputRestrictedOperator(plus, self._bits), InputRestrictedOperator(minus, self._bits)

    @override
    def to_spec(self) -> dict:
        return {"kind": self.KIND, "cells": format(self._bits, "x"), "operator": self._operator.to_spec()}


class LatticeOperator(OAOperator):
    """
    Riesz-Kantorovich value of (T, S) assembled cell by cell, e.g. |T|, T+ or T v S
    Orthogonally additive by construction: the value of x is the sum of its cell values
    """

    KIND = "lattice"

    def __init__(self, first: OAOperator, second: OAOperator, mode: str):
        """
        :param first: T
        :param second: S, same input grid and range as T (a ZeroOperator for |T|, T+, T-)
        :param mode: one of RK_MODES
        """
        if first.input_grid != second.input_grid:
            raise GridMismatchError("Lattice operations need a common input grid")
        if first.range != second.range:
            raise ContractError("Lattice operations need a common range")
        if mode not in RK_MODES:
            raise ContractError(f"Unknown mode {mode!r}, expected one of {RK_MODES}")
        super().__init__(first.input_grid, first.range)
        self._first: OAOperator = first
        self._second: OAOperator = second
        self._mode: str = mode

    @property
    def mode(self) -> str:
        return self._mode

    @override
    def _cell_images(self, cells: np.ndarray, values: np.ndarray) -> np.ndarray:
        return combine_cell_images(self._first._cell_images(cells, values),
                                   self._second._cell_images(cells, values), self._mode)

    @override
    def _evaluate(self, values: np.ndarray) -> np.ndarray:
        cells = np.flatnonzero(values)
        if cells.size == 0:
            return self._range.zero()
        return self._cell_images(cells, values[cells]).sum(axis=0)

    @override
    def to_spec(self) -> dict:
        return {"kind": self.KIND, "mode": self._mode, "first": self._first.to_spec(),
                "second": self._second.to_spec()}


class ProjectedOperator(OAOperator):
    """
    G = P T with P the orthogonal projection of the range onto span(basis)
    """

    KIND = "projected"

    def __init__(self, operator: OAOperator, basis):
        """
        :param operator: T
        :param basis: orthonormal rows spanning the target subspace, shape (rank, range.dim)
        """
        super().__init__(operator.input_grid, operator.range)
        basis = np.array(basis, dtype=float).reshape(-1, operator.range.dim)
        if basis.shape[0] and not np.allclose(basis @ basis.T, np.eye(basis.shape[0]), atol=1e-9):
            raise ContractError("Projection basis must be orthonormal")
        basis.setflags(write=False)
        self._operator: OAOperator = operator
        self._basis: np.ndarray = basis
        self._projection: np.ndarray = basis.T @ basis

    @property
    def operator(self) -> OAOperator:
        return self._operator

    @property
    def basis(self) -> np.ndarray:
        return self._basis

    @property
    def rank(self) -> int:
        return self._basis.shape[0]

    @property
    def effective_dim(self) -> int:
        return max(self.rank, 1)

    @override
    def _evaluate(self, values: np.ndarray) -> np.ndarray:
        return self._operator._evaluate(values) @ self._projection

    @override
    def _cell_images(self, cells: np.ndarray, values: np.ndarray) -> np.ndarray:
        return self._operator._cell_images(cells, values) @ self._projection

    @override
    def to_spec(self) -> dict:
        return {"kind": self.KIND, "basis": self._basis.tolist(), "operator": self._operator.to_spec()}

# endregion


# region specs

def _range_from_spec(spec: dict, field: str) -> tuple[int | None, str]:
    rng = spec.get("range", {})
    if not isinstance(rng, dict):
        raise SpecError("Range must be an object", field=f"{field}.range")
    dim = rng.get("dim", None)
    if dim is not None and (not isinstance(dim, int) or dim < 1):
        raise SpecError(f"Range dimension must be a positive integer, got {dim!r}", field=f"{field}.range.dim")
    norm_kind = rng.get("norm", "sup")
    if norm_kind not in NORM_KINDS:
        raise SpecError(f"Unknown norm {norm_kind!r}", field=f"{field}.range.norm")
    return dim, norm_kind


def _check_dim(dim: int | None, expected: int, field: str):
    if dim is not None and dim != expected:
        raise SpecError(f"Range dimension {dim} does not match the operator, expected {expected}",
                        field=f"{field}.range.dim")


def operator_from_spec(spec: dict, grid: CellGrid | None = None, field: str = "operator") -> OAOperator:
    """
    Builds an operator from its JSON description
    :param spec: {"kind": ..., "kernel": ..., "range": {"dim": d, "norm": "sup"}, ...}
    :param grid: input grid used when the spec has no "input_grid"
    :param field: path reported in errors
    :returns: the operator
    """
    if not isinstance(spec, dict):
        raise SpecError("Operator spec must be an object", field=field)
    kind = spec.get("kind", None)
    if "input_grid" in spec:
        grid = grid_from_spec(spec["input_grid"], f"{field}.input_grid")
    dim, norm_kind = _range_from_spec(spec, field)

    try:
        match kind:
            case "urysohn" | "urysohn_functional":
                if grid is None:
                    raise SpecError("Operator needs an input grid", field=f"{field}.input_grid")
                kernel = UrysohnKernel(str(_require(spec, "kernel", field)))
                if "output_grid" in spec:
                    output_grid = grid_from_spec(spec["output_grid"], f"{field}.output_grid")
                else:
                    output_grid = CellGrid.uniform(1 if kind == "urysohn_functional" else (dim or 1))
                _check_dim(dim, output_grid.n_cells, field)
                return UrysohnOperator(kernel, grid, output_grid, norm_kind)
            case "nemytskii":
                if grid is None:
                    raise SpecError("Operator needs an input grid", field=f"{field}.input_grid")
                _check_dim(dim, grid.n_cells, field)
                return NemytskiiOperator(NemytskiiFunction(str(_require(spec, "kernel", field))), grid, norm_kind)
            case "norm_functional":
                if grid is None:
                    raise SpecError("Operator needs an input grid", field=f"{field}.input_grid")
                _check_dim(dim, 1, field)
                return NormFunctional(grid, norm_kind)
            case "band_multiplication":
                if grid is None:
                    raise SpecError("Operator needs an input grid", field=f"{field}.input_grid")
                _check_dim(dim, grid.n_cells, field)
                if "weights" in spec:
                    return BandMultiplication(grid, spec["weights"], norm_kind)
                return BandMultiplication.from_expression(grid, str(spec.get("weight", "1")), norm_kind)
            case "combination":
                terms = _require(spec, "terms", field)
                if not isinstance(terms, list):
                    raise SpecError("Terms must be a list", field=f"{field}.terms")
                return CombinedOperator([(float(term.get("coefficient", 1.0)),
                                          operator_from_spec(term.get("operator"), grid, f"{field}.terms[{i}].operator"))
                                         for i, term in enumerate(terms)])
            case "zero":
                if grid is None:
                    raise SpecError("Operator needs an input grid", field=f"{field}.input_grid")
                return ZeroOperator(grid, RangeSpace(dim or 1, norm_kind))
            case "restricted":
                inner = operator_from_spec(_require(spec, "operator", field), grid, f"{field}.operator")
                return InputRestrictedOperator(inner, int(str(_require(spec, "cells", field)), 16))
            case "lattice":
                first = operator_from_spec(_require(spec, "first", field), grid, f"{field}.first")
                second = operator_from_spec(_require(spec, "second", field), grid, f"{field}.second")
                return LatticeOperator(first, second, str(spec.get("mode", "abs")))
            case "projected":
                inner = operator_from_spec(_require(spec, "operator", field), grid, f"{field}.operator")
                return ProjectedOperator(inner, _require(spec, "basis", field))
    except (AttributeError, ContractError, GridMismatchError, TypeError, ValueError) as e:
        if isinstance(e, SpecError):
            raise
        raise SpecError(f"Invalid {kind} operator: {e}", field=field)
    raise SpecError(f"Unknown operator kind {kind!r}", field=f"{field}.kind")


def _require(spec: dict, key: str, field: str):
    if key not in spec:
        raise SpecError(f"Missing key {key!r}", field=f"{field}.{key}")
    return spec[key]

# endregion


@dataclass(frozen=True)
class AdditivityReport:
    kind: str
    trials: int
    max_violation: float
    zero_maps_to_zero: bool
    tolerance: float = ADDITIVITY_TOLERANCE

    @property
    def passed(self) -> bool:
        return self.zero_maps_to_zero and self.max_violation <= self.tolerance

    def to_record(self) -> dict:
        return {"kind": self.kind, "trials": self.trials, "max_violation": self.max_violation,
                "zero_maps_to_zero": self.zero_maps_to_zero, "passed": self.passed}


def check_orthogonal_additivity(operator: OAOperator, trials: int = 100, seed: int | None = None,
                                tolerance: float = ADDITIVITY_TOLERANCE) -> AdditivityReport:
    """
    Randomized test of T(x) = T(x*1_D) + T(x*1_Dc), violations relative to 1 + |T(x)|
    :param operator: T
    :param trials: number of random (x, D) pairs
    :param seed: seed of numpy's default_rng, defaults to the configured seed
    :param tolerance: largest relative violation still reported as passing
    :returns: AdditivityReport, nothing is raised on failure
    """
    if trials < 1:
        raise ContractError("trials must be at least 1")
    rng = np.random.default_rng(settings.default_seed if seed is None else seed)
    grid = operator.input_grid
    norm = operator.range.norm
    zero_ok = not np.any(operator.evaluate(StepElement.zeros(grid)))

    worst = 0.0
    for _ in range(trials):
        x = StepElement(grid, rng.normal(size=grid.n_cells) * (rng.random(grid.n_cells) >= 0.2))
        x1 = x.restrict(bool_to_bits(rng.random(grid.n_cells) < 0.5))
        x2 = x - x1
        tx = operator.evaluate(x)
        violation = norm(tx - operator.evaluate(x1) - operator.evaluate(x2)) / (1.0 + norm(tx))
        worst = max(worst, violation)

    report = AdditivityReport(operator.kind, trials, worst, zero_ok, tolerance)
    operators_logger.debug(f"Additivity check of {operator.kind}: {report.to_record()}")
    return report


def positive_part_decomposition(operator: OAOperator) -> tuple[OAOperator, OAOperator]:
    """
    Writes T as S1 - S2 with S1, S2 positive, by splitting the kernel into its positive and negative parts
    :param operator: T of a kind with a kernel decomposition
    :returns: (S1, S2)
    """
    plus, minus = operator.positive_part_decomposition()
    operators_logger.debug(f"Split {operator.kind} operator into positive parts")
    return plus, minus
