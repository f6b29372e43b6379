import logging
import math
from typing import Iterator, NamedTuple
import numpy as np
from .utils.config import settings
from .utils.errors import ContractError, GridMismatchError, SupportTooLargeError

lattice_logger = logging.getLogger("lattice")
lattice_logger.setLevel(logging.DEBUG)
lattice_logger.addHandler(logging.NullHandler())


# region bitset helpers

def bits_to_bool(bits: int, n: int) -> np.ndarray:
    """
    Unpacks an integer bitset into a boolean array, bit j is cell j
    :param bits: bitset
    :param n: number of cells
    :returns: boolean array of length n
    """
    bits &= (1 << n) - 1
    raw = np.frombuffer(bits.to_bytes((n + 7) // 8 or 1, "little"), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little")[:n].astype(bool)


def bool_to_bits(arr: np.ndarray) -> int:
    """
    Packs a boolean array into an integer bitset, inverse of bits_to_bool()
    :param arr: boolean array
    :returns: bitset
    """
    return int.from_bytes(np.packbits(np.asarray(arr, dtype=bool), bitorder="little").tobytes(), "little")


def cells_to_bits(cells) -> int:
    bits = 0
    for c in cells:
        bits |= 1 << int(c)
    return bits


def fragment_indicators(n_support: int) -> np.ndarray:
    """
    Row k is the 0-1 pattern of the integer k over n_support positions, rows in ascending bit pattern
    :param n_support: number of positions
    :returns: boolean array of shape (2**n_support, n_support)
    """
    k = np.arange(2 ** n_support, dtype=np.int64)
    return ((k[:, None] >> np.arange(n_support, dtype=np.int64)) & 1).astype(bool)

# endregion


class CellGrid:
    """
    Weighted partition of a base interval, the discrete measure space carrying the lattice
    Cell j has measure weights[j], cells are laid out left to right on the base interval
    """

    def __init__(self, weights, base_interval: tuple[float, float] = (0.0, 1.0)):
        """
        :param weights: positive cell measures, must sum to b - a
        :param base_interval: (a, b) with a < b, metadata for centers
        """
        weights = np.array(weights, dtype=float).reshape(-1)
        a, b = float(base_interval[0]), float(base_interval[1])
        if weights.size < 1:
            raise ContractError("A grid needs at least one cell")
        if not a < b:
            raise ContractError(f"Base interval must satisfy a < b, got ({a}, {b})")
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            raise ContractError("Cell weights must be positive and finite")
        if abs(math.fsum(weights) - (b - a)) > 1e-12:
            raise ContractError(f"Cell weights sum to {math.fsum(weights)!r}, expected {b - a!r}")

        weights.setflags(write=False)
        self._weights: np.ndarray = weights
        self._base_interval: tuple[float, float] = (a, b)

        edges = a + np.concatenate(([0.0], np.cumsum(weights)))
        edges[-1] = b
        edges.setflags(write=False)
        self._edges: np.ndarray = edges
        centers = (edges[:-1] + edges[1:]) / 2
        centers.setflags(write=False)
        self._centers: np.ndarray = centers

    @classmethod
    def uniform(cls, n_cells: int, base_interval: tuple[float, float] = (0.0, 1.0)) -> "CellGrid":
        """
        :param n_cells: number of equal cells
        :param base_interval: (a, b)
        """
        if n_cells < 1:
            raise ContractError("A grid needs at least one cell")
        a, b = base_interval
        return cls(np.full(n_cells, (b - a) / n_cells), base_interval)

    @property
    def n_cells(self) -> int:
        return self._weights.size

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def base_interval(self) -> tuple[float, float]:
        return self._base_interval

    @property
    def edges(self) -> np.ndarray:
        return self._edges

    @property
    def centers(self) -> np.ndarray:
        return self._centers

    def refine(self) -> "CellGrid":
        """Halves every cell"""
        return CellGrid(np.repeat(self._weights / 2, 2), self._base_interval)

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        if not isinstance(other, CellGrid):
            return NotImplemented
        return self._base_interval == other._base_interval and np.array_equal(self._weights, other._weights)

    def __hash__(self) -> int:
        return hash((self._base_interval, self._weights.tobytes()))

    def __repr__(self) -> str:
        return f"CellGrid(n_cells={self.n_cells}, base_interval={self._base_interval})"


def assert_same_grid(*elements) -> CellGrid:
    """
    :param elements: StepElements (or anything with a .grid)
    :returns: the shared grid
    """
    grid = elements[0].grid
    for el in elements[1:]:
        if el.grid != grid:
            raise GridMismatchError(f"Grid mismatch: {grid!r} vs {el.grid!r}")
    return grid


class StepElement:
    """
    Element x of the vector lattice E: one real value per cell of a CellGrid
    Values are stored, never recomputed, so order and disjointness comparisons are exact
    """

    def __init__(self, grid: CellGrid, values):
        """
        :param grid: grid the element lives on
        :param values: one finite real per cell
        """
        values = np.array(values, dtype=float).reshape(-1)
        if values.size != grid.n_cells:
            raise ContractError(f"Element has {values.size} values, grid has {grid.n_cells} cells")
        if not np.all(np.isfinite(values)):
            raise ContractError("Element values must be finite")
        values.setflags(write=False)
        self._grid: CellGrid = grid
        self._values: np.ndarray = values

    @classmethod
    def zeros(cls, grid: CellGrid) -> "StepElement":
        return cls(grid, np.zeros(grid.n_cells))

    @classmethod
    def constant(cls, grid: CellGrid, value: float) -> "StepElement":
        return cls(grid, np.full(grid.n_cells, float(value)))

    # region properties

    @property
    def grid(self) -> CellGrid:
        return self._grid

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def support(self) -> np.ndarray:
        """Boolean array, True where the value is nonzero"""
        return self._values != 0

    @property
    def support_indices(self) -> np.ndarray:
        return np.flatnonzero(self._values)

    @property
    def support_bits(self) -> int:
        return bool_to_bits(self.support)

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self._values))

    @property
    def is_zero(self) -> bool:
        return not np.any(self._values)

    @property
    def is_nonnegative(self) -> bool:
        return bool(np.all(self._values >= 0))

    # endregion

    # region lattice and vector operations

    def positive_part(self) -> "StepElement":
        return StepElement(self._grid, np.maximum(self._values, 0.0))

    def negative_part(self) -> "StepElement":
        return StepElement(self._grid, np.maximum(-self._values, 0.0))

    def abs(self) -> "StepElement":
        return StepElement(self._grid, np.abs(self._values))

    def restrict(self, bits: int) -> "StepElement":
        """
        x * 1_D for the cell set D given as a bitset
        :param bits: bitset of cells to keep
        """
        return StepElement(self._grid, np.where(bits_to_bool(bits, self._grid.n_cells), self._values, 0.0))

    def measure(self, bits: int | None = None) -> float:
        """
        :param bits: cells to measure, defaults to the support
        :returns: total weight of the cells
        """
        mask = self.support if bits is None else bits_to_bool(bits, self._grid.n_cells)
        return math.fsum(self._grid.weights[mask])

    def __add__(self, other: "StepElement") -> "StepElement":
        assert_same_grid(self, other)
        return StepElement(self._grid, self._values + other._values)

    def __sub__(self, other: "StepElement") -> "StepElement":
        assert_same_grid(self, other)
        return StepElement(self._grid, self._values - other._values)

    def __neg__(self) -> "StepElement":
        return StepElement(self._grid, -self._values)

    def __mul__(self, scalar: float) -> "StepElement":
        return StepElement(self._grid, self._values * float(scalar))

    __rmul__ = __mul__

    # endregion

    def __eq__(self, other) -> bool:
        if not isinstance(other, StepElement):
            return NotImplemented
        return self._grid == other._grid and np.array_equal(self._values, other._values)

    def __hash__(self) -> int:
        return hash((self._grid, self._values.tobytes()))

    def __repr__(self) -> str:
        return f"StepElement({np.array2string(self._values, precision=6, threshold=12)})"


class FragmentMask:
    """
    Fragment y of a base element x, encoded as the set of support cells of x kept by y
    Masks are canonical: cells where x is zero never belong to a mask, so masks and fragments correspond 1-1
    """

    def __init__(self, base: StepElement, bits: int):
        """
        :param base: element x the fragment belongs to
        :param bits: bitset over cells, zero cells of x are dropped
        """
        if bits < 0:
            raise ContractError("Mask bits must be nonnegative")
        self._base: StepElement = base
        self._bits: int = bits & base.support_bits

    @classmethod
    def from_cells(cls, base: StepElement, cells) -> "FragmentMask":
        return cls(base, cells_to_bits(cells))

    @classmethod
    def full(cls, base: StepElement) -> "FragmentMask":
        return cls(base, base.support_bits)

    @classmethod
    def empty(cls, base: StepElement) -> "FragmentMask":
        return cls(base, 0)

    @property
    def base(self) -> StepElement:
        return self._base

    @property
    def bits(self) -> int:
        return self._bits

    @property
    def cells(self) -> np.ndarray:
        return np.flatnonzero(bits_to_bool(self._bits, self._base.grid.n_cells))

    @property
    def count(self) -> int:
        return self._bits.bit_count()

    @property
    def is_empty(self) -> bool:
        return self._bits == 0

    @property
    def element(self) -> StepElement:
        """The realized fragment y = x * 1_mask"""
        return self._base.restrict(self._bits)

    @property
    def measure(self) -> float:
        return self._base.measure(self._bits)

    def complement(self) -> "FragmentMask":
        """The mutually complemented fragment x - y"""
        return FragmentMask(self._base, self._base.support_bits & ~self._bits)

    def _check_base(self, other: "FragmentMask"):
        if self._base != other._base:
            raise ContractError("Masks belong to different base elements")

    def __or__(self, other: "FragmentMask") -> "FragmentMask":
        self._check_base(other)
        return FragmentMask(self._base, self._bits | other._bits)

    def __and__(self, other: "FragmentMask") -> "FragmentMask":
        self._check_base(other)
        return FragmentMask(self._base, self._bits & other._bits)

    def issubset(self, other: "FragmentMask") -> bool:
        self._check_base(other)
        return self._bits & ~other._bits == 0

    def to_hex(self) -> str:
        return format(self._bits, "x")

    @classmethod
    def from_hex(cls, base: StepElement, text: str) -> "FragmentMask":
        return cls(base, int(text, 16))

    def __eq__(self, other) -> bool:
        if not isinstance(other, FragmentMask):
            return NotImplemented
        return self._bits == other._bits and self._base == other._base

    def __hash__(self) -> int:
        return hash((self._base, self._bits))

    def __repr__(self) -> str:
        return f"FragmentMask(0x{self.to_hex()}, cells={self.cells.tolist()})"


# region operations

class LatticeOps(NamedTuple):
    sup: StepElement
    inf: StepElement
    abs: StepElement
    sum: StepElement
    is_disjoint: bool


def lattice_ops(x: StepElement, y: StepElement) -> LatticeOps:
    """
    Componentwise lattice operations of two elements
    :param x: first element
    :param y: second element, same grid
    :returns: LatticeOps(sup, inf, |x|, x + y, x ⊥ y)
    """
    grid = assert_same_grid(x, y)
    disjoint = bool(np.all(np.minimum(np.abs(x.values), np.abs(y.values)) == 0))
    return LatticeOps(sup=StepElement(grid, np.maximum(x.values, y.values)),
                      inf=StepElement(grid, np.minimum(x.values, y.values)),
                      abs=x.abs(),
                      sum=x + y,
                      is_disjoint=disjoint)


def is_fragment(y: StepElement, x: StepElement) -> bool:
    """
    y ⊑ x, i.e. y ⊥ (x - y): on every cell y is either 0 or equal to x
    """
    assert_same_grid(x, y)
    return bool(np.all((y.values == 0) | (y.values == x.values)))


def is_fragment_by_parts(y: StepElement, x: StepElement) -> bool:
    """Cross-check of is_fragment(): y ⊑ x iff y⁺ ⊑ x⁺ and y⁻ ⊑ x⁻"""
    return is_fragment(y.positive_part(), x.positive_part()) and is_fragment(y.negative_part(), x.negative_part())


def enumerate_fragments(x: StepElement, cap: int | None = None) -> Iterator[FragmentMask]:
    """
    Streams every fragment of x exactly once, in ascending bit pattern
    The cap is checked on the call, before the first fragment is requested
    :param x: base element
    :param cap: largest support allowed, defaults to the configured enumeration cap
    :returns: iterator of FragmentMask
    """
    cap = settings.enumeration_cap if cap is None else cap
    support = x.support_indices
    if support.size > cap:
        raise SupportTooLargeError(int(support.size), cap, "fragment enumeration")
    lattice_logger.debug(f"Enumerating {2 ** support.size} fragments")

    # split positions in two halves, look bits up from two small tables
    low = support.size // 2
    low_table = [cells_to_bits(support[:low][row]) for row in fragment_indicators(low)]
    high_table = [cells_to_bits(support[low:][row]) for row in fragment_indicators(support.size - low)]

    def stream() -> Iterator[FragmentMask]:
        for high_bits in high_table:
            for low_bits in low_table:
                yield FragmentMask(x, high_bits | low_bits)

    return stream()


def is_decomposition(x: StepElement, parts: list[FragmentMask]) -> bool:
    """
    True if parts are pairwise disjoint fragments of x whose union is the support of x
    """
    seen = 0
    for part in parts:
        if part.base != x or part.bits & seen:
            return False
        seen |= part.bits
    return seen == x.support_bits


def singleton_partition(x: StepElement) -> list[FragmentMask]:
    """The finest decomposition of x, one part per support cell"""
    return [FragmentMask(x, 1 << int(j)) for j in x.support_indices]


def refine_decompositions(x: StepElement, parts_a: list[FragmentMask],
                          parts_b: list[FragmentMask]) -> list[list[FragmentMask]]:
    """
    Common refinement of two decompositions of x: z[i][k] = A_i ∩ B_k
    Rows unite to A_i, columns unite to B_k, everything unites to x
    :param x: base element
    :param parts_a: first decomposition
    :param parts_b: second decomposition
    :returns: matrix of FragmentMask, len(parts_a) rows and len(parts_b) columns
    """
    if not is_decomposition(x, parts_a):
        raise ContractError("parts_a is not a disjoint decomposition of x")
    if not is_decomposition(x, parts_b):
        raise ContractError("parts_b is not a disjoint decomposition of x")
    return [[a & b for b in parts_b] for a in parts_a]


def _freudenthal_levels(v: StepElement, u: StepElement, n: int) -> np.ndarray:
    if n < 1:
        raise ContractError("n must be at least 1")
    assert_same_grid(v, u)
    if not v.is_nonnegative:
        raise ContractError("v must be nonnegative")
    if not u.is_nonnegative:
        raise ContractError("u must be nonnegative")
    if np.any((v.values == 0) & (u.values != 0)):
        raise ContractError("u is outside the ideal generated by v")

    support = v.support
    ratio = np.zeros(v.grid.n_cells)
    ratio[support] = u.values[support] / v.values[support]
    # running maximum over denominators 1..n keeps s_n increasing in n
    m = np.arange(1, n + 1, dtype=float)
    return np.max(np.floor(ratio[:, None] * m[None, :]) / m[None, :], axis=1)


def freudenthal_approx(v: StepElement, u: StepElement, n: int) -> StepElement:
    """
    v-step function s_n with 0 <= u - s_n <= v/n, nondecreasing in n
    :param v: nonnegative element
    :param u: element of the ideal of v, 0 <= u <= alpha*v
    :param n: resolution
    :returns: s_n, a finite combination of fragments of v with constant coefficients
    """
    levels = _freudenthal_levels(v, u, n)
    # clipping only removes the last ulp where rounding put lambda*v above u
    return StepElement(v.grid, np.minimum(levels * v.values, u.values))


def freudenthal_steps(v: StepElement, u: StepElement, n: int) -> list[tuple[float, FragmentMask]]:
    """
    Pieces of freudenthal_approx(): s_n = sum(level * v * 1_D) over the returned (level, D) pairs
    :returns: list of (level, FragmentMask of v) for the nonzero levels, ascending by level
    """
    levels = _freudenthal_levels(v, u, n)
    pieces = []
    for level in np.unique(levels[levels > 0]):
        pieces.append((float(level), FragmentMask(v, bool_to_bits(levels == level))))
    return pieces

# endregion
