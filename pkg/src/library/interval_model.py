import logging
from typing import Iterable
import numpy as np
from .utils.errors import ContractError

interval_logger = logging.getLogger("interval")
interval_logger.setLevel(logging.DEBUG)
interval_logger.addHandler(logging.NullHandler())

TOLERANCE = 1e-9


class IntervalFunction:
    """
    Nonnegative piecewise-linear continuous function on [0, 1]
    Given by its values at sorted breakpoints, linear in between
    """

    def __init__(self, breakpoints, values):
        """
        :param breakpoints: strictly increasing, first is 0 and last is 1
        :param values: nonnegative finite value at each breakpoint
        """
        breakpoints = np.array(breakpoints, dtype=float).reshape(-1)
        values = np.array(values, dtype=float).reshape(-1)
        if breakpoints.size < 2 or breakpoints.size != values.size:
            raise ContractError("Need at least 2 breakpoints and one value per breakpoint")
        if breakpoints[0] != 0.0 or breakpoints[-1] != 1.0 or np.any(np.diff(breakpoints) <= 0):
            raise ContractError("Breakpoints must increase strictly from 0 to 1")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ContractError("Values must be finite and nonnegative")
        breakpoints.setflags(write=False)
        values.setflags(write=False)
        self._breakpoints: np.ndarray = breakpoints
        self._values: np.ndarray = values
        self._components, self._component_of = self._find_components()

    def _find_components(self) -> tuple[list[tuple[float, float]], np.ndarray]:
        """
        Maximal intervals where f > 0, separated by breakpoints where f vanishes
        :returns: (components, component index of every breakpoint or -1 where f is 0)
        """
        bp, val = self._breakpoints, self._values
        components: list[tuple[float, float]] = []
        component_of = np.full(bp.size, -1, dtype=int)
        start = None
        for i in range(bp.size - 1):
            if val[i] > 0 or val[i + 1] > 0:
                if start is None:
                    start = bp[i]
                if val[i] > 0:
                    component_of[i] = len(components)
                if val[i + 1] == 0:
                    components.append((float(start), float(bp[i + 1])))
                    start = None
        if start is not None:
            component_of[-1] = len(components)
            components.append((float(start), float(bp[-1])))
        return components, component_of

    @property
    def breakpoints(self) -> np.ndarray:
        return self._breakpoints

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def support_components(self) -> list[tuple[float, float]]:
        return list(self._components)

    @property
    def n_components(self) -> int:
        return len(self._components)

    def __call__(self, t):
        return np.interp(t, self._breakpoints, self._values)

    def select(self, bits) -> "IntervalFunction":
        """
        Fragment equal to f on the selected components and 0 elsewhere
        :param bits: 0-1 sequence, one entry per support component
        """
        bits = np.array(bits, dtype=int).reshape(-1)
        if bits.size != self.n_components:
            raise ContractError(f"Got {bits.size} bits for {self.n_components} components")
        if np.any((bits != 0) & (bits != 1)):
            raise ContractError("Selector entries must be 0 or 1")
        keep = (self._component_of >= 0) & (np.append(bits, 0)[self._component_of] == 1)
        return IntervalFunction(self._breakpoints, np.where(keep, self._values, 0.0))

    def is_disjoint(self, other: "IntervalFunction") -> bool:
        """f ⊥ g: on every piece of the common partition one of them vanishes identically"""
        points = np.union1d(self._breakpoints, other._breakpoints)
        f_zero = np.abs(self(points)) <= TOLERANCE
        g_zero = np.abs(other(points)) <= TOLERANCE
        return bool(np.all((f_zero[:-1] & f_zero[1:]) | (g_zero[:-1] & g_zero[1:])))

    def __sub__(self, other: "IntervalFunction") -> "IntervalFunction":
        """Difference on the common partition, only defined when it stays nonnegative"""
        points = np.union1d(self._breakpoints, other._breakpoints)
        diff = self(points) - other(points)
        return IntervalFunction(points, np.where(np.abs(diff) <= TOLERANCE, 0.0, diff))

    def __eq__(self, other) -> bool:
        if not isinstance(other, IntervalFunction):
            return NotImplemented
        points = np.union1d(self._breakpoints, other._breakpoints)
        return bool(np.all(np.abs(self(points) - other(points)) <= TOLERANCE))

    __hash__ = None

    def __repr__(self) -> str:
        return f"IntervalFunction(components={self._components})"


class ComponentSelector:
    """
    0-1 sequence indexed by the support components of a base function, encodes one fragment
    """

    def __init__(self, base: IntervalFunction, bits):
        """
        :param base: function f whose fragment is encoded
        :param bits: one 0-1 entry per support component of f
        """
        bits = tuple(int(b) for b in bits)
        if len(bits) != base.n_components:
            raise ContractError(f"Got {len(bits)} bits for {base.n_components} components")
        if any(b not in (0, 1) for b in bits):
            raise ContractError("Selector entries must be 0 or 1")
        self._base: IntervalFunction = base
        self._bits: tuple[int, ...] = bits

    @property
    def base(self) -> IntervalFunction:
        return self._base

    @property
    def bits(self) -> tuple[int, ...]:
        return self._bits

    @property
    def function(self) -> IntervalFunction:
        return self._base.select(self._bits)

    def precedes(self, other: "ComponentSelector") -> bool:
        """Fragment order ⊑ between two fragments of the same base"""
        return all(a <= b for a, b in zip(self._bits, other._bits))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ComponentSelector):
            return NotImplemented
        return self._bits == other._bits and self._base == other._base

    def __hash__(self) -> int:
        return hash(self._bits)

    def __repr__(self) -> str:
        return f"ComponentSelector({''.join(map(str, self._bits))})"


class IntervalFragments:
    """
    Fragments of f in C[0,1]⁺ through their 0-1 encoding, with lateral sup and inf of families
    """

    def __init__(self, f: IntervalFunction):
        self._f: IntervalFunction = f

    @property
    def base(self) -> IntervalFunction:
        return self._f

    @property
    def components(self) -> list[tuple[float, float]]:
        return self._f.support_components

    def select(self, bits) -> IntervalFunction:
        return self._f.select(bits)

    def selector(self, bits) -> ComponentSelector:
        return ComponentSelector(self._f, bits)

    def all_selectors(self) -> list[ComponentSelector]:
        """Every fragment of f, 2**n_components of them"""
        n = self._f.n_components
        return [ComponentSelector(self._f, [(k >> i) & 1 for i in range(n)]) for k in range(2 ** n)]

    def decode(self, g: IntervalFunction) -> ComponentSelector:
        """
        Recovers the 0-1 sequence of a fragment g of f
        :param g: function to decode
        :returns: selector whose realization equals g
        """
        points = np.union1d(self._f.breakpoints, g.breakpoints)
        f_vals, g_vals = self._f(points), g(points)
        bits = []
        covered = np.zeros(points.size, dtype=bool)
        for a, b in self._f.support_components:
            inside = (points >= a) & (points <= b)
            covered |= inside
            if np.all(np.abs(g_vals[inside] - f_vals[inside]) <= TOLERANCE):
                bits.append(1)
            elif np.all(np.abs(g_vals[inside]) <= TOLERANCE):
                bits.append(0)
            else:
                raise ContractError(f"g is not a fragment of f on component ({a}, {b})")
        if np.any(np.abs(g_vals[~covered]) > TOLERANCE):
            raise ContractError("g is nonzero outside the support of f")
        return ComponentSelector(self._f, bits)

    def is_fragment(self, g: IntervalFunction) -> bool:
        try:
            self.decode(g)
        except ContractError:
            return False
        return True

    def _as_selectors(self, family: Iterable) -> list[ComponentSelector]:
        return [g if isinstance(g, ComponentSelector) else self.decode(g) for g in family]

    def family_sup(self, family: Iterable) -> ComponentSelector:
        """
        Lateral supremum: component i is selected iff some member selects it
        :param family: fragments of f, as IntervalFunction or ComponentSelector
        """
        selectors = self._as_selectors(family)
        n = self._f.n_components
        return ComponentSelector(self._f, [int(any(s.bits[i] for s in selectors)) for i in range(n)])

    def family_inf(self, family: Iterable) -> ComponentSelector:
        """
        Lateral infimum: component i is selected iff every member selects it
        The empty family has infimum f
        """
        selectors = self._as_selectors(family)
        n = self._f.n_components
        return ComponentSelector(self._f, [int(all(s.bits[i] for s in selectors)) for i in range(n)])


def interval_fragments(f: IntervalFunction) -> IntervalFragments:
    return IntervalFragments(f)
