"""
Symbolic kernel families for Urysohn and Nemytskii operators
Kernels are closed sympy expressions, so K(s,t,0)=0 and continuity in r can be checked and specs round-trip exactly
"""
import logging
from functools import reduce
import numpy as np
import sympy as sp
from .errors import ContractError, NumericError, SpecError

kernels_logger = logging.getLogger("kernels")
kernels_logger.setLevel(logging.DEBUG)
kernels_logger.addHandler(logging.NullHandler())

S, T, R = sp.symbols("s t r", real=True)
_LOCALS = {"s": S, "t": T, "r": R}

# Atoms that may break continuity in r
_DISCONTINUOUS = (sp.sign, sp.floor, sp.ceiling, sp.Heaviside, sp.frac, sp.Piecewise)


def _max_to_abs(*args):
    return reduce(lambda a, b: (a + b + sp.Abs(a - b)) / 2, args)


def _min_to_abs(*args):
    return reduce(lambda a, b: (a + b - sp.Abs(a - b)) / 2, args)


class SymbolicKernel:
    """
    Expression in a fixed set of variables with r the value variable, stored with its source text
    """

    VARIABLES: tuple = (S, T, R)
    REQUIRE_ZERO: bool = True
    REQUIRE_CONTINUITY: bool = True

    def __init__(self, source: str):
        """
        :param source: sympy-parsable text, e.g. "r**2" or "r*(1 + s*t)"
        """
        try:
            expr = sp.sympify(source, locals=_LOCALS)
        except (sp.SympifyError, SyntaxError, TypeError) as e:
            raise SpecError(f"Cannot parse kernel {source!r}: {e}", field="kernel")
        unknown = expr.free_symbols - set(self.VARIABLES)
        if unknown:
            raise SpecError(f"Kernel {source!r} uses unknown symbols {sorted(map(str, unknown))}", field="kernel")

        self._source: str = source
        self._expr: sp.Expr = expr
        # Max/Min are rewritten through Abs so numpy broadcasting works for mixed scalar/array arguments
        numeric = expr.replace(sp.Max, _max_to_abs).replace(sp.Min, _min_to_abs)
        self._func = sp.lambdify(self.VARIABLES, numeric, modules="numpy")

        if self.REQUIRE_ZERO and not self.vanishes_at_zero():
            raise ContractError(f"Kernel {source!r} does not vanish at r = 0")
        if self.REQUIRE_CONTINUITY and not self.is_continuous_in_r():
            raise ContractError(f"Kernel {source!r} is not continuous in r")

    @property
    def source(self) -> str:
        return self._source

    @property
    def expression(self) -> sp.Expr:
        return self._expr

    def vanishes_at_zero(self) -> bool:
        """Symbolic check of K(.., 0) = 0, confirmed exactly on a 10x10 sample of the other variables"""
        if sp.simplify(self._expr.subs(R, 0)) != 0:
            return False
        mesh = np.meshgrid(*[np.linspace(0.0, 1.0, 10) for _ in self.VARIABLES[:-1]], indexing="ij")
        with np.errstate(divide="ignore", invalid="ignore"):
            values = np.broadcast_to(np.asarray(self._func(*mesh, np.zeros(mesh[0].shape)), dtype=float),
                                     mesh[0].shape)
        return bool(np.all(values == 0.0))

    def is_continuous_in_r(self) -> bool:
        """Conservative: rejects discontinuous atoms and negative powers of expressions in r"""
        if self._expr.has(*_DISCONTINUOUS) or self._expr.has(sp.zoo, sp.nan):
            return False
        for power in self._expr.atoms(sp.Pow):
            if power.base.has(R) and power.exp.is_negative is not False:
                return False
        return True

    def __call__(self, *args) -> np.ndarray:
        """
        Vectorized evaluation with numpy broadcasting
        :param args: arrays for the kernel variables, in order
        :returns: array of the broadcast shape
        """
        shape = np.broadcast(*args).shape
        try:
            with np.errstate(over="raise", divide="ignore", invalid="ignore"):
                out = self._func(*args)
        except FloatingPointError as e:
            raise NumericError(f"Kernel {self._source!r} overflowed: {e}")
        out = np.broadcast_to(np.asarray(out, dtype=float), shape)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"Kernel {self._source!r} produced non-finite values")
        return out

    def positive_part(self) -> "SymbolicKernel":
        """K⁺ = (K + |K|)/2 pointwise"""
        return type(self)(str((self._expr + sp.Abs(self._expr)) / 2))

    def negative_part(self) -> "SymbolicKernel":
        """K⁻ = (|K| - K)/2 pointwise"""
        return type(self)(str((sp.Abs(self._expr) - self._expr) / 2))

    def __eq__(self, other) -> bool:
        if not isinstance(other, SymbolicKernel):
            return NotImplemented
        return type(self) is type(other) and self._source == other._source

    def __hash__(self) -> int:
        return hash((type(self).__name__, self._source))

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self._source!r})"


class UrysohnKernel(SymbolicKernel):
    """K(s, t, r), continuous in r with K(s, t, 0) = 0"""

    VARIABLES = (S, T, R)
    REQUIRE_CONTINUITY = True


class NemytskiiFunction(SymbolicKernel):
    """N(t, r) with N(t, 0) = 0, continuity in r is not required"""

    VARIABLES = (T, R)
    REQUIRE_CONTINUITY = False


class CoefficientFunction(SymbolicKernel):
    """w(t), a plain coefficient with no condition at zero"""

    VARIABLES = (T,)
    REQUIRE_ZERO = False
    REQUIRE_CONTINUITY = False


# region family constructors

def polynomial_kernel(coefficients: list[str]) -> UrysohnKernel:
    """
    sum_k c_k(s, t) * r**k for k = 1..len(coefficients)
    :param coefficients: coefficient expressions in s and t
    """
    terms = [f"({c})*r**{k}" for k, c in enumerate(coefficients, start=1)]
    return UrysohnKernel(" + ".join(terms) if terms else "0")


def sine_kernel(c: float) -> UrysohnKernel:
    return UrysohnKernel(f"r*sin({c!r}*s*t*r)")


def weighted_square_kernel(weight: str) -> UrysohnKernel:
    return UrysohnKernel(f"r**2*({weight})")


def weighted_linear_kernel(weight: str) -> UrysohnKernel:
    return UrysohnKernel(f"r*({weight})")


def linear_nemytskii(g: str = "1") -> NemytskiiFunction:
    return NemytskiiFunction(f"r*({g})")


def signed_power_nemytskii(p: float, g: str = "1") -> NemytskiiFunction:
    return NemytskiiFunction(f"sign(r)*Abs(r)**{p!r}*({g})")


def clipped_nemytskii(c: float, g: str = "1") -> NemytskiiFunction:
    return NemytskiiFunction(f"Max({-c!r}, Min({c!r}, r))*({g})")

# endregion
