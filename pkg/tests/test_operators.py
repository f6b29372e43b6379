import unittest
import numpy as np
from hypothesis import given, settings as hyp_settings, strategies as st
from src.library.lattice import CellGrid, StepElement
from src.library.operators import BandMultiplication, NemytskiiOperator, NormFunctional, OAOperator, RangeSpace, \
    UrysohnOperator, ZeroOperator, check_orthogonal_additivity, operator_from_spec, positive_part_decomposition
from src.library.utils.errors import ContractError, GridMismatchError, NumericError, SpecError, \
    UnsupportedOperationError
from src.library.utils.kernels import NemytskiiFunction, UrysohnKernel, signed_power_nemytskii, sine_kernel


class SquaredSum(OAOperator):
    # (sum x)^2 is not orthogonally additive
    KIND = "squared_sum"

    def __init__(self, grid: CellGrid):
        super().__init__(grid, RangeSpace(1))

    def _evaluate(self, values):
        return np.array([values.sum() ** 2])

    def _cell_images(self, cells, values):
        return (values ** 2)[:, None]

    def to_spec(self):
        return {"kind": self.KIND}


class KernelTests(unittest.TestCase):
    # Test symbolic kernels

    def test_zero_required(self):
        # Test rejection of kernels with K(s, t, 0) != 0
        self.assertRaises(ContractError, UrysohnKernel, "1 + r")
        self.assertRaises(ContractError, NemytskiiFunction, "cos(r)")

    def test_continuity_required(self):
        # Test rejection of a discontinuous Urysohn kernel, Nemytskii functions may jump
        self.assertRaises(ContractError, UrysohnKernel, "sign(r)")
        self.assertEqual(signed_power_nemytskii(0.5).source, "sign(r)*Abs(r)**0.5*(1)")

    def test_unknown_symbol(self):
        # Test SpecError on symbols outside the kernel variables
        self.assertRaises(SpecError, UrysohnKernel, "r*q")

    def test_overflow(self):
        # Test NumericError on overflowing evaluation
        kernel = NemytskiiFunction("exp(r) - 1")
        self.assertRaises(NumericError, kernel, np.array([0.5]), np.array([1e4]))

    def test_parts(self):
        # Test K = K+ - K-
        kernel = sine_kernel(3.0)
        s, t, r = np.meshgrid(np.linspace(0, 1, 5), np.linspace(0, 1, 5), np.linspace(-2, 2, 9))
        self.assertTrue(np.allclose(kernel(s, t, r), kernel.positive_part()(s, t, r) - kernel.negative_part()(s, t, r)))


class OperatorKindTests(unittest.TestCase):
    # Test the four operator kinds

    def setUp(self):
        self.grid = CellGrid.uniform(4)
        self.x = StepElement(self.grid, [1.0, 0.0, -2.0, 0.5])

    def test_norm_functional(self):
        # Test N(x) = sum |x_t| mu_t
        self.assertAlmostEqual(NormFunctional(self.grid).norm_of(self.x), 0.875)

    def test_urysohn_quadrature(self):
        # Test K = r against the midpoint rule
        op = UrysohnOperator(UrysohnKernel("r"), self.grid, CellGrid.uniform(2))
        self.assertTrue(np.allclose(op.evaluate(self.x), [-0.125, -0.125]))

    def test_urysohn_functional(self):
        # Test the one-cell output grid
        op = UrysohnOperator.functional(UrysohnKernel("r**2"), self.grid)
        self.assertEqual(op.range.dim, 1)
        self.assertAlmostEqual(float(op.evaluate(self.x)[0]), 5.25 / 4)

    def test_nemytskii(self):
        # Test pointwise evaluation
        op = NemytskiiOperator(NemytskiiFunction("r**3"), self.grid)
        self.assertTrue(np.allclose(op.evaluate(self.x), [1.0, 0.0, -8.0, 0.125]))

    def test_band_multiplication(self):
        # Test (Tx)_t = w_t x_t^2
        op = BandMultiplication(self.grid, [1.0, 2.0, -1.0, 4.0])
        self.assertTrue(np.allclose(op.evaluate(self.x), [1.0, 0.0, -4.0, 1.0]))

    def test_cell_images_sum(self):
        # Test that the cell images add up to T(x)
        op = UrysohnOperator(UrysohnKernel("r*sin(s + t) + r**2"), self.grid, CellGrid.uniform(3))
        self.assertTrue(np.allclose(op.cell_images(self.x).sum(axis=0), op.evaluate(self.x)))
        self.assertEqual(op.cell_images(self.x).shape, (3, 3))

    def test_grid_mismatch(self):
        # Test GridMismatchError for elements of another grid
        op = NormFunctional(CellGrid.uniform(3))
        self.assertRaises(GridMismatchError, op.evaluate, self.x)

    def test_vector_space(self):
        # Test combinations, scaling and the zero operator
        first = NemytskiiOperator(NemytskiiFunction("r**2"), self.grid)
        second = BandMultiplication(self.grid, np.ones(4))
        self.assertTrue(np.allclose((first - second).evaluate(self.x), 0.0))
        self.assertTrue(np.allclose((2 * first).evaluate(self.x), 2 * first.evaluate(self.x)))
        self.assertTrue(np.allclose(ZeroOperator(self.grid, first.range).evaluate(self.x), 0.0))

    def test_restricted(self):
        # Test S(x) = T(x 1_A)
        op = NormFunctional(self.grid).restrict_input(0b0011)
        self.assertAlmostEqual(op.norm_of(self.x), 0.25)


class AdditivityTests(unittest.TestCase):
    # Test check_orthogonal_additivity

    def test_kinds_pass(self):
        # Test every kind on 1000 trials
        grid = CellGrid.uniform(8)
        for op in (UrysohnOperator(UrysohnKernel("r*(1 + s*t)"), grid, CellGrid.uniform(4)),
                   NemytskiiOperator(NemytskiiFunction("r**3 - r"), grid),
                   NormFunctional(grid),
                   BandMultiplication.from_expression(grid, "1 - 2*t")):
            report = check_orthogonal_additivity(op, 1000, seed=0)
            self.assertTrue(report.passed, op.kind)
            self.assertLessEqual(report.max_violation, 1e-9)

    def test_non_additive_reported(self):
        # Test that a non-additive map is reported, not raised
        report = check_orthogonal_additivity(SquaredSum(CellGrid.uniform(6)), 50, seed=1)
        self.assertFalse(report.passed)
        self.assertGreater(report.max_violation, 1e-3)

    @given(st.integers(min_value=1, max_value=12), st.integers(min_value=0, max_value=2 ** 16))
    @hyp_settings(max_examples=50, deadline=None)
    def test_nemytskii_property(self, n, seed):
        # Test additivity for random grids and seeds
        op = NemytskiiOperator(NemytskiiFunction("r*sin(t) + Abs(r)"), CellGrid.uniform(n))
        self.assertTrue(check_orthogonal_additivity(op, 20, seed=seed).passed)


class PositivePartTests(unittest.TestCase):
    # Test the positive-part decomposition

    def test_band_multiplication(self):
        # Test w = w+ - w-
        grid = CellGrid.uniform(3)
        op = BandMultiplication(grid, [1.0, -2.0, 0.5])
        plus, minus = positive_part_decomposition(op)
        x = StepElement(grid, [1.0, 1.0, 2.0])
        self.assertTrue(np.allclose(plus.evaluate(x) - minus.evaluate(x), op.evaluate(x)))
        self.assertTrue(np.all(plus.weights >= 0) and np.all(minus.weights >= 0))

    def test_urysohn(self):
        # Test K = K+ - K- through the operators
        grid = CellGrid.uniform(5)
        op = UrysohnOperator(UrysohnKernel("r*(s - t)"), grid, CellGrid.uniform(2))
        plus, minus = positive_part_decomposition(op)
        x = StepElement(grid, [1.0, -1.0, 2.0, 0.0, 0.5])
        self.assertTrue(np.allclose(plus.evaluate(x) - minus.evaluate(x), op.evaluate(x)))

    def test_nemytskii_example(self):
        # Test N = -r on x = (1, -2): S1 x = (0, 2) and S2 x = (1, 0)
        grid = CellGrid.uniform(2)
        op = NemytskiiOperator(NemytskiiFunction("-r"), grid)
        plus, minus = positive_part_decomposition(op)
        x = StepElement(grid, [1.0, -2.0])
        self.assertTrue(np.allclose(plus.evaluate(x), [0.0, 2.0]))
        self.assertTrue(np.allclose(minus.evaluate(x), [1.0, 0.0]))
        self.assertTrue(np.allclose(plus.evaluate(x) - minus.evaluate(x), op.evaluate(x)))

    def test_parts_nonnegative(self):
        # Test S1, S2 >= -1e-12 and S1 - S2 = T on 100 random inputs
        grid = CellGrid.uniform(6)
        rng = np.random.default_rng(3)
        operators = (UrysohnOperator(UrysohnKernel("r*(s - t)"), grid, CellGrid.uniform(3)),
                     UrysohnOperator(UrysohnKernel("sin(3*r)*cos(s + t)"), grid, CellGrid.uniform(4)),
                     NemytskiiOperator(NemytskiiFunction("r*sin(t) - r**3"), grid))
        for op in operators:
            plus, minus = positive_part_decomposition(op)
            for _ in range(100):
                x = StepElement(grid, 2 * rng.normal(size=grid.n_cells))
                self.assertGreaterEqual(float(np.min(plus.evaluate(x))), -1e-12, op.kind)
                self.assertGreaterEqual(float(np.min(minus.evaluate(x))), -1e-12, op.kind)
                self.assertTrue(np.allclose(plus.evaluate(x) - minus.evaluate(x), op.evaluate(x)))

    def test_unsupported(self):
        # Test UnsupportedOperationError for the norm functional
        self.assertRaises(UnsupportedOperationError, positive_part_decomposition, NormFunctional(CellGrid.uniform(2)))


class OperatorSpecTests(unittest.TestCase):
    # Test operator_from_spec

    def test_roundtrip(self):
        # Test that to_spec rebuilds an equal operator
        grid = CellGrid.uniform(4)
        op = UrysohnOperator(UrysohnKernel("r**2*(1 + s)"), grid, CellGrid.uniform(2), "l1")
        self.assertEqual(operator_from_spec(op.to_spec()), op)

    def test_grid_from_caller(self):
        # Test that a spec without input_grid takes the given grid
        op = operator_from_spec({"kind": "nemytskii", "kernel": "r**2"}, CellGrid.uniform(6))
        self.assertEqual(op.range.dim, 6)

    def test_errors(self):
        # Test SpecError with the field path
        grid = CellGrid.uniform(2)
        with self.assertRaises(SpecError) as ctx:
            operator_from_spec({"kind": "teapot"}, grid)
        self.assertEqual(ctx.exception.field, "operator.kind")
        self.assertRaises(SpecError, operator_from_spec, {"kind": "urysohn"}, grid)
        self.assertRaises(SpecError, operator_from_spec, {"kind": "nemytskii", "kernel": "1 + r"}, grid)
        self.assertRaises(SpecError, operator_from_spec, {"kind": "norm_functional", "range": {"dim": 3}}, grid)


if __name__ == "__main__":
    unittest.main()
