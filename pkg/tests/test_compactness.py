import unittest
import numpy as np
from src.library.compactness import am_compact_probe, c_compact_net, empty_chain, fragment_band_probe, \
    fragment_images, halving_chain, lateral_vanishing_check, net_covers, recentre, validate_chain
from src.library.lattice import CellGrid, FragmentMask, StepElement
from src.library.operators import NemytskiiOperator, NormFunctional, UrysohnOperator
from src.library.utils.errors import ContractError, SupportTooLargeError
from src.library.utils.kernels import NemytskiiFunction, UrysohnKernel

SINGULAR = "Piecewise((0, Eq(r, 0)), (r**(-2), True))"


class EpsNetTests(unittest.TestCase):
    # Test c_compact_net

    def setUp(self):
        self.grid = CellGrid.uniform(8)
        self.x = StepElement.constant(self.grid, 1.0)
        self.op = NormFunctional(self.grid)

    def test_norm_functional_net(self):
        # Test the 9 image values k/8 covered at 0.3
        _, images = fragment_images(self.op, self.x)
        self.assertEqual(sorted(set(np.round(images[:, 0] * 8).astype(int).tolist())), list(range(9)))
        net = c_compact_net(self.op, self.x, 0.3)
        self.assertEqual(net.size, 2)
        self.assertEqual(sorted(float(c[0]) for _, c in net.centers), [0.25, 0.75])
        self.assertEqual(net.covered_fraction, 1.0)
        self.assertEqual(net_covers(net, images, self.op.range.metric), 1.0)

    def test_zero_element(self):
        # Test that x = 0 gives the net {0}
        net = c_compact_net(self.op, StepElement.zeros(self.grid), 0.1)
        self.assertEqual(net.size, 1)
        self.assertEqual(float(net.centers[0][1][0]), 0.0)

    def test_monotone_in_epsilon(self):
        # Test net sizes never grow with epsilon
        op = UrysohnOperator(UrysohnKernel("r**2*(1 + s)"), self.grid, CellGrid.uniform(4))
        sizes = [c_compact_net(op, self.x, eps).size for eps in (0.02, 0.05, 0.1, 0.2, 0.5)]
        self.assertEqual(sizes, sorted(sizes, reverse=True))

    def test_recentred_clusters(self):
        # Test a single cluster moves to its midpoint member and two clusters to their own midpoints
        images = np.arange(9, dtype=float)[:, None] / 8
        centers, radius = recentre(images, np.zeros(9, dtype=int), "chebyshev")
        self.assertEqual(centers.tolist(), [4])
        self.assertEqual(radius, 0.5)
        centers, radius = recentre(images, (images[:, 0] > 0.5).astype(int), "chebyshev")
        self.assertEqual(centers.tolist(), [2, 6])
        self.assertEqual(radius, 0.25)

    def test_norm_functional_sizes(self):
        # Test net sizes 1, 2, 2, 3 of the norm functional on 8 cells
        sizes = [c_compact_net(self.op, self.x, eps).size for eps in (0.5, 0.3, 0.25, 0.2)]
        self.assertEqual(sizes, [1, 2, 2, 3])

    def test_sampled(self):
        # Test sampled mode on a support above the exhaustive cap
        grid = CellGrid.uniform(30)
        op = NormFunctional(grid)
        x = StepElement.constant(grid, 1.0)
        self.assertRaises(SupportTooLargeError, c_compact_net, op, x, 0.1)
        first = c_compact_net(op, x, 0.1, mode="sampled", k=128, seed=4)
        second = c_compact_net(op, x, 0.1, mode="sampled", k=128, seed=4)
        self.assertEqual([m.bits for m, _ in first.centers], [m.bits for m, _ in second.centers])
        self.assertGreater(first.covered_fraction, 0.0)

    def test_invalid_epsilon(self):
        # Test ContractError for nonpositive epsilon
        self.assertRaises(ContractError, c_compact_net, self.op, self.x, 0.0)


class AMProbeTests(unittest.TestCase):
    # Test am_compact_probe

    def test_singular_scalar(self):
        # Test 1/r^2: fragment images {0, 1} but order interval images unbounded
        grid = CellGrid.uniform(1)
        op = NemytskiiOperator(NemytskiiFunction(SINGULAR), grid)
        _, images = fragment_images(op, StepElement.constant(grid, 1.0))
        self.assertEqual(sorted(images[:, 0].tolist()), [0.0, 1.0])
        report = am_compact_probe(op, (StepElement.zeros(grid), StepElement.constant(grid, 1.0)), 0.5, k=64, seed=0)
        self.assertTrue(report.unbounded)

    def test_norm_functional_bounded(self):
        # Test images of [0, 1] under the norm functional stay in [0, 1]
        grid = CellGrid.uniform(4)
        report = am_compact_probe(NormFunctional(grid), (StepElement.zeros(grid), StepElement.constant(grid, 1.0)),
                                  0.1, k=64, seed=0)
        self.assertFalse(report.unbounded)
        self.assertLessEqual(report.max_norm, 1.0)

    def test_bad_interval(self):
        # Test ContractError for lower > upper
        grid = CellGrid.uniform(2)
        self.assertRaises(ContractError, am_compact_probe, NormFunctional(grid), (StepElement.constant(grid, 1.0),
                          StepElement.zeros(grid)), 0.1)


class LateralVanishingTests(unittest.TestCase):
    # Test lateral_vanishing_check

    def setUp(self):
        self.grid = CellGrid.uniform(16)
        self.x = StepElement.constant(self.grid, 1.0)

    def test_norm_functional(self):
        # Test |T y_n| = measure(y_n) along the halving chain
        report = lateral_vanishing_check(NormFunctional(self.grid), self.x, halving_chain, steps=4, delta=0.1)
        self.assertEqual(report.norms, report.measures)
        self.assertEqual(report.measures, [1.0, 0.5, 0.25, 0.125, 0.0625])
        self.assertEqual(report.first_below, 4)

    def test_urysohn_bound(self):
        # Test |T y_n| <= |w| * measure(y_n) for K = r w
        op = UrysohnOperator(UrysohnKernel("r*(1 + s*t)"), self.grid, CellGrid.uniform(4))
        report = lateral_vanishing_check(op, self.x, steps=4)
        for norm, measure in zip(report.norms, report.measures):
            self.assertLessEqual(norm, 2.0 * measure + 1e-12)

    def test_empty_chain(self):
        # Test the empty chain gives zeros
        report = lateral_vanishing_check(NormFunctional(self.grid), self.x, empty_chain, steps=3)
        self.assertEqual(report.norms, [0.0] * 4)

    def test_not_nested(self):
        # Test ContractError for a chain that grows
        chain = [FragmentMask(self.x, 0b1), FragmentMask(self.x, 0b11)]
        self.assertRaises(ContractError, validate_chain, chain)


class BandProbeTests(unittest.TestCase):
    # Test fragment_band_probe

    def setUp(self):
        self.grid = CellGrid.uniform(8)
        self.op = UrysohnOperator(UrysohnKernel("r*(1 + s*t)"), self.grid, CellGrid.uniform(4))
        self.x = StepElement.constant(self.grid, 1.0)

    def test_restricted_fragment(self):
        # Test finite nets for T and an input restriction of T
        report = fragment_band_probe(self.op, self.op.restrict_input(0b11110000), self.x, 0.1, seed=0)
        self.assertTrue(report.finite)
        self.assertGreaterEqual(report.operator_net_size, 1)
        self.assertLessEqual(report.max_overlap, 1e-9)

    def test_identical(self):
        # Test S = T gives identical nets
        report = fragment_band_probe(self.op, self.op, self.x, 0.1, seed=0)
        self.assertEqual(report.operator_net_size, report.fragment_net_size)

    def test_not_fragment(self):
        # Test ContractError for S = T/2
        self.assertRaises(ContractError, fragment_band_probe, self.op, 0.5 * self.op, self.x, 0.1)


if __name__ == "__main__":
    unittest.main()
