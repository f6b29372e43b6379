import unittest
from unittest import mock
import numpy as np
from hypothesis import given, settings as hyp_settings, strategies as st
from src.library.utils.errors import ContractError, SupportTooLargeError
from src.library.utils.rounding import RoundingProblem, round_weights


class RoundingProblemTests(unittest.TestCase):
    # Test RoundingProblem validation and bound

    def test_invalid(self):
        # Test weights outside [0, 1], count mismatch and unknown norms
        self.assertRaises(ContractError, RoundingProblem, [[1.0]], [1.5])
        self.assertRaises(ContractError, RoundingProblem, [[1.0], [2.0]], [0.5])
        self.assertRaises(ContractError, RoundingProblem, [[1.0]], [0.5], "l7")

    def test_bound(self):
        # Test (dim/2) * max |v_i| with an explicit subspace dimension
        problem = RoundingProblem([[3.0, 4.0], [1.0, 0.0]], [0.5, 0.5], "l2")
        self.assertAlmostEqual(problem.bound(), 5.0)
        self.assertAlmostEqual(RoundingProblem([[3.0, 4.0]], [0.5], "l2", dim=1).bound(), 2.5)


class RoundWeightsTests(unittest.TestCase):
    # Test round_weights strategies

    def test_example(self):
        # Test two equal vectors at weight 1/2
        result = round_weights(RoundingProblem([[1.0, 0.0], [1.0, 0.0]], [0.5, 0.5], "sup"), "brute")
        self.assertEqual(result.theta.tolist(), [1, 0])
        self.assertEqual(result.residual_norm, 0.0)

    def test_already_integral(self):
        # Test that 0-1 weights are returned unchanged
        for strategy in ("brute", "greedy_nullspace", "sequential"):
            result = round_weights(RoundingProblem(np.eye(3), [1.0, 0.0, 1.0]), strategy)
            self.assertEqual(result.theta.tolist(), [1, 0, 1])
            self.assertEqual(result.residual_norm, 0.0)

    def test_brute_cap(self):
        # Test SupportTooLargeError above the brute-force cap
        problem = RoundingProblem(np.ones((23, 1)), np.full(23, 0.5))
        self.assertRaises(SupportTooLargeError, round_weights, problem, "brute")

    def test_unknown_strategy(self):
        # Test ContractError for an unknown strategy
        self.assertRaises(ContractError, round_weights, RoundingProblem([[1.0]], [0.5]), "random")

    def test_greedy_twelve_vectors(self):
        # Test 12 random vectors in R^3: greedy within 1.5 max|v_i| and not below brute
        rng = np.random.default_rng(7)
        for norm_kind in ("sup", "l1", "l2"):
            problem = RoundingProblem(rng.normal(size=(12, 3)), rng.random(12), norm_kind)
            greedy = round_weights(problem, "greedy_nullspace", seed=0)
            brute = round_weights(problem, "brute")
            self.assertLessEqual(greedy.residual_norm, 1.5 * float(np.max(problem.norm(problem.vectors))) + 1e-12)
            self.assertGreaterEqual(greedy.residual_norm, brute.residual_norm - 1e-12)

    def test_greedy_deterministic(self):
        # Test that a fixed seed gives a fixed theta
        rng = np.random.default_rng(11)
        problem = RoundingProblem(rng.normal(size=(15, 4)), rng.random(15), "l2")
        first = round_weights(problem, "greedy_nullspace", seed=3)
        second = round_weights(problem, "greedy_nullspace", seed=3)
        self.assertEqual(first.theta.tolist(), second.theta.tolist())

    def test_sequential_alternates(self):
        # Test equal vectors at weight 1/2 alternate 0, 1, 0, 1 and cancel
        result = round_weights(RoundingProblem(np.ones((4, 1)), np.full(4, 0.5)), "sequential")
        self.assertEqual(result.theta.tolist(), [0, 1, 0, 1])
        self.assertEqual(result.residual_norm, 0.0)

    def test_sequential_ignores_seed(self):
        # Test that the sequential rounding does not depend on the seed
        rng = np.random.default_rng(5)
        problem = RoundingProblem(rng.normal(size=(30, 3)), rng.random(30), "sup")
        first = round_weights(problem, "sequential", seed=1)
        second = round_weights(problem, "sequential", seed=2)
        self.assertEqual(first.theta.tolist(), second.theta.tolist())

    def test_sequential_fallback(self):
        # Test the null-space walk takes over when the sequential pass misses the bound
        problem = RoundingProblem(np.ones((6, 1)), np.full(6, 0.5))
        with mock.patch("src.library.utils.rounding._sequential", return_value=np.ones(6)):
            result = round_weights(problem, "sequential", seed=0)
        self.assertLessEqual(result.residual_norm, problem.bound())
        self.assertEqual(result.residual_norm, 0.0)

    @given(st.integers(min_value=1, max_value=14), st.integers(min_value=1, max_value=5),
           st.sampled_from(["sup", "l1", "l2"]), st.integers(min_value=0, max_value=2 ** 32 - 1))
    @hyp_settings(max_examples=100, deadline=None)
    def test_bound_property(self, n, dim, norm_kind, seed):
        # Test every strategy stays within (dim/2) max|v_i|
        rng = np.random.default_rng(seed)
        problem = RoundingProblem(rng.normal(size=(n, dim)), rng.random(n), norm_kind)
        for strategy in ("brute", "greedy_nullspace", "sequential"):
            result = round_weights(problem, strategy, seed=seed)
            self.assertLessEqual(result.residual_norm, problem.bound() * (1 + 1e-12) + 1e-12)
            self.assertTrue(set(result.theta.tolist()) <= {0, 1})


if __name__ == "__main__":
    unittest.main()
