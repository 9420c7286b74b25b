import numpy as np
from django.test import SimpleTestCase

from macrates.exceptions import DomainError
from macrates.utility import AlphaFairUtility, Utility, alpha_fair_gradient, alpha_fair_value


class AlphaFairScalarTests(SimpleTestCase):
    """
    Tests for the scalar alpha-fair family and its derivative.
    """

    def test_values(self):
        """Hand-computed values, including the log branch at alpha = 1."""
        self.assertEqual(alpha_fair_value(1.0, 1.0, 1.0), 0.0)
        self.assertAlmostEqual(alpha_fair_value(2.0, 2.0, 1.0), -0.5, places=12)
        self.assertAlmostEqual(alpha_fair_value(4.0, 0.5, 2.0), 8.0, places=12)

    def test_gradients(self):
        """Derivatives are w / x^alpha."""
        self.assertAlmostEqual(alpha_fair_gradient(2.0, 2.0, 1.0), 0.25, places=12)
        self.assertAlmostEqual(alpha_fair_gradient(1.0, 3.0, 5.0), 5.0, places=12)
        self.assertAlmostEqual(alpha_fair_gradient(0.1, 1.0, 1.0), 10.0, places=9)

    def test_negative_alpha(self):
        """Alpha below zero is outside the family."""
        with self.assertRaises(DomainError):
            alpha_fair_value(1.0, -0.1)
        with self.assertRaises(DomainError):
            alpha_fair_gradient(1.0, -2.0)

    def test_floor_keeps_zero_finite(self):
        """A zero rate is evaluated at the floor instead of diverging."""
        self.assertTrue(np.isfinite(alpha_fair_value(0.0, 2.0)))
        self.assertAlmostEqual(alpha_fair_gradient(0.0, 1.0), 1e9, delta=1e-3)

    def test_gradient_matches_central_differences(self):
        """The closed-form derivative agrees with finite differences across alphas."""
        h = 1e-6
        for alpha in (0.0, 0.5, 1.0, 2.0, 3.0):
            for x in np.linspace(0.01, 10.0, 25):
                with self.subTest(alpha=alpha, x=x):
                    numeric = (alpha_fair_value(x + h, alpha, 1.3) - alpha_fair_value(x - h, alpha, 1.3)) / (2 * h)
                    exact = alpha_fair_gradient(x, alpha, 1.3)
                    self.assertLessEqual(abs(numeric - exact), 1e-5 * abs(exact))


class AlphaFairUtilityTests(SimpleTestCase):
    """Weighted vector utilities."""

    def test_validation(self):
        """Zero weights, negative alpha and wrong-length rate vectors raise."""
        with self.assertRaises(DomainError):
            AlphaFairUtility(1.0, (1.0, 0.0))
        with self.assertRaises(DomainError):
            AlphaFairUtility(-1.0, (1.0,))
        with self.assertRaises(DomainError):
            AlphaFairUtility(1.0, (1.0,)).value([1.0, 2.0])

    def test_vector_matches_scalar_family(self):
        """The vector value and gradient are sums of the scalar terms."""
        utility = AlphaFairUtility(2.0, (1.5, 1.0))
        rates = [0.6, 0.49]
        self.assertAlmostEqual(
            utility.value(rates),
            alpha_fair_value(0.6, 2.0, 1.5) + alpha_fair_value(0.49, 2.0, 1.0),
            places=12,
        )
        np.testing.assert_allclose(
            utility.gradient(rates), [alpha_fair_gradient(0.6, 2.0, 1.5), alpha_fair_gradient(0.49, 2.0, 1.0)]
        )
        self.assertIsInstance(utility, Utility)

    def test_concavity_on_random_chords(self):
        """The utility on a chord never falls below the chord itself."""
        rng = np.random.default_rng(0)
        for alpha in (0.0, 0.5, 1.0, 2.0, 4.0):
            utility = AlphaFairUtility(alpha, (1.0, 2.0, 0.5))
            for _ in range(200):
                x, y = rng.uniform(1e-3, 5.0, (2, 3))
                lam = rng.uniform(0.0, 1.0)
                mixed = utility.value(lam * x + (1 - lam) * y)
                self.assertGreaterEqual(mixed, lam * utility.value(x) + (1 - lam) * utility.value(y) - 1e-9)

    def test_linear_constructor(self):
        """alpha = 0 gives the weighted sum with a constant gradient."""
        utility = AlphaFairUtility.linear((2.0, 1.0))
        self.assertAlmostEqual(utility.value([0.5, 0.25]), 1.25, places=12)
        np.testing.assert_array_equal(utility.gradient([3.0, 0.0]), [2.0, 1.0])
